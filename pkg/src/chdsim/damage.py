"""Incremental damage step and its optimality diagnostics.

Damage evolves by unidirectional minimization: each step solves

    min  int( (1/p)|grad z|^p + (g(z)+eps) phi(c, e) + f(z) )
         + 1/(2 tau) ||z - z_prev||^2_{L2}
    s.t. 0 <= z <= z_prev   (nodewise),

with (c, e) frozen at the current step.  The upper bound encodes
irreversibility, the lower bound completeness (material can be fully
destroyed).  The constraint activity is reported through two residuals:
a one-sided variational inequality tested with nonpositive nodal hats
where z is still positive, and a nodal defect field supported on the
destroyed set where the equation is allowed to leave a nonpositive
remainder.
"""

from __future__ import annotations

import numpy as np

from . import material as mat
from .errors import SolverError
from .grid import (
    GridSpec,
    ScalarField,
    VectorField,
    p_laplacian_gradient,
    strain_or_zero,
)

_PG_MAX_ITER = 5000
_PG_REL_TOL = 1.0e-10
_BB_MIN, _BB_MAX = 1.0e-12, 1.0e12


def _phi_at_quads(grid, c, u, model, region_cells):
    e_q = strain_or_zero(grid, u, region_cells)
    return mat.phi(model, grid.at_quads(c.values), e_q)


def _hat_w1p_norms(grid: GridSpec, p: float) -> np.ndarray:
    """||N_i||_{W^{1,p}} for every nodal hat, by the cell quadrature."""
    n_contrib = grid.quad_w * np.sum(np.abs(grid.shape_n) ** p, axis=0)
    g_mag = np.sqrt(grid.shape_dx**2 + grid.shape_dy**2)
    g_contrib = grid.quad_w * np.sum(g_mag**p, axis=0)
    acc = np.zeros(grid.n_nodes)
    # np.add.at mishandles values that need broadcasting against a 2-D
    # index array; pass the expanded array explicitly.
    np.add.at(acc, grid.conn, np.broadcast_to(n_contrib + g_contrib, grid.conn.shape))
    return acc ** (1.0 / p)


def step_damage(
    c: ScalarField,
    u: VectorField,
    z_prev: ScalarField,
    model: mat.MaterialModel,
    reg: mat.RegularizationParams,
    region_cells=None,
) -> ScalarField:
    """One incremental minimization step for the damage field.

    Returns the minimizer over the box [0, z_prev].  Projected gradient
    descent with Barzilai-Borwein steps and an Armijo backtracking line
    search; for the linear g and f of the standard model the problem is
    strictly convex, so the local criterion certifies the global
    minimizer.
    """
    grid = z_prev.grid
    tau, eps, p = reg.tau, reg.epsilon, reg.p
    phi_q = _phi_at_quads(grid, c, u, model, region_cells)
    m_mass = grid.mass_matrix()
    lower = np.zeros(grid.n_nodes)
    upper = z_prev.values

    def objective(z):
        g_z = grid.grads_at_quads(z)
        z_q = grid.at_quads(z)
        dens = (
            (1.0 / p) * np.sum(g_z * g_z, axis=-1) ** (p / 2.0)
            + (model.g(z_q) + eps) * phi_q
            + model.f(z_q)
        )
        dz = z - upper
        return grid.integrate_quads(dens) + (dz @ (m_mass @ dz)) / (2.0 * tau)

    def gradient(z):
        z_q = grid.at_quads(z)
        dens = model.g_prime(z_q) * phi_q + model.f_prime(z_q)
        return (
            p_laplacian_gradient(grid, z, p)
            + grid.scatter_quads(dens)
            + (m_mass @ (z - upper)) / tau
        )

    z = upper.copy()
    j_val = objective(z)
    grad = gradient(z)
    tol = _PG_REL_TOL * (1.0 + abs(j_val))
    step = 1.0 / max(1.0, np.abs(grad).max())

    z_old = None
    grad_old = None
    for _ in range(_PG_MAX_ITER):
        pg = z - np.clip(z - grad, lower, upper)
        if np.abs(pg).max() <= tol:
            return ScalarField(grid, z)
        if z_old is not None:
            dz = z - z_old
            dg = grad - grad_old
            curv = dz @ dg
            if curv > 0.0:
                step = min(max((dz @ dz) / curv, _BB_MIN), _BB_MAX)
        moved = False
        for _ in range(60):
            z_try = np.clip(z - step * grad, lower, upper)
            # a step too small to change any node passes Armijo vacuously;
            # treat it as a stall, not progress
            if not np.array_equal(z_try, z):
                j_try = objective(z_try)
                direction = grad @ (z_try - z)
                if j_try <= j_val + 1.0e-4 * direction:
                    moved = True
                    break
            step *= 0.5
        if not moved:
            # No descent left at machine scale: accept if stationary.
            if np.abs(pg).max() <= 10.0 * tol:
                return ScalarField(grid, z)
            raise SolverError(
                "damage line search stalled before reaching stationarity",
                substep="damage",
            )
        z_old, grad_old = z, grad
        z, j_val = z_try, j_try
        grad = gradient(z)
    raise SolverError(
        f"damage minimization did not converge in {_PG_MAX_ITER} iterations",
        substep="damage",
    )


def vi_residual(
    c: ScalarField,
    u: VectorField,
    z_new: ScalarField,
    z_prev: ScalarField,
    model: mat.MaterialModel,
    reg: mat.RegularizationParams,
    region_cells=None,
) -> float:
    """Violation of the one-sided inequality at nodes with z > z_tol.

    For each nodal hat N_i with z_new_i above the destruction threshold,
    the direction -N_i is admissible, so the step functional must not
    decrease along it:

        int |grad z|^{p-2} grad z . grad zeta
            + (W_z + f'(z) + (z_new - z_prev)/tau) zeta  >=  0,
        zeta = -N_i.

    Returns the worst violation normalized by ||N_i||_{W^{1,p}}; zero
    when no node qualifies.
    """
    grid = z_new.grid
    tau, p = reg.tau, reg.p
    test = z_new.values > reg.z_tol
    if not test.any():
        return 0.0

    phi_q = _phi_at_quads(grid, c, u, model, region_cells)
    z_q = grid.at_quads(z_new.values)
    dens = model.g_prime(z_q) * phi_q + model.f_prime(z_q)
    grad = (
        p_laplacian_gradient(grid, z_new.values, p)
        + grid.scatter_quads(dens)
        + (grid.mass_matrix() @ (z_new.values - z_prev.values)) / tau
    )
    norms = _hat_w1p_norms(grid, p)
    violation = np.maximum(grad[test], 0.0) / norms[test]
    return float(violation.max())


def residual_r(
    c: ScalarField,
    u: VectorField,
    z: ScalarField,
    model: mat.MaterialModel,
    reg: mat.RegularizationParams,
    region_cells=None,
) -> ScalarField:
    """Nodal defect carried by the destroyed set {z <= z_tol}.

    Where the material is gone, the damage equation only holds up to a
    nonpositive remainder r = -max(0, W_z + f'(z)), the force that would
    keep driving z below zero.  Values are nodal averages (lumped
    projection of the driving density); nodes with z > z_tol carry 0.
    """
    grid = z.grid
    phi_q = _phi_at_quads(grid, c, u, model, region_cells)
    z_q = grid.at_quads(z.values)
    dens = model.g_prime(z_q) * phi_q + model.f_prime(z_q)
    nodal = grid.scatter_quads(dens) / grid.lumped_node_volumes()
    r = np.where(z.values <= reg.z_tol, -np.maximum(nodal, 0.0), 0.0)
    return ScalarField(grid, r)


def damage_dissipation_increment(
    z_new: ScalarField, z_prev: ScalarField, tau: float
) -> float:
    """Viscous dissipation ||z_new - z_prev||^2_{L2} / tau for one step.

    With the step taken by minimization and the energy convex in z, this
    full increment (not half) is covered by the energy drop, so the sum
    of these increments is a valid dissipation tally.
    """
    dz = z_new.values - z_prev.values
    m_mass = z_new.grid.mass_matrix()
    return float(dz @ (m_mass @ dz)) / tau
