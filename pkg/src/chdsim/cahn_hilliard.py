"""Semi-implicit mixed step for the degenerate diffusion pair (c, mu).

One step solves the Galerkin system

    (c - c_prev)/tau = div( m^eps(z_mob) grad mu ),
    mu = -lap c + Psi'_vex(c) + Psi'_cave(c_prev) + W_c(c, e, z_en)
         + delta (c - c_prev)/tau,

with the mobility lagged at the previous damage state and natural
boundary conditions for both fields, so the total concentration is a
conserved quantity.  The convex part of Psi' is implicit and the concave
part explicit, which makes every step uniquely solvable and the discrete
free energy nonincreasing regardless of the step size; that decrease is
asserted at runtime rather than assumed.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import material as mat
from .errors import SolverError, VerificationError
from .grid import GridSpec, ScalarField, VectorField, strain_or_zero

_NEWTON_ABS_TOL = 1.0e-10
_NEWTON_MAX_ITER = 50


def _coupling_density(model, c_q, e_q, z_q, eps):
    """W_c at quadrature points."""
    _, _, w_c, _ = mat.w_and_derivatives(model, c_q, e_q, z_q, eps)
    return w_c


def ch_free_energy(
    grid: GridSpec,
    c_values: np.ndarray,
    e_q: np.ndarray,
    z_en_q: np.ndarray,
    model: mat.MaterialModel,
    eps: float,
) -> float:
    """Concentration part of the free energy at frozen (e, z)."""
    c_q = grid.at_quads(c_values)
    g_c = grid.grads_at_quads(c_values)
    density = (
        0.5 * np.sum(g_c * g_c, axis=-1)
        + model.psi(c_q)
        + (model.g(z_en_q) + eps) * mat.phi(model, c_q, e_q)
    )
    return grid.integrate_quads(density)


def step_ch(
    c_prev: ScalarField,
    z_mob: ScalarField,
    u: VectorField,
    z_en: ScalarField,
    model: mat.MaterialModel,
    reg: mat.RegularizationParams,
    region_cells=None,
):
    """Advance the concentration/potential pair by one step of size tau.

    Returns (c, mu).  ``region_cells`` marks the admissible region; the
    strain entering the coupling term is zeroed outside it so sentinel
    displacement values are never read.  Raises SolverError if the damped
    Newton iteration stalls, VerificationError if the step fails to
    decrease its own energy budget.
    """
    grid = c_prev.grid
    tau, eps, delta = reg.tau, reg.epsilon, reg.delta

    e_q = strain_or_zero(grid, u, region_cells)
    z_mob_q = grid.at_quads(z_mob.values)
    z_en_q = grid.at_quads(z_en.values)
    c_prev_q = grid.at_quads(c_prev.values)

    m_mass = grid.mass_matrix()
    k_stiff = grid.stiffness_matrix()
    k_mob = grid.stiffness_matrix(coeff=mat.mobility(model, z_mob_q, eps))

    def forcing(c_vals):
        c_q = grid.at_quads(c_vals)
        dens = (
            model.psi_vex_prime(c_q)
            + model.psi_cave_prime(c_prev_q)
            + _coupling_density(model, c_q, e_q, z_en_q, eps)
        )
        if delta > 0.0:
            dens = dens + (delta / tau) * (c_q - c_prev_q)
        return grid.scatter_quads(dens)

    def residual(c_vals, mu_vals):
        r1 = m_mass @ (c_vals - c_prev.values) + tau * (k_mob @ mu_vals)
        r2 = m_mass @ mu_vals - k_stiff @ c_vals - forcing(c_vals)
        return r1, r2

    def jacobian(c_vals):
        c_q = grid.at_quads(c_vals)
        weight = model.psi_vex_cc(c_q) + mat.w_cc(model, c_q, e_q, z_en_q, eps)
        if delta > 0.0:
            weight = weight + delta / tau
        n_mat = grid.mass_matrix(weight=weight)
        return sp.bmat(
            [[m_mass, tau * k_mob], [-(k_stiff + n_mat), m_mass]], format="csc"
        )

    c_vals = c_prev.values.copy()
    mu_vals = spla.spsolve(m_mass.tocsc(), k_stiff @ c_vals + forcing(c_vals))

    r1, r2 = residual(c_vals, mu_vals)
    rnorm = np.sqrt(r1 @ r1 + r2 @ r2)
    for _ in range(_NEWTON_MAX_ITER):
        if rnorm <= _NEWTON_ABS_TOL:
            break
        jac = jacobian(c_vals)
        dx = spla.spsolve(jac, -np.concatenate([r1, r2]))
        if not np.all(np.isfinite(dx)):
            raise SolverError("singular Newton system", substep="cahn-hilliard")
        step = 1.0
        n = grid.n_nodes
        for _ in range(30):
            c_try = c_vals + step * dx[:n]
            mu_try = mu_vals + step * dx[n:]
            r1t, r2t = residual(c_try, mu_try)
            rnorm_try = np.sqrt(r1t @ r1t + r2t @ r2t)
            if rnorm_try < rnorm or rnorm_try <= _NEWTON_ABS_TOL:
                break
            step *= 0.5
        else:
            raise SolverError(
                "Newton line search stalled in concentration step",
                substep="cahn-hilliard",
            )
        c_vals, mu_vals = c_try, mu_try
        r1, r2, rnorm = r1t, r2t, rnorm_try
    else:
        raise SolverError(
            f"concentration step did not reach residual {_NEWTON_ABS_TOL:g} "
            f"within {_NEWTON_MAX_ITER} iterations (residual {rnorm:.3e})",
            substep="cahn-hilliard",
        )

    # Exact conservation repair: the Newton tolerance leaves an O(tol)
    # defect in the total concentration, removed by a uniform shift.
    volumes = grid.lumped_node_volumes()
    area = volumes.sum()
    drift = (volumes @ (c_vals - c_prev.values)) / area
    if abs(drift) > 1e-7 * (1.0 + np.abs(c_vals).max()):
        raise SolverError(
            f"conservation defect {drift:.3e} too large to repair",
            substep="cahn-hilliard",
        )
    c_vals = c_vals - drift

    e_prev = ch_free_energy(grid, c_prev.values, e_q, z_en_q, model, eps)
    e_new = ch_free_energy(grid, c_vals, e_q, z_en_q, model, eps)
    d_inc = dissipation_increment(
        ScalarField(grid, mu_vals), z_mob, model, eps, tau
    )
    budget = e_prev - e_new - d_inc
    if budget < -1e-8 * (1.0 + abs(e_prev)):
        raise VerificationError(
            f"concentration step increased its energy budget by {-budget:.3e}"
        )

    return ScalarField(grid, c_vals), ScalarField(grid, mu_vals)


def chemical_potential_residual(
    c: ScalarField,
    mu: ScalarField,
    u: VectorField,
    z: ScalarField,
    model: mat.MaterialModel,
    eps: float,
    region_cells=None,
) -> float:
    """Defect of the potential identity mu = -lap c + Psi'(c) + W_c.

    Tested against nodal hats supported inside the region (every adjacent
    cell retained), normalized in H1; uses the full derivative Psi', so
    for a converged step the value reports the convex-concave lag, which
    vanishes at stationary states.  Empty regions give 0.
    """
    grid = c.grid
    if region_cells is None:
        cells = np.ones(grid.n_cells, dtype=bool)
    else:
        cells = np.asarray(region_cells, dtype=bool)

    adjacent = np.zeros(grid.n_nodes, dtype=int)
    retained = np.zeros(grid.n_nodes, dtype=int)
    np.add.at(adjacent, grid.conn, 1)
    np.add.at(retained, grid.conn[cells], 1)
    test_nodes = (retained == adjacent) & (adjacent > 0)
    if not test_nodes.any():
        return 0.0

    e_q = strain_or_zero(grid, u, None if region_cells is None else cells)
    c_q = grid.at_quads(c.values)
    z_q = grid.at_quads(z.values)
    dens = model.psi_prime(c_q) + _coupling_density(model, c_q, e_q, z_q, eps)

    defect = (
        grid.mass_matrix() @ mu.values
        - grid.stiffness_matrix() @ c.values
        - grid.scatter_quads(dens)
    )
    h1 = np.sqrt(
        grid.mass_matrix().diagonal() + grid.stiffness_matrix().diagonal()
    )
    return float(np.max(np.abs(defect[test_nodes]) / h1[test_nodes]))


def dissipation_increment(
    mu: ScalarField,
    z_mob: ScalarField,
    model: mat.MaterialModel,
    eps: float,
    tau: float,
    region_cells=None,
) -> float:
    """Diffusive dissipation tau * int m^eps(z_mob) |grad mu|^2.

    Each quadrature contribution is a nonnegative product, so the result
    is exactly nonnegative; where z_mob = 0 and eps = 0 the flux vanishes
    identically.  ``region_cells`` optionally restricts the integral to
    the admissible region.
    """
    grid = mu.grid
    g_mu = grid.grads_at_quads(mu.values)
    m_q = mat.mobility(model, grid.at_quads(z_mob.values), eps)
    density = m_q * np.sum(g_mu * g_mu, axis=-1)
    return tau * grid.integrate_quads(density, region_cells)


def potential_from_state(
    c: ScalarField,
    u: VectorField,
    z: ScalarField,
    model: mat.MaterialModel,
    eps: float,
    region_cells=None,
) -> ScalarField:
    """Galerkin projection of -lap c + Psi'(c) + W_c onto the mesh.

    Used to initialize mu consistently with the initial fields.
    """
    grid = c.grid
    cells = None if region_cells is None else np.asarray(region_cells, dtype=bool)
    e_q = strain_or_zero(grid, u, cells)
    c_q = grid.at_quads(c.values)
    z_q = grid.at_quads(z.values)
    dens = model.psi_prime(c_q) + _coupling_density(model, c_q, e_q, z_q, eps)
    rhs = grid.stiffness_matrix() @ c.values + grid.scatter_quads(dens)
    mu_vals = spla.spsolve(grid.mass_matrix().tocsc(), rhs)
    return ScalarField(grid, mu_vals)
