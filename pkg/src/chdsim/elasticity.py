"""Quasi-static equilibrium of the damaged elastic phase.

The displacement solves the Galerkin system of

    div W_e(c, eps(u), z) = 0,   W_e = (g(z) + eps)(2 phi1 e + phi2(c)),

with the prescribed trace on the Dirichlet edge set and natural
conditions elsewhere.  With eps > 0 the operator is positive definite on
the whole grid; with eps = 0 the solve must be restricted to a region
mask whose cells are anchored to the Dirichlet boundary, and nodes
outside the region are returned as NaN sentinels.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import material as mat
from .errors import SolverError
from .grid import GridSpec, ScalarField, SymTensorField, VectorField, sym_gradient

_CG_RTOL = 1.0e-10
_CG_CAP_FACTOR = 50


def _b_tables(grid: GridSpec):
    """Strain-displacement matrices B[q] (3x8) for the local dof order
    (n0x, n0y, n1x, n1y, n2x, n2y, n3x, n3y)."""
    b = np.zeros((4, 3, 8))
    for q in range(4):
        b[q, 0, 0::2] = grid.shape_dx[q]
        b[q, 1, 1::2] = grid.shape_dy[q]
        b[q, 2, 0::2] = 0.5 * grid.shape_dy[q]
        b[q, 2, 1::2] = 0.5 * grid.shape_dx[q]
    return b


def _vector_dofs(conn: np.ndarray) -> np.ndarray:
    """Map cell connectivity to interleaved displacement dof indices."""
    n_cells = conn.shape[0]
    dofs = np.empty((n_cells, 8), dtype=int)
    dofs[:, 0::2] = 2 * conn
    dofs[:, 1::2] = 2 * conn + 1
    return dofs


def elastic_operator(
    grid: GridSpec, coeff: np.ndarray, s_mat: np.ndarray, cells=None
) -> sp.csr_matrix:
    """Assemble the (2n x 2n) elastic stiffness with per-quad coefficient.

    ``coeff`` has shape (n_cells, 4); ``s_mat`` is the symmetrized matrix
    of the quadratic form e -> phi1 e : e so the local blocks are
    w_q * 2 * B^T s_mat B.
    """
    b = _b_tables(grid)
    local_q = 2.0 * grid.quad_w * np.einsum("qia,ij,qjb->qab", b, s_mat, b)
    local = np.einsum("cq,qab->cab", coeff, local_q)
    if cells is not None:
        local = np.where(cells[:, None, None], local, 0.0)
    dofs = _vector_dofs(grid.conn)
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    n = 2 * grid.n_nodes
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _phi2_load(grid: GridSpec, coeff: np.ndarray, phi2_q: np.ndarray, cells=None):
    """Gradient of integral coeff * phi2(c) : eps(u) with respect to u dofs."""
    b = _b_tables(grid)
    weighted = coeff[:, :, None] * (phi2_q @ mat.METRIC)
    contrib = grid.quad_w * np.einsum("cqi,qia->ca", weighted, b)
    if cells is not None:
        contrib = np.where(cells[:, None], contrib, 0.0)
    f = np.zeros(2 * grid.n_nodes)
    np.add.at(f, _vector_dofs(grid.conn), contrib)
    return f


def _region_nodes(grid: GridSpec, cells) -> np.ndarray:
    active = np.zeros(grid.n_nodes, dtype=bool)
    active[grid.conn[cells].ravel()] = True
    return active


def _s_sym(model: mat.MaterialModel) -> np.ndarray:
    s = model.phi1_mat.T @ mat.METRIC
    return 0.5 * (s + s.T)


def _quartic_term(grid: GridSpec, u_flat: np.ndarray, cells):
    """Componentwise 4-Laplacian weight |grad u|^2 at quadrature points."""
    ux = grid.grads_at_quads(u_flat[0::2])
    uy = grid.grads_at_quads(u_flat[1::2])
    w = np.sum(ux * ux, axis=-1) + np.sum(uy * uy, axis=-1)
    if cells is not None:
        w = np.where(cells[:, None], w, 0.0)
    return w


def solve_equilibrium(
    c: ScalarField,
    z: ScalarField,
    boundary: VectorField,
    model: mat.MaterialModel,
    eps: float,
    region_cells=None,
    u_init: VectorField = None,
    delta_u: float = 0.0,
) -> VectorField:
    """Solve the equilibrium system; returns the displacement field.

    ``boundary`` supplies the Dirichlet trace through its values on the
    grid's Dirichlet nodes (any lift works, only the trace is read).
    ``region_cells`` restricts assembly to a boolean cell mask; outside
    nodes are set to NaN.  ``delta_u`` adds the optional quartic gradient
    regularization, handled by Picard iteration on the frozen weight.
    """
    grid = c.grid
    if region_cells is None:
        if eps <= 0.0:
            raise SolverError(
                "unmasked equilibrium solve requires a positive floor eps",
                substep="equilibrium",
            )
        cells = None
        active = np.ones(grid.n_nodes, dtype=bool)
    else:
        cells = np.asarray(region_cells, dtype=bool)
        active = _region_nodes(grid, cells)

    z_q = grid.at_quads(z.values)
    c_q = grid.at_quads(c.values)
    coeff = model.g(z_q) + eps
    s_mat = _s_sym(model)

    dir_mask = np.zeros(grid.n_nodes, dtype=bool)
    dir_mask[grid.dirichlet_nodes] = True
    fixed_nodes = dir_mask & active
    if not fixed_nodes.any():
        raise SolverError(
            "region has no Dirichlet anchor; mask may be inadmissible",
            substep="equilibrium",
        )
    free = np.zeros(2 * grid.n_nodes, dtype=bool)
    free[0::2] = active & ~fixed_nodes
    free[1::2] = active & ~fixed_nodes

    u_full = np.zeros(2 * grid.n_nodes)
    u_full[0::2] = np.where(fixed_nodes, boundary.values[:, 0], 0.0)
    u_full[1::2] = np.where(fixed_nodes, boundary.values[:, 1], 0.0)
    if u_init is not None:
        guess = np.where(np.isfinite(u_init.values), u_init.values, 0.0)
        u_full[0::2] = np.where(active & ~fixed_nodes, guess[:, 0], u_full[0::2])
        u_full[1::2] = np.where(active & ~fixed_nodes, guess[:, 1], u_full[1::2])

    rhs_phi2 = -_phi2_load(grid, coeff, model.phi2(c_q), cells)

    k_lin = elastic_operator(grid, coeff, s_mat, cells)
    n_picard = 1 if delta_u == 0.0 else 40
    x = u_full.copy()
    for it in range(n_picard):
        k = k_lin
        if delta_u > 0.0:
            w4 = _quartic_term(grid, x, cells)
            comp = grid.stiffness_matrix(coeff=delta_u * w4, cells=cells)
            k = k_lin + sp.block_diag([comp, comp]).tocsr()[
                _interleave_perm(grid.n_nodes), :
            ][:, _interleave_perm(grid.n_nodes)]
        x_new = _constrained_cg(k, rhs_phi2, x, free, grid)
        if delta_u == 0.0:
            x = x_new
            break
        shift = np.linalg.norm(x_new[free] - x[free])
        x = x_new
        if shift <= 1e-12 * (1.0 + np.linalg.norm(x[free])):
            break
    else:
        raise SolverError(
            "quartic regularization Picard loop did not converge",
            substep="equilibrium",
        )

    out = np.column_stack([x[0::2], x[1::2]])
    out[~active] = np.nan
    return VectorField(grid, out)


def _interleave_perm(n_nodes: int) -> np.ndarray:
    """Permutation mapping [all-x, all-y] block order to interleaved dofs."""
    perm = np.empty(2 * n_nodes, dtype=int)
    perm[0::2] = np.arange(n_nodes)
    perm[1::2] = np.arange(n_nodes) + n_nodes
    return perm


def _constrained_cg(k, rhs, x0, free, grid: GridSpec) -> np.ndarray:
    fixed_contrib = k @ (np.where(free, 0.0, x0))
    kff = k[free][:, free]
    b = (rhs - fixed_contrib)[free]
    diag = kff.diagonal()
    if np.any(diag <= 0.0):
        raise SolverError(
            "elastic operator lost positivity; mask may be inadmissible",
            substep="equilibrium",
        )
    precond = sp.diags(1.0 / diag)
    maxiter = int(_CG_CAP_FACTOR * np.sqrt(free.sum())) + 1
    b_scale = np.linalg.norm(b) + np.linalg.norm(diag * np.abs(x0[free]))

    sol = x0[free].copy()
    # CG plus iterative refinement: the energy bookkeeping downstream
    # relies on equilibria being exact well below the slack tolerance.
    for _ in range(3):
        resid = b - kff @ sol
        if np.linalg.norm(resid) <= 1e-14 * (1.0 + b_scale):
            break
        corr, info = spla.cg(
            kff,
            resid,
            rtol=_CG_RTOL,
            atol=1e-16 * (1.0 + b_scale),
            maxiter=maxiter,
            M=precond,
        )
        if info != 0:
            raise SolverError(
                f"equilibrium CG failed to converge within {maxiter} iterations "
                "(singular or ill-conditioned system; check region admissibility)",
                substep="equilibrium",
            )
        sol = sol + corr
    out = x0.copy()
    out[free] = sol
    return out


def stress_field(
    c: ScalarField,
    z: ScalarField,
    u: VectorField,
    model: mat.MaterialModel,
    eps: float,
    cells=None,
) -> SymTensorField:
    """W_e at quadrature points; zero outside the region mask."""
    grid = u.grid
    e = sym_gradient(u, cells).values
    c_q = grid.at_quads(c.values)
    z_q = grid.at_quads(z.values)
    _, w_e, _, _ = mat.w_and_derivatives(model, c_q, e, z_q, eps)
    if cells is not None:
        w_e[~cells] = 0.0
    return SymTensorField(grid, w_e)


def equilibrium_residual(
    c: ScalarField,
    z: ScalarField,
    u: VectorField,
    model: mat.MaterialModel,
    eps: float,
    region_cells=None,
) -> float:
    """Dual norm of the equilibrium defect over nodal test fields.

    Tests are the nodal hat fields vanishing on the Dirichlet set, each
    normalized in H1; the returned value is the largest normalized defect.
    """
    grid = u.grid
    cells = None if region_cells is None else np.asarray(region_cells, dtype=bool)
    w_e = stress_field(c, z, u, model, eps, cells).values

    b = _b_tables(grid)
    contrib = grid.quad_w * np.einsum("cqi,ij,qja->cqa", w_e, mat.METRIC, b).sum(
        axis=1
    )
    if cells is not None:
        contrib = np.where(cells[:, None], contrib, 0.0)
    r = np.zeros(2 * grid.n_nodes)
    np.add.at(r, _vector_dofs(grid.conn), contrib)

    active = (
        np.ones(grid.n_nodes, dtype=bool) if cells is None else _region_nodes(grid, cells)
    )
    free = active.copy()
    free[grid.dirichlet_nodes] = False
    if not free.any():
        return 0.0

    h1 = np.sqrt(
        grid.mass_matrix(cells=cells).diagonal()
        + grid.stiffness_matrix(cells=cells).diagonal()
    )
    scale = np.maximum(h1[free], 1e-300)
    rx = np.abs(r[0::2][free]) / scale
    ry = np.abs(r[1::2][free]) / scale
    return float(max(rx.max(), ry.max()))


def energy_transform_check(
    c: ScalarField,
    z: ScalarField,
    u: VectorField,
    u_tilde: VectorField,
    model: mat.MaterialModel,
    eps: float,
    region_cells=None,
):
    """Cross-check of the elastic energy against its transformed form.

    For u in equilibrium and any u_tilde with the same Dirichlet trace,

      int W^eps(c, e(u), z) =
      int (g(z)+eps) [ phi1 e(u):e(ut) + (phi2(c):(e(u)+e(ut)))/2 + phi3(c) ],

    which follows from testing the equilibrium with u - u_tilde.  Returns
    (lhs, rhs); both sides agree only when u solves the weak equation.
    """
    grid = u.grid
    cells = None if region_cells is None else np.asarray(region_cells, dtype=bool)
    active = (
        np.ones(grid.n_nodes, dtype=bool) if cells is None else _region_nodes(grid, cells)
    )
    dir_active = np.zeros(grid.n_nodes, dtype=bool)
    dir_active[grid.dirichlet_nodes] = True
    dir_active &= active
    trace_gap = np.abs(u.values[dir_active] - u_tilde.values[dir_active])
    u_scale = 1.0 + float(np.nanmax(np.abs(u.values))) if u.values.size else 1.0
    if trace_gap.size and trace_gap.max() > 1e-10 * u_scale:
        raise ValueError("u and u_tilde carry different Dirichlet traces")

    e_u = sym_gradient(u, cells).values
    e_t = sym_gradient(u_tilde, cells).values
    c_q = grid.at_quads(c.values)
    z_q = grid.at_quads(z.values)
    pref = model.g(z_q) + eps

    lhs_density = pref * mat.phi(model, c_q, e_u)
    phi2_q = model.phi2(c_q)
    rhs_density = pref * (
        mat.tensor_inner(model.apply_phi1(e_u), e_t)
        + 0.5 * mat.tensor_inner(phi2_q, e_u + e_t)
        + model.phi3(c_q)
    )
    lhs = grid.integrate_quads(lhs_density, cells)
    rhs = grid.integrate_quads(rhs_density, cells)
    return lhs, rhs
