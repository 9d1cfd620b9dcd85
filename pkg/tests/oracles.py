"""Independent reference implementations used to cross-check the package.

Everything here is written from the mathematical definitions, deliberately
avoiding the package's own assembly and solver code paths: flood fill on
plain Python sets, an explicit fine-step integrator driven by prefactored
mass solves, and a 1D scalar minimizer from scipy.
"""

import numpy as np
import scipy.optimize
import scipy.sparse.linalg as spla


# ---------------------------------------------------------------------------
# admissible region: brute-force BFS on the cell graph
# ---------------------------------------------------------------------------


def bfs_admissible(nx: int, ny: int, cells, dirichlet: str) -> np.ndarray:
    """Cells connected through 4-neighbor paths to the Dirichlet edge.

    ``cells`` is any boolean iterable in cell order (cy * nx + cx).  A cell
    is a seed when it is kept and one of its faces lies on the Dirichlet
    edge of the boundary.  Returns a flat boolean array in the same order.
    """
    keep = [bool(v) for v in np.asarray(cells).reshape(-1)]
    if len(keep) != nx * ny:
        raise ValueError("mask size mismatch")

    def touches(cx, cy):
        if dirichlet == "left":
            return cx == 0
        if dirichlet == "right":
            return cx == nx - 1
        if dirichlet == "bottom":
            return cy == 0
        if dirichlet == "top":
            return cy == ny - 1
        if dirichlet == "all":
            return cx in (0, nx - 1) or cy in (0, ny - 1)
        raise ValueError(f"unknown edge {dirichlet!r}")

    queue = [
        (cx, cy)
        for cy in range(ny)
        for cx in range(nx)
        if keep[cy * nx + cx] and touches(cx, cy)
    ]
    seen = set(queue)
    while queue:
        cx, cy = queue.pop()
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nb = (cx + dx, cy + dy)
            if 0 <= nb[0] < nx and 0 <= nb[1] < ny and nb not in seen:
                if keep[nb[1] * nx + nb[0]]:
                    seen.add(nb)
                    queue.append(nb)
    out = np.zeros(nx * ny, dtype=bool)
    for cx, cy in seen:
        out[cy * nx + cx] = True
    return out


# ---------------------------------------------------------------------------
# Cahn-Hilliard: explicit fine-step reference integrator
# ---------------------------------------------------------------------------


def explicit_ch_reference(grid, c0: np.ndarray, psi_prime, t_end: float, dt: float):
    """Integrate M dc/dt = -K mu, M mu = K c + P(psi'(c)) by forward Euler.

    Shares only the grid object (mesh data) with the implementation under
    test; time stepping, splitting, and linearization are all different.
    ``psi_prime`` is the full double-well derivative.  Unit mobility, no
    elasticity, natural boundary conditions.
    """
    m_mass = grid.mass_matrix().tocsc()
    k_stiff = grid.stiffness_matrix().tocsr()
    solve_m = spla.splu(m_mass)
    c = np.array(c0, dtype=float)
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-12 * max(1.0, t_end):
        raise ValueError("dt must divide t_end")
    for _ in range(n_steps):
        rhs = k_stiff @ c + grid.scatter_quads(psi_prime(grid.at_quads(c)))
        mu = solve_m.solve(rhs)
        c = c - dt * solve_m.solve(k_stiff @ mu)
        if not np.all(np.isfinite(c)):
            raise FloatingPointError("reference integrator went unstable")
    return c


# ---------------------------------------------------------------------------
# damage: scalar incremental minimization
# ---------------------------------------------------------------------------


def scalar_damage_oracle(
    phi: float, beta: float, tau: float, z_prev: float
) -> float:
    """Minimize (z - z_prev)^2/(2 tau) + z phi + beta (1 - z) over [0, z_prev].

    This is the spatially uniform damage step with g(z) = z: the gradient
    term vanishes for flat fields, so the nodal problem decouples into
    this 1D box-constrained minimization.
    """

    def objective(zv):
        return (zv - z_prev) ** 2 / (2.0 * tau) + zv * phi + beta * (1.0 - zv)

    res = scipy.optimize.minimize_scalar(
        objective, bounds=(0.0, z_prev), method="bounded",
        options={"xatol": 1e-12},
    )
    best = float(res.x)
    # bounded Brent can stall a hair inside the box; snap if an endpoint wins
    for cand in (0.0, z_prev):
        if objective(cand) <= objective(best):
            best = cand
    return best


# ---------------------------------------------------------------------------
# generic central finite differences
# ---------------------------------------------------------------------------


def central_diff(fn, x: float, h: float = 1e-5) -> float:
    return (fn(x + h) - fn(x - h)) / (2.0 * h)


def grad_central(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Componentwise central differences of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step.flat[i] = h
        out.flat[i] = (fn(x + step) - fn(x - step)) / (2.0 * h)
    return out
