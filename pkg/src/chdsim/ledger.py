"""Energy accounting: free energy, work, dissipation, and the inequality.

Every step of a run appends one row holding the region-restricted free
energy, the conserved mass, the dissipation increments, the external
work increment, the cumulative exclusion jumps, and the inequality
slack

    slack(t) = E(0) + W_ext(0,t) - E(t) - J(0,t) - D(0,t),

which the scheme keeps nonnegative up to solver tolerance.  The row also
carries the residual diagnostics and a snapshot of the seven a-priori
monitors.  Ledger files are CSV with a mandatory header, 17 significant
digits, and a comment footer embedding the final verification verdicts.
"""

from __future__ import annotations

from dataclasses import dataclass, fields as dc_fields

import numpy as np

from . import material as mat
from .grid import GridSpec, ScalarField, VectorField, strain_or_zero, sym_gradient

COLUMNS = (
    "step",
    "t",
    "E",
    "mass",
    "d_ch",
    "d_dam",
    "w_ext",
    "J_cum",
    "slack",
    "res_equil",
    "res_mu",
    "res_vi",
    "a1",
    "a2",
    "a3",
    "a4",
    "a5",
    "a6",
    "a7",
    "fineness",
)


@dataclass
class LedgerRow:
    step: int
    t: float
    E: float
    mass: float
    d_ch: float
    d_dam: float
    w_ext: float
    J_cum: float
    slack: float
    res_equil: float
    res_mu: float
    res_vi: float
    a1: float
    a2: float
    a3: float
    a4: float
    a5: float
    a6: float
    a7: float
    fineness: float

    def as_line(self) -> str:
        vals = [getattr(self, f.name) for f in dc_fields(self)]
        return ",".join(
            str(int(v)) if name == "step" else format(float(v), ".17g")
            for name, v in zip(COLUMNS, vals)
        )


# ---------------------------------------------------------------------------
# energy and work
# ---------------------------------------------------------------------------


def free_energy(
    c: ScalarField,
    u: VectorField,
    z: ScalarField,
    model: mat.MaterialModel,
    reg: mat.RegularizationParams,
    region_cells=None,
) -> float:
    """Free energy over the region (the whole grid when no mask given).

    Density: |grad z|^p / p + |grad c|^2 / 2 + Psi(c) + W^eps(c, e, z)
    + f(z), with the strain taken as zero outside the region.
    """
    grid = c.grid
    cells = None if region_cells is None else np.asarray(region_cells, dtype=bool)
    e_q = strain_or_zero(grid, u, cells)
    c_q = grid.at_quads(c.values)
    z_q = grid.at_quads(z.values)
    g_c = grid.grads_at_quads(c.values)
    g_z = grid.grads_at_quads(z.values)
    density = (
        np.sum(g_z * g_z, axis=-1) ** (reg.p / 2.0) / reg.p
        + 0.5 * np.sum(g_c * g_c, axis=-1)
        + model.psi(c_q)
        + (model.g(z_q) + reg.epsilon) * mat.phi(model, c_q, e_q)
        + model.f(z_q)
    )
    return grid.integrate_quads(density, cells)


def external_work_increment(
    c: ScalarField,
    z: ScalarField,
    u_prev: VectorField,
    u_new: VectorField,
    db: VectorField,
    model: mat.MaterialModel,
    eps: float,
    region_cells=None,
) -> float:
    """Work done by the boundary motion db over one step.

    Trapezoidal quadrature (1/2) int_F (W_e_prev + W_e_new) : eps(db);
    for two states equilibrated at the same coefficients and region this
    equals the elastic energy difference exactly, because the remainder
    tests the equilibrium with an admissible field.
    """
    grid = c.grid
    cells = None if region_cells is None else np.asarray(region_cells, dtype=bool)
    c_q = grid.at_quads(c.values)
    z_q = grid.at_quads(z.values)
    pref = model.g(z_q) + eps
    phi2_q = model.phi2(c_q)

    def w_e(u):
        e = sym_gradient(u, cells).values
        return pref[:, :, None] * (2.0 * model.apply_phi1(e) + phi2_q)

    e_db = sym_gradient(db, cells).values
    density = 0.5 * mat.tensor_inner(w_e(u_prev) + w_e(u_new), e_db)
    return grid.integrate_quads(density, cells)


# ---------------------------------------------------------------------------
# a-priori monitors
# ---------------------------------------------------------------------------


def h1_norm(field: ScalarField) -> float:
    grid = field.grid
    v = field.values
    return float(
        np.sqrt(v @ (grid.mass_matrix() @ v) + v @ (grid.stiffness_matrix() @ v))
    )


def w1p_norm(field: ScalarField, p: float) -> float:
    grid = field.grid
    v_q = grid.at_quads(field.values)
    g_q = grid.grads_at_quads(field.values)
    total = grid.integrate_quads(
        np.abs(v_q) ** p + np.sum(g_q * g_q, axis=-1) ** (p / 2.0)
    )
    return float(total ** (1.0 / p))


class Monitors:
    """Running a-priori quantities over one run.

    a1  sup_t ||c||_H1
    a2  ||e 1_{z>z_tol}||_L2 over space-time
    a3  sup_t ||z||_W1p
    a4  ||dz/dt||_L2 over space-time
    a5  sup_t int W^eps
    a6  ||sqrt(m^eps) grad mu||_L2 over space-time
    a7  ||m^eps grad mu||_L2 over space-time (surrogate for ||dc/dt||)

    Space-time integrals use the rectangle rule over steps; the sups
    include the initial state.
    """

    def __init__(self, model: mat.MaterialModel, reg: mat.RegularizationParams):
        self.model = model
        self.reg = reg
        self.sup_c_h1 = 0.0
        self.sup_z_w1p = 0.0
        self.sup_w = 0.0
        self.acc_strain = 0.0
        self.acc_dz = 0.0
        self.acc_flux1 = 0.0
        self.acc_flux2 = 0.0

    def observe_state(self, c, u, z, region_cells):
        """Update the sup-type monitors with one state."""
        grid = c.grid
        self.sup_c_h1 = max(self.sup_c_h1, h1_norm(c))
        self.sup_z_w1p = max(self.sup_z_w1p, w1p_norm(z, self.reg.p))
        e_q = strain_or_zero(grid, u, region_cells)
        w_q = (self.model.g(grid.at_quads(z.values)) + self.reg.epsilon) * mat.phi(
            self.model, grid.at_quads(c.values), e_q
        )
        self.sup_w = max(self.sup_w, grid.integrate_quads(w_q))

    def accumulate_step(self, mu, z_mob, z_new, z_prev, u, z_for_hat, region_cells):
        """Update the space-time monitors with one completed step."""
        grid = mu.grid
        tau, eps = self.reg.tau, self.reg.epsilon
        e_q = strain_or_zero(grid, u, region_cells)
        hat = grid.at_quads(z_for_hat.values) > self.reg.z_tol
        self.acc_strain += tau * grid.integrate_quads(
            mat.tensor_inner(e_q, e_q) * hat
        )
        dz = z_new.values - z_prev.values
        self.acc_dz += (dz @ (grid.mass_matrix() @ dz)) / tau
        g_mu = grid.grads_at_quads(mu.values)
        m_q = mat.mobility(self.model, grid.at_quads(z_mob.values), eps)
        flux_sq = np.sum(g_mu * g_mu, axis=-1)
        self.acc_flux1 += tau * grid.integrate_quads(m_q * flux_sq)
        self.acc_flux2 += tau * grid.integrate_quads(m_q**2 * flux_sq)

    def snapshot(self) -> tuple:
        return (
            self.sup_c_h1,
            np.sqrt(self.acc_strain),
            self.sup_z_w1p,
            np.sqrt(self.acc_dz),
            self.sup_w,
            np.sqrt(self.acc_flux1),
            np.sqrt(self.acc_flux2),
        )


# ---------------------------------------------------------------------------
# inequality verification
# ---------------------------------------------------------------------------


def energy_tolerance(e0: float) -> float:
    return 1e-8 * (1.0 + abs(e0))


def check_energy_inequality(rows, e0: float) -> dict:
    """Re-derive cumulative sums from the increments and check the slack.

    Returns a report with the worst slack, the tolerance, consistency of
    the stored slack column, and sign checks on all increments.
    """
    tol = energy_tolerance(e0)
    w_cum = 0.0
    d_cum = 0.0
    worst = np.inf
    ok = True
    issues = []
    j_prev = 0.0
    for row in rows:
        if row.d_ch < 0 or row.d_dam < 0:
            ok = False
            issues.append(f"step {row.step}: negative dissipation increment")
        if row.J_cum < j_prev - 1e-15 * (1.0 + abs(j_prev)):
            ok = False
            issues.append(f"step {row.step}: jump sum decreased")
        j_prev = row.J_cum
        w_cum += row.w_ext
        d_cum += row.d_ch + row.d_dam
        slack = e0 + w_cum - row.E - row.J_cum - d_cum
        worst = min(worst, slack)
        if abs(slack - row.slack) > 1e-9 * (1.0 + abs(slack)):
            ok = False
            issues.append(f"step {row.step}: stored slack inconsistent")
        if slack < -tol:
            ok = False
            issues.append(f"step {row.step}: slack {slack:.3e} below -{tol:.3e}")
    return {"ok": ok, "worst_slack": worst, "tol": tol, "issues": issues}


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------


def write_ledger(path, rows, e0: float, verdicts: dict):
    """Write rows plus a comment footer with E(0) and the verdicts."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(COLUMNS) + "\n")
        for row in rows:
            fh.write(row.as_line() + "\n")
        fh.write(f"# E0 {e0:.17g}\n")
        for key, passed in verdicts.items():
            fh.write(f"# verdict {key} {'pass' if passed else 'fail'}\n")


def read_ledger(path):
    """Read a ledger CSV; returns (rows, e0, verdicts)."""
    rows = []
    e0 = None
    verdicts = {}
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != ",".join(COLUMNS):
            raise ValueError("ledger header mismatch")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if parts and parts[0] == "E0":
                    e0 = float(parts[1])
                elif parts and parts[0] == "verdict":
                    verdicts[parts[1]] = parts[2] == "pass"
                continue
            cells = line.split(",")
            if len(cells) != len(COLUMNS):
                raise ValueError("ledger row width mismatch")
            rows.append(
                LedgerRow(int(cells[0]), *[float(v) for v in cells[1:]])
            )
    if e0 is None:
        raise ValueError("ledger footer missing E0")
    return rows, e0, verdicts