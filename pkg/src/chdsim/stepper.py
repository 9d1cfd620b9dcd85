"""Time marching: one incremental step, whole runs, and the eps sweep.

Each step advances the coupled system in a staggered pass

    u-solve (old c, z; new boundary data)
    -> concentration step (mobility at old z, coupling at new u)
    -> damage step (at new c, u)
    -> exclusion of unanchored material
    -> re-equilibration on the surviving region,

and appends one ledger row.  Re-equilibrating at the end of every step
keeps consecutive states equilibrated at identical coefficients, which
makes the trapezoidal work increment an exact energy difference and the
inequality slack nonnegative up to solver tolerance.  The step functional
(free energy plus the two viscous distances) is asserted non-increasing
across substeps.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import material as mat
from .admissible import (
    RegionMask,
    apply_exclusion,
    check_fineness,
    check_shrinking,
    maximal_admissible,
    threshold_mask,
)
from .cahn_hilliard import (
    chemical_potential_residual,
    dissipation_increment,
    potential_from_state,
    step_ch,
)
from .damage import damage_dissipation_increment, step_damage, vi_residual
from .elasticity import equilibrium_residual, solve_equilibrium
from .errors import ConfigError, SolverError, VerificationError
from .grid import GridSpec, ScalarField, VectorField, build_grid
from .ledger import (
    LedgerRow,
    Monitors,
    check_energy_inequality,
    external_work_increment,
    free_energy,
)


@dataclass
class SimState:
    """One time slice of the coupled system."""

    t: float
    c: ScalarField
    u: VectorField
    z: ScalarField
    mu: ScalarField
    mask: RegionMask
    reg: mat.RegularizationParams


@dataclass
class ScenarioConfig:
    """Full description of one run; validated on construction.

    The boundary program is time-affine: b(x, t) = (M0 + t M1) x +
    (o0 + t o1), evaluated at every node (only the Dirichlet trace is
    imposed).  The initial concentration is either explicit nodal values
    or mean + amplitude * noise from the deterministic generator with
    the given seed; the initial damage is uniform or explicit.
    """

    nx: int
    ny: int
    lx: float
    ly: float
    dirichlet: object
    model: mat.MaterialModel
    reg: mat.RegularizationParams
    t_end: float
    c0_mean: float = 0.0
    c0_amp: float = 0.0
    seed: int = 0
    c0_values: np.ndarray = None
    z0: object = 1.0
    b_base_matrix: tuple = ((0.0, 0.0), (0.0, 0.0))
    b_base_offset: tuple = (0.0, 0.0)
    b_rate_matrix: tuple = ((0.0, 0.0), (0.0, 0.0))
    b_rate_offset: tuple = (0.0, 0.0)
    snapshot_every: int = 0
    inner_passes: int = 1
    name: str = "scenario"

    def __post_init__(self):
        if self.t_end <= 0.0:
            raise ConfigError("end time must be positive")
        if self.inner_passes < 1:
            raise ConfigError("inner_passes must be at least 1")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot cadence must be nonnegative")
        for name in ("b_base_matrix", "b_rate_matrix"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (2, 2):
                raise ConfigError(f"{name} must be a 2x2 matrix")
        for name in ("b_base_offset", "b_rate_offset"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (2,):
                raise ConfigError(f"{name} must be a 2-vector")

    def n_steps(self) -> int:
        return int(math.ceil(self.t_end / self.reg.tau - 1e-12))


def lcg_noise(seed: int, count: int) -> np.ndarray:
    """Deterministic noise in [-1, 1], identical on every platform.

    64-bit linear congruential generator
        state <- (6364136223846793005 * state + 1442695040888963407) mod 2^64,
    one draw per value in order, mapped through the top 53 bits.
    """
    state = seed & 0xFFFFFFFFFFFFFFFF
    out = np.empty(count)
    for i in range(count):
        state = (6364136223846793005 * state + 1442695040888963407) & 0xFFFFFFFFFFFFFFFF
        out[i] = 2.0 * ((state >> 11) / 9007199254740992.0) - 1.0
    return out


def boundary_at(grid: GridSpec, config: ScenarioConfig, t: float) -> VectorField:
    """Nodal boundary program b(x, t) evaluated on the whole grid."""
    m0 = np.asarray(config.b_base_matrix, dtype=float)
    m1 = np.asarray(config.b_rate_matrix, dtype=float)
    o0 = np.asarray(config.b_base_offset, dtype=float)
    o1 = np.asarray(config.b_rate_offset, dtype=float)
    vals = grid.node_xy @ (m0 + t * m1).T + (o0 + t * o1)
    return VectorField(grid, vals)


def _initial_fields(grid: GridSpec, config: ScenarioConfig):
    if config.c0_values is not None:
        c_vals = np.asarray(config.c0_values, dtype=float)
        if c_vals.shape != (grid.n_nodes,):
            raise ConfigError("explicit c0 must provide one value per node")
    else:
        noise = lcg_noise(config.seed, grid.n_nodes)
        c_vals = config.c0_mean + config.c0_amp * noise
    if np.isscalar(config.z0):
        z_vals = np.full(grid.n_nodes, float(config.z0))
    else:
        z_vals = np.asarray(config.z0, dtype=float)
        if z_vals.shape != (grid.n_nodes,):
            raise ConfigError("explicit z0 must provide one value per node")
    if z_vals.min() < 0.0 or z_vals.max() > 1.0:
        raise ConfigError("initial damage must lie in [0, 1]")
    return ScalarField(grid, c_vals), ScalarField(grid, z_vals)


def initial_region(config: ScenarioConfig):
    """Initial fields and admissible region, without any solves.

    Rejects initial damage whose above-threshold set has a component not
    anchored at the Dirichlet boundary; used both by init_state and by
    config validation.
    """
    grid = build_grid(config.nx, config.ny, config.lx, config.ly, config.dirichlet)
    c0, z0 = _initial_fields(grid, config)
    above = threshold_mask(z0, config.reg.z_tol)
    mask = maximal_admissible(above)
    if not mask.same_as(above):
        raise ConfigError(
            "initial damage has a component not anchored at the Dirichlet "
            "boundary; exclusion at t=0 is not allowed"
        )
    if not mask.cells.any():
        raise ConfigError("initial admissible region is empty")
    return grid, c0, z0, mask


def init_state(config: ScenarioConfig) -> SimState:
    """Build the initial state: fields, equilibrium, potential, region."""
    grid, c0, z0, mask = initial_region(config)
    reg = config.reg
    b0 = boundary_at(grid, config, 0.0)
    u0 = solve_equilibrium(
        c0, z0, b0, config.model, reg.epsilon, mask.cells, delta_u=reg.delta_u
    )
    mu0 = potential_from_state(c0, u0, z0, config.model, reg.epsilon, mask.cells)
    return SimState(t=0.0, c=c0, u=u0, z=z0, mu=mu0, mask=mask, reg=reg)


@dataclass
class RunContext:
    """Accumulators threaded through the steps of one run."""

    e0: float
    step_index: int = 0
    w_cum: float = 0.0
    d_cum: float = 0.0
    j_cum: float = 0.0
    monitors: Monitors = None
    masks: list = field(default_factory=list)
    events: list = field(default_factory=list)
    monotone: bool = True
    fineness_ok: bool = True

    @classmethod
    def fresh(cls, state: SimState, config: ScenarioConfig) -> "RunContext":
        e0 = free_energy(
            state.c, state.u, state.z, config.model, state.reg, state.mask.cells
        )
        monitors = Monitors(config.model, state.reg)
        monitors.observe_state(state.c, state.u, state.z, state.mask.cells)
        ctx = cls(e0=e0, monitors=monitors)
        ctx.masks.append(state.mask)
        return ctx


def _dead_energy(c, z, model, reg, cells):
    """Energy density integrated over the complement of the region."""
    if cells.all():
        return 0.0
    return free_energy(c, None, z, model, reg, ~cells)


def step(state: SimState, config: ScenarioConfig, ctx: RunContext = None):
    """Advance one step; returns (state', LedgerRow).

    ``ctx`` carries the run accumulators; a fresh one (treating ``state``
    as the initial instant) is created when absent.  An exclusion event,
    if any, is appended to ``ctx.events``.
    """
    if ctx is None:
        ctx = RunContext.fresh(state, config)
    grid = state.c.grid
    model, reg = config.model, state.reg
    tau, eps = reg.tau, reg.epsilon
    cells = state.mask.cells
    c_prev, z_prev, u_prev = state.c, state.z, state.u
    t_new = state.t + tau
    b_prev = boundary_at(grid, config, state.t)
    b_new = boundary_at(grid, config, t_new)

    # -- boundary advance of the equilibrium
    u_adv = solve_equilibrium(
        c_prev, z_prev, b_new, model, eps, cells, u_init=u_prev, delta_u=reg.delta_u
    )
    db = VectorField(grid, b_new.values - b_prev.values)
    w_inc = external_work_increment(
        c_prev, z_prev, u_prev, u_adv, db, model, eps, cells
    )
    e_f_start = free_energy(c_prev, u_prev, z_prev, model, reg, cells)
    e_f_u = free_energy(c_prev, u_adv, z_prev, model, reg, cells)
    if reg.delta_u == 0.0:
        defect = e_f_u - e_f_start - w_inc
        if abs(defect) > 1e-9 * (1.0 + abs(e_f_u)):
            raise VerificationError(
                f"boundary work defect {defect:.3e} exceeds solver tolerance"
            )

    # -- staggered minimization pass(es); viscous anchors stay at step start
    c_new, mu_new = step_ch(c_prev, z_prev, u_adv, z_prev, model, reg, cells)
    z_mid = step_damage(c_new, u_adv, z_prev, model, reg, cells)
    for _ in range(config.inner_passes - 1):
        e_before = free_energy(c_new, u_adv, z_mid, model, reg, cells)
        u_adv = solve_equilibrium(
            c_new, z_mid, b_new, model, eps, cells, u_init=u_adv, delta_u=reg.delta_u
        )
        c_new, mu_new = step_ch(c_prev, z_prev, u_adv, z_mid, model, reg, cells)
        z_mid = step_damage(c_new, u_adv, z_prev, model, reg, cells)
        e_after = free_energy(c_new, u_adv, z_mid, model, reg, cells)
        if e_before - e_after < 1e-10:
            break

    if np.any(z_mid.values > z_prev.values) or z_mid.values.min() < 0.0:
        ctx.monotone = False
        raise VerificationError("damage step violated monotonicity or bounds")

    d_ch_f = dissipation_increment(mu_new, z_prev, model, eps, tau, cells)
    d_ch_g = dissipation_increment(mu_new, z_prev, model, eps, tau)
    d_dam = damage_dissipation_increment(z_mid, z_prev, tau)
    res_vi = vi_residual(c_new, u_adv, z_mid, z_prev, model, reg, cells)

    # -- step-functional monotonicity across the pass (global energies)
    if reg.delta == 0.0:
        r_prev = _dead_energy(c_prev, z_prev, model, reg, cells)
        r_ch = _dead_energy(c_new, z_prev, model, reg, cells)
        r_dam = _dead_energy(c_new, z_mid, model, reg, cells)
        g_u = e_f_u + r_prev
        g_ch = free_energy(c_new, u_adv, z_prev, model, reg, cells) + r_ch
        g_dam = free_energy(c_new, u_adv, z_mid, model, reg, cells) + r_dam
        tol_e = 1e-8 * (1.0 + abs(g_u))
        obj_u = g_u
        obj_ch = g_ch + 0.5 * d_ch_g
        obj_dam = g_dam + 0.5 * d_ch_g + 0.5 * d_dam
        if obj_ch > obj_u + tol_e or obj_dam > obj_ch + tol_e:
            raise VerificationError(
                "step functional increased across a substep "
                f"({obj_u:.12e} -> {obj_ch:.12e} -> {obj_dam:.12e})"
            )

    # -- exclusion of unanchored material, then re-equilibration
    e_minus = free_energy(c_new, u_adv, z_mid, model, reg, cells)
    new_mask = maximal_admissible(threshold_mask(z_mid, reg.z_tol))
    holder = {}

    def energy_after(z_field):
        u_plus = solve_equilibrium(
            c_new, z_field, b_new, model, eps, new_mask.cells, delta_u=reg.delta_u
        )
        holder["u"] = u_plus
        return free_energy(c_new, u_plus, z_field, model, reg, new_mask.cells)

    z_new, event = apply_exclusion(
        z_mid,
        new_mask,
        z_tol=reg.z_tol,
        time=t_new,
        energy_before=e_minus,
        energy_after=energy_after,
    )
    if event is not None:
        u_new = holder["u"]
        e_new = event.energy_after
        j_inc = event.jump
    else:
        u_new = solve_equilibrium(
            c_new,
            z_new,
            b_new,
            model,
            eps,
            new_mask.cells,
            u_init=u_adv,
            delta_u=reg.delta_u,
        )
        e_new = free_energy(c_new, u_new, z_new, model, reg, new_mask.cells)
        j_inc = 0.0

    # -- diagnostics and accounting
    res_eq = equilibrium_residual(c_new, z_new, u_new, model, eps, new_mask.cells)
    res_mu = chemical_potential_residual(
        c_new, mu_new, u_new, z_new, model, eps, new_mask.cells
    )
    fine_ok, fine_measure = check_fineness(
        new_mask, z_new, reg.eta_fineness, reg.z_tol
    )
    ctx.fineness_ok = ctx.fineness_ok and fine_ok

    ctx.monitors.observe_state(c_new, u_new, z_new, new_mask.cells)
    ctx.monitors.accumulate_step(
        mu_new, z_prev, z_mid, z_prev, u_new, z_new, new_mask.cells
    )

    ctx.step_index += 1
    ctx.w_cum += w_inc
    ctx.d_cum += d_ch_f + d_dam
    ctx.j_cum += j_inc
    slack = ctx.e0 + ctx.w_cum - e_new - ctx.j_cum - ctx.d_cum
    volumes = grid.lumped_node_volumes()
    a = ctx.monitors.snapshot()
    row = LedgerRow(
        step=ctx.step_index,
        t=t_new,
        E=e_new,
        mass=float(volumes @ c_new.values),
        d_ch=d_ch_f,
        d_dam=d_dam,
        w_ext=w_inc,
        J_cum=ctx.j_cum,
        slack=slack,
        res_equil=res_eq,
        res_mu=res_mu,
        res_vi=res_vi,
        a1=a[0],
        a2=a[1],
        a3=a[2],
        a4=a[3],
        a5=a[4],
        a6=a[5],
        a7=a[6],
        fineness=fine_measure,
    )
    ctx.masks.append(new_mask)
    if event is not None:
        ctx.events.append(event)
    new_state = SimState(
        t=t_new, c=c_new, u=u_new, z=z_new, mu=mu_new, mask=new_mask, reg=reg
    )
    return new_state, row


@dataclass
class RunResult:
    config: ScenarioConfig
    e0: float
    rows: list
    events: list
    masks: list
    snapshots: list
    verdicts: dict
    monitors: tuple


def run(config: ScenarioConfig) -> RunResult:
    """Execute a whole scenario and verify it.

    Snapshots are (step index, SimState) pairs at the configured cadence,
    always including the initial and final states.  The verdict dict
    covers the energy inequality, region shrinking, fineness, and damage
    monotonicity, and is embedded in the ledger footer by the writers.
    """
    state = init_state(config)
    ctx = RunContext.fresh(state, config)
    rows = []
    snapshots = [(0, state)]
    n = config.n_steps()
    try:
        for k in range(1, n + 1):
            state, row = step(state, config, ctx)
            rows.append(row)
            if config.snapshot_every and k % config.snapshot_every == 0 and k != n:
                snapshots.append((k, state))
    except SolverError as exc:
        # abort, but leave everything computed so far attached for flushing
        report = check_energy_inequality(rows, ctx.e0)
        verdicts = {
            "energy_inequality": report["ok"],
            "shrinking": check_shrinking(ctx.masks),
            "fineness": ctx.fineness_ok,
            "monotonicity": ctx.monotone,
            "overall": False,
        }
        exc.partial = RunResult(
            config=config,
            e0=ctx.e0,
            rows=rows,
            events=ctx.events,
            masks=ctx.masks,
            snapshots=snapshots + [(ctx.step_index, state)],
            verdicts=verdicts,
            monitors=ctx.monitors.snapshot(),
        )
        raise
    if not snapshots or snapshots[-1][0] != n:
        snapshots.append((n, state))

    energy_report = check_energy_inequality(rows, ctx.e0)
    verdicts = {
        "energy_inequality": energy_report["ok"],
        "shrinking": check_shrinking(ctx.masks),
        "fineness": ctx.fineness_ok,
        "monotonicity": ctx.monotone,
    }
    verdicts["overall"] = all(verdicts.values())
    return RunResult(
        config=config,
        e0=ctx.e0,
        rows=rows,
        events=ctx.events,
        masks=ctx.masks,
        snapshots=snapshots,
        verdicts=verdicts,
        monitors=ctx.monitors.snapshot(),
    )


# ---------------------------------------------------------------------------
# epsilon sweep
# ---------------------------------------------------------------------------


@dataclass
class SweepReport:
    """Monitors per epsilon plus their spread across the sweep."""

    epsilons: list
    entries: list
    spread: dict

    MONITOR_NAMES = (
        "sup_c_h1",
        "strain_l2",
        "sup_z_w1p",
        "dz_l2",
        "sup_w",
        "flux_half_l2",
        "flux_l2",
    )


def _sweep_entry(config: ScenarioConfig, eps: float) -> dict:
    cfg = replace(config, reg=replace(config.reg, epsilon=eps))
    try:
        result = run(cfg)
        return {
            "epsilon": eps,
            "monitors": tuple(float(v) for v in result.monitors),
            "verdicts": result.verdicts,
            "error": None,
        }
    except (SolverError, VerificationError, ConfigError) as exc:
        return {"epsilon": eps, "monitors": None, "verdicts": None, "error": str(exc)}


def worker_count(n_tasks: int) -> int:
    """Parallel width from the CHD_THREADS environment variable (0 = auto)."""
    raw = os.environ.get("CHD_THREADS", "0")
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ConfigError(f"CHD_THREADS must be an integer, got {raw!r}") from exc
    if cap < 0:
        raise ConfigError("CHD_THREADS must be nonnegative")
    if cap == 0:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_tasks))


def sweep_epsilon(config: ScenarioConfig, epsilon_list) -> SweepReport:
    """Run the same scenario for each epsilon and compare the monitors.

    The list must be positive and strictly decreasing.  Failed runs are
    recorded with their error and excluded from the spread.
    """
    eps_list = [float(e) for e in epsilon_list]
    if not eps_list or any(e <= 0.0 for e in eps_list):
        raise ConfigError("epsilon list must be positive")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("epsilon list must be strictly decreasing")

    workers = worker_count(len(eps_list))
    if workers == 1:
        entries = [_sweep_entry(config, e) for e in eps_list]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(_sweep_entry, [config] * len(eps_list), eps_list))

    spread = {}
    good = [e["monitors"] for e in entries if e["monitors"] is not None]
    for i, name in enumerate(SweepReport.MONITOR_NAMES):
        vals = [m[i] for m in good]
        if not vals:
            spread[name] = None
        else:
            lo, hi = min(vals), max(vals)
            spread[name] = hi / lo if lo > 0.0 else (1.0 if hi == 0.0 else np.inf)
    return SweepReport(epsilons=eps_list, entries=entries, spread=spread)