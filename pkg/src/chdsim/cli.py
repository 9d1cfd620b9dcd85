"""Command-line front end: run, sweep, verify.

Scenario files are flat JSON with sections grid, material, regularization,
initial, boundary, output plus top-level t_end and name.  Unknown keys are
rejected so typos cannot silently fall back to defaults.  Exit codes:
0 success, 1 usage or configuration error, 2 solver failure,
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .admissible import (
    check_fineness,
    maximal_admissible,
    read_mask,
    threshold_mask,
    write_mask,
)
from .errors import ConfigError, SolverError, VerificationError
from .grid import ScalarField, build_grid, read_field, write_field
from .ledger import check_energy_inequality, read_ledger, write_ledger
from .material import RegularizationParams, default_model
from .scenarios import with_damage_bias
from .stepper import ScenarioConfig, initial_region, run, sweep_epsilon
from .report import render_fields, render_run_report, render_sweep
from .stepper import SweepReport

_SECTION_KEYS = {
    "grid": {"nx", "ny", "lx", "ly", "dirichlet"},
    "material": {"lam", "mu", "alpha", "beta", "r_growth", "damage_bias"},
    "regularization": {
        "epsilon",
        "delta",
        "tau",
        "p",
        "z_tol",
        "eta_fineness",
        "delta_u",
        "inner_passes",
    },
    "initial": {"c0_mean", "c0_amp", "seed", "c0_values", "z0"},
    "boundary": {"base_matrix", "base_offset", "rate_matrix", "rate_offset"},
    "output": {"snapshot_every"},
}
_TOP_KEYS = set(_SECTION_KEYS) | {"t_end", "name"}


def _check_keys(raw: dict, allowed: set, where: str):
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def parse_scenario(path) -> ScenarioConfig:
    """Load, default, and fully validate a scenario file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: scenario file must contain a JSON object")
    _check_keys(raw, _TOP_KEYS, "scenario")
    for section in _SECTION_KEYS:
        sub = raw.get(section, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"section {section!r} must be an object")
        _check_keys(sub, _SECTION_KEYS[section], f"section {section!r}")
    if "grid" not in raw:
        raise ConfigError("missing required section 'grid'")
    if "t_end" not in raw:
        raise ConfigError("missing required key 't_end'")

    gsec = raw["grid"]
    for key in ("nx", "ny"):
        if key not in gsec:
            raise ConfigError(f"grid section requires {key!r}")

    msec = raw.get("material", {})
    model = default_model(
        lam=float(msec.get("lam", 1.0)),
        mu=float(msec.get("mu", 1.0)),
        alpha=float(msec.get("alpha", 0.2)),
        beta=float(msec.get("beta", 0.1)),
        r_growth=float(msec.get("r_growth", 3.0)),
    )
    if "damage_bias" in msec:
        model = with_damage_bias(model, float(msec["damage_bias"]))

    rsec = raw.get("regularization", {})
    reg = RegularizationParams(
        epsilon=float(rsec.get("epsilon", 1e-4)),
        delta=float(rsec.get("delta", 0.0)),
        tau=float(rsec.get("tau", 1e-2)),
        p=float(rsec.get("p", 3.0)),
        z_tol=float(rsec.get("z_tol", 1e-8)),
        eta_fineness=float(rsec.get("eta_fineness", 0.05)),
        delta_u=float(rsec.get("delta_u", 0.0)),
    )

    isec = raw.get("initial", {})
    c0_values = isec.get("c0_values")
    if c0_values is not None:
        c0_values = np.asarray(c0_values, dtype=float)
    z0 = isec.get("z0", 1.0)
    if not np.isscalar(z0):
        z0 = np.asarray(z0, dtype=float)

    bsec = raw.get("boundary", {})
    osec = raw.get("output", {})
    config = ScenarioConfig(
        nx=int(gsec["nx"]),
        ny=int(gsec["ny"]),
        lx=float(gsec.get("lx", 1.0)),
        ly=float(gsec.get("ly", 1.0)),
        dirichlet=gsec.get("dirichlet", "left"),
        model=model,
        reg=reg,
        t_end=float(raw["t_end"]),
        c0_mean=float(isec.get("c0_mean", 0.0)),
        c0_amp=float(isec.get("c0_amp", 0.0)),
        seed=int(isec.get("seed", 0)),
        c0_values=c0_values,
        z0=z0,
        b_base_matrix=tuple(map(tuple, bsec.get("base_matrix", ((0, 0), (0, 0))))),
        b_base_offset=tuple(bsec.get("base_offset", (0, 0))),
        b_rate_matrix=tuple(map(tuple, bsec.get("rate_matrix", ((0, 0), (0, 0))))),
        b_rate_offset=tuple(bsec.get("rate_offset", (0, 0))),
        snapshot_every=int(osec.get("snapshot_every", 0)),
        inner_passes=int(rsec.get("inner_passes", 1)),
        name=str(raw.get("name", Path(path).stem)),
    )
    initial_region(config)  # admissibility of z0, checked up front
    return config


# ---------------------------------------------------------------------------
# output writing
# ---------------------------------------------------------------------------


def _write_run_outputs(out: Path, result, config: ScenarioConfig):
    out.mkdir(parents=True, exist_ok=True)
    write_ledger(out / "ledger.csv", result.rows, result.e0, result.verdicts)
    with open(out / "events.json", "w", encoding="utf-8") as fh:
        json.dump([ev.to_record() for ev in result.events], fh, indent=2, sort_keys=True)
        fh.write("\n")
    meta = {
        "name": config.name,
        "t_end": config.t_end,
        "grid": {
            "nx": config.nx,
            "ny": config.ny,
            "lx": config.lx,
            "ly": config.ly,
            "dirichlet": str(config.dirichlet),
        },
        "regularization": {
            "epsilon": config.reg.epsilon,
            "delta": config.reg.delta,
            "tau": config.reg.tau,
            "p": config.reg.p,
            "z_tol": config.reg.z_tol,
            "eta_fineness": config.reg.eta_fineness,
            "delta_u": config.reg.delta_u,
        },
    }
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")

    fields_dir = out / "fields"
    masks_dir = out / "masks"
    fields_dir.mkdir(exist_ok=True)
    masks_dir.mkdir(exist_ok=True)
    for k, state in result.snapshots:
        tag = f"step_{k:06d}"
        grid = state.c.grid
        write_field(fields_dir / f"{tag}_c.chdfield", "c", grid, state.c.values, state.t)
        write_field(fields_dir / f"{tag}_z.chdfield", "z", grid, state.z.values, state.t)
        write_field(
            fields_dir / f"{tag}_mu.chdfield", "mu", grid, state.mu.values, state.t
        )
        write_field(
            fields_dir / f"{tag}_ux.chdfield", "ux", grid, state.u.values[:, 0], state.t
        )
        write_field(
            fields_dir / f"{tag}_uy.chdfield", "uy", grid, state.u.values[:, 1], state.t
        )
        write_mask(masks_dir / f"{tag}.chdmask", state.mask, state.t)

    if result.rows:
        render_run_report(out / "report.png", result.rows, result.e0, result.verdicts)
    render_fields(out / "fields.png", result.snapshots[-1][1])


def _write_sweep_outputs(out: Path, report: SweepReport):
    out.mkdir(parents=True, exist_ok=True)
    names = SweepReport.MONITOR_NAMES
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epsilon," + ",".join(names) + ",ok,error\n")
        for entry in report.entries:
            eps = format(entry["epsilon"], ".17g")
            if entry["monitors"] is None:
                vals = ",".join([""] * len(names))
                ok = "0"
            else:
                vals = ",".join(format(v, ".17g") for v in entry["monitors"])
                ok = "1" if entry["verdicts"]["overall"] else "0"
            err = (entry["error"] or "").replace(",", ";").replace("\n", " ")
            fh.write(f"{eps},{vals},{ok},{err}\n")
        for name in names:
            ratio = report.spread.get(name)
            fh.write(f"# spread {name} {'nan' if ratio is None else format(ratio, '.17g')}\n")
    render_sweep(out / "sweep.png", report)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_run(args) -> int:
    config = parse_scenario(args.config)
    out = Path(args.out)
    try:
        result = run(config)
    except SolverError as exc:
        partial = getattr(exc, "partial", None)
        if partial is not None:
            _write_run_outputs(out, partial, config)
        print(f"solver failure ({exc.substep}): {exc}", file=sys.stderr)
        return 2
    _write_run_outputs(out, result, config)
    if not result.verdicts["overall"]:
        failed = [k for k, v in result.verdicts.items() if not v and k != "overall"]
        print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
        return 3
    return 0


def _cmd_sweep(args) -> int:
    config = parse_scenario(args.config)
    try:
        eps_list = [float(tok) for tok in args.epsilons.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad epsilon list: {args.epsilons!r}") from exc
    report = sweep_epsilon(config, eps_list)
    _write_sweep_outputs(Path(args.out), report)
    if any(entry["error"] is not None for entry in report.entries):
        for entry in report.entries:
            if entry["error"]:
                print(f"eps={entry['epsilon']:g}: {entry['error']}", file=sys.stderr)
        return 2
    if any(not entry["verdicts"]["overall"] for entry in report.entries):
        return 3
    return 0


def _fail(checks: list, name: str, message: str):
    checks.append((name, False, message))


def _ok(checks: list, name: str):
    checks.append((name, True, ""))


def _cmd_verify(args) -> int:
    out = Path(args.out)
    ledger_path = out / "ledger.csv"
    meta_path = out / "meta.json"
    if not ledger_path.is_file() or not meta_path.is_file():
        print(f"{out}: not a finished run directory", file=sys.stderr)
        return 1
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    reg = meta["regularization"]
    gsec = meta["grid"]
    grid = build_grid(
        gsec["nx"], gsec["ny"], gsec["lx"], gsec["ly"], gsec["dirichlet"]
    )

    checks = []
    rows, e0, footer = read_ledger(ledger_path)
    report = check_energy_inequality(rows, e0)
    if report["ok"]:
        _ok(checks, "energy_inequality")
    else:
        _fail(checks, "energy_inequality", "; ".join(report["issues"]))
    expected_overall = all(
        footer.get(k, False)
        for k in ("energy_inequality", "shrinking", "fineness", "monotonicity")
    )
    if (
        footer.get("energy_inequality") == report["ok"]
        and footer.get("overall") == expected_overall
        and footer.get("overall", False)
    ):
        _ok(checks, "footer")
    else:
        _fail(checks, "footer", f"stored verdicts inconsistent: {footer}")

    mask_files = sorted((out / "masks").glob("step_*.chdmask"))
    field_z = sorted((out / "fields").glob("step_*_z.chdfield"))
    if not mask_files or len(mask_files) != len(field_z):
        _fail(checks, "snapshots", "mask/field dumps missing or mismatched")
        masks, z_fields = [], []
    else:
        masks = [read_mask(p) for p in mask_files]
        z_fields = [read_field(p) for p in field_z]

    shrink_ok = all(
        not np.any(nxt[3] & ~prv[3]) for prv, nxt in zip(masks, masks[1:])
    )
    (_ok if shrink_ok else lambda c, n: _fail(c, n, "region grew"))(checks, "shrinking")

    mono_ok = all(
        np.all(nxt[4] <= prv[4]) for prv, nxt in zip(z_fields, z_fields[1:])
    )
    (_ok if mono_ok else lambda c, n: _fail(c, n, "damage increased"))(
        checks, "monotonicity"
    )

    fine_ok, cons_ok = True, True
    for (nx, ny, _t, cells), (_n, fx, fy, _tz, zvals) in zip(masks, z_fields):
        if (nx, ny, fx - 1, fy - 1) != (grid.nx, grid.ny, grid.nx, grid.ny):
            cons_ok = False
            continue
        z_field = ScalarField(grid, zvals)
        mask = maximal_admissible(threshold_mask(z_field, reg["z_tol"]))
        if not np.array_equal(mask.cells, cells):
            cons_ok = False
        ok, _measure = check_fineness(mask, z_field, reg["eta_fineness"], reg["z_tol"])
        fine_ok = fine_ok and ok
    (_ok if fine_ok else lambda c, n: _fail(c, n, "fineness violated"))(
        checks, "fineness"
    )
    (_ok if cons_ok else lambda c, n: _fail(c, n, "mask does not match damage field"))(
        checks, "mask_consistency"
    )

    events_path = out / "events.json"
    ev_ok, ev_msg = True, ""
    if events_path.is_file():
        events = json.loads(events_path.read_text(encoding="utf-8"))
        total_jump = 0.0
        for ev in events:
            total_jump += ev["jump"]
            if ev["jump"] < -1e-10 * (1.0 + abs(ev["energy_before"])):
                ev_ok, ev_msg = False, "negative energy jump"
        if rows and abs(rows[-1].J_cum - total_jump) > 1e-9 * (1.0 + abs(total_jump)):
            ev_ok, ev_msg = False, "ledger J_cum does not match events"
    else:
        ev_ok, ev_msg = False, "events.json missing"
    (_ok if ev_ok else lambda c, n: _fail(c, n, ev_msg))(checks, "events")

    failed = [name for name, good, _ in checks if not good]
    for name, good, message in checks:
        line = f"verify {name}: {'pass' if good else 'fail'}"
        if message:
            line += f" ({message})"
        print(line)
    return 3 if failed else 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems must exit 1, not argparse's 2
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="chdsim",
        description="Damage-coupled phase separation simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario and write outputs")
    p_run.add_argument("--config", required=True, help="scenario JSON file")
    p_run.add_argument("--out", required=True, help="output directory")

    p_sweep = sub.add_parser("sweep", help="run the scenario across epsilons")
    p_sweep.add_argument("--config", required=True, help="scenario JSON file")
    p_sweep.add_argument(
        "--epsilons", required=True, help="comma-separated, strictly decreasing"
    )
    p_sweep.add_argument("--out", required=True, help="output directory")

    p_verify = sub.add_parser("verify", help="re-check a finished run directory")
    p_verify.add_argument("--out", required=True, help="run output directory")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_verify(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, FileNotFoundError, IsADirectoryError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except VerificationError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
