"""Command-line interface: parsing, exit codes, round trips."""

import dataclasses
import json

import numpy as np
import pytest

import chdsim.cli as cli
from chdsim.errors import ConfigError, SolverError
from chdsim.stepper import run as real_run


def _write(tmp_path, payload, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def _minimal(**extra):
    payload = {"grid": {"nx": 4, "ny": 4}, "t_end": 0.02}
    payload.update(extra)
    return payload


def _quick(tmp_path, **extra):
    payload = _minimal(
        regularization={"tau": 0.01, "epsilon": 1e-3},
        material={"beta": 0.01},
        initial={"c0_amp": 0.4, "seed": 3},
        output={"snapshot_every": 1},
        **extra,
    )
    return _write(tmp_path, payload)


def test_minimal_scenario_gets_defaults(tmp_path):
    config = cli.parse_scenario(_write(tmp_path, _minimal()))
    assert (config.nx, config.ny) == (4, 4)
    assert (config.lx, config.ly) == (1.0, 1.0)
    assert config.reg.epsilon == 1e-4
    assert config.reg.delta == 0.0
    assert config.reg.tau == 1e-2
    assert config.reg.p == 3.0
    assert config.t_end == 0.02
    assert config.name == "scenario"
    assert config.model.meta["alpha"] == 0.2


def test_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError, match="unknown key"):
        cli.parse_scenario(_write(tmp_path, _minimal(extra_section={})))
    with pytest.raises(ConfigError, match="grid"):
        cli.parse_scenario(
            _write(tmp_path, {"grid": {"nx": 4, "ny": 4, "bogus": 1}, "t_end": 1})
        )
    with pytest.raises(ConfigError, match="must be an object"):
        cli.parse_scenario(_write(tmp_path, {"grid": [4, 4], "t_end": 1}))


def test_rejects_missing_required(tmp_path):
    with pytest.raises(ConfigError, match="grid"):
        cli.parse_scenario(_write(tmp_path, {"t_end": 1.0}))
    with pytest.raises(ConfigError, match="t_end"):
        cli.parse_scenario(_write(tmp_path, {"grid": {"nx": 4, "ny": 4}}))
    with pytest.raises(ConfigError, match="requires 'ny'"):
        cli.parse_scenario(_write(tmp_path, {"grid": {"nx": 4}, "t_end": 1.0}))


def test_rejects_bad_json_with_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"grid": {"nx": 4,}\n}', encoding="utf-8")
    with pytest.raises(ConfigError, match=r"broken\.json:1:"):
        cli.parse_scenario(path)


def test_rejects_gradient_exponent_two(tmp_path):
    path = _write(tmp_path, _minimal(regularization={"p": 2.0}))
    with pytest.raises(ConfigError, match="exceed 2"):
        cli.parse_scenario(path)


def test_rejects_inadmissible_initial_damage(tmp_path):
    z0 = np.ones((5, 5))
    z0[:, 2] = 0.0  # severs the rightmost cell column, leaving it alive
    path = _write(tmp_path, _minimal(initial={"z0": z0.reshape(-1).tolist()}))
    with pytest.raises(ConfigError, match="not anchored"):
        cli.parse_scenario(path)


def test_run_verify_round_trip(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(_quick(tmp_path)), "--out", str(out)]) == 0
    for name in ("ledger.csv", "events.json", "meta.json", "report.png", "fields.png"):
        assert (out / name).is_file(), name
    assert list((out / "masks").glob("*.chdmask"))
    assert list((out / "fields").glob("*_z.chdfield"))

    assert cli.main(["verify", "--out", str(out)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines and all(": pass" in ln for ln in lines if ln.startswith("verify"))


def test_verify_catches_tampered_ledger(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(_quick(tmp_path)), "--out", str(out)]) == 0
    ledger = out / "ledger.csv"
    lines = ledger.read_text().splitlines()
    parts = lines[1].split(",")
    parts[2] = format(float(parts[2]) + 0.5, ".17g")  # inflate the energy
    lines[1] = ",".join(parts)
    ledger.write_text("\n".join(lines) + "\n")
    assert cli.main(["verify", "--out", str(out)]) == 3
    assert "fail" in capsys.readouterr().out


def test_verify_catches_tampered_mask(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(_quick(tmp_path)), "--out", str(out)]) == 0
    masks = sorted((out / "masks").glob("*.chdmask"))
    data = bytearray(masks[-1].read_bytes())
    data[-1] ^= 1  # flip one retained cell
    masks[-1].write_bytes(bytes(data))
    assert cli.main(["verify", "--out", str(out)]) == 3


def test_usage_errors_exit_one(capsys):
    assert cli.main(["run", "--config", "x.json"]) == 1
    assert cli.main(["frobnicate"]) == 1
    assert cli.main([]) == 1
    err = capsys.readouterr().err
    assert "usage error" in err


def test_missing_paths_exit_one(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "nope.json"), "--out", "o"]) == 1
    assert cli.main(["verify", "--out", str(tmp_path / "nothing")]) == 1


def test_run_outputs_are_deterministic(tmp_path):
    config = _quick(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", "--config", str(config), "--out", str(out1)]) == 0
    assert cli.main(["run", "--config", str(config), "--out", str(out2)]) == 0
    assert (out1 / "ledger.csv").read_bytes() == (out2 / "ledger.csv").read_bytes()
    assert (out1 / "events.json").read_bytes() == (out2 / "events.json").read_bytes()


def test_sweep_writes_table_and_figure(tmp_path, monkeypatch):
    monkeypatch.setenv("CHD_THREADS", "1")
    out = tmp_path / "sw"
    rc = cli.main(
        [
            "sweep",
            "--config",
            str(_quick(tmp_path)),
            "--epsilons",
            "1e-2,1e-3",
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    text = (out / "sweep.csv").read_text()
    assert text.startswith("epsilon,")
    assert "# spread" in text
    assert (out / "sweep.png").is_file()


def test_sweep_rejects_bad_epsilon_list(tmp_path, capsys):
    rc = cli.main(
        [
            "sweep",
            "--config",
            str(_quick(tmp_path)),
            "--epsilons",
            "1e-3,1e-2",
            "--out",
            str(tmp_path / "sw"),
        ]
    )
    assert rc == 1
    assert "configuration error" in capsys.readouterr().err


def test_solver_failure_exits_two_with_partial_flush(tmp_path, monkeypatch, capsys):
    def doomed(config):
        try:
            real_run(dataclasses.replace(config, t_end=config.reg.tau))
        except Exception:
            pass
        exc = SolverError("synthetic collapse", substep="equilibrium")
        exc.partial = real_run(dataclasses.replace(config, t_end=config.reg.tau))
        raise exc

    monkeypatch.setattr(cli, "run", doomed)
    out = tmp_path / "out"
    rc = cli.main(["run", "--config", str(_quick(tmp_path)), "--out", str(out)])
    assert rc == 2
    assert "synthetic collapse" in capsys.readouterr().err
    assert (out / "ledger.csv").is_file()  # partial results flushed


def test_failed_verdicts_exit_three(tmp_path, monkeypatch, capsys):
    def pessimist(config):
        result = real_run(config)
        result.verdicts = dict(result.verdicts, energy_inequality=False, overall=False)
        return result

    monkeypatch.setattr(cli, "run", pessimist)
    rc = cli.main(
        ["run", "--config", str(_quick(tmp_path)), "--out", str(tmp_path / "out")]
    )
    assert rc == 3
    assert "energy_inequality" in capsys.readouterr().err


def test_explicit_island_scenario_via_json(tmp_path):
    z = np.ones((5, 9))
    z[:, 3:6] = 0.02
    payload = {
        "name": "strip",
        "t_end": 0.5,
        "grid": {"nx": 8, "ny": 4, "lx": 1.0, "ly": 0.5, "dirichlet": "left"},
        "material": {"alpha": 0.0, "damage_bias": 0.6},
        "regularization": {"epsilon": 1e-4, "tau": 0.5},
        "initial": {"z0": z.reshape(-1).tolist()},
        "output": {"snapshot_every": 1},
    }
    out = tmp_path / "out"
    rc = cli.main(["run", "--config", str(_write(tmp_path, payload)), "--out", str(out)])
    assert rc == 0
    events = json.loads((out / "events.json").read_text())
    assert len(events) == 1
    assert events[0]["jump"] >= 0.0
    assert cli.main(["verify", "--out", str(out)]) == 0
