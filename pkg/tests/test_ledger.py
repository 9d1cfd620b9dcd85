"""Energy bookkeeping: closed forms, work increments, monitors, CSV."""

import numpy as np
import pytest

from chdsim.elasticity import solve_equilibrium
from chdsim.grid import ScalarField, VectorField, build_grid, sym_gradient
from chdsim.ledger import (
    LedgerRow,
    Monitors,
    check_energy_inequality,
    energy_tolerance,
    external_work_increment,
    free_energy,
    h1_norm,
    read_ledger,
    w1p_norm,
    write_ledger,
)
from chdsim.material import RegularizationParams, default_model, phi


def _reg(eps=1e-4, tau=0.1, p=3.0):
    return RegularizationParams(epsilon=eps, delta=0.0, tau=tau, p=p)


def _flat(grid, value):
    return ScalarField(grid, np.full(grid.n_nodes, float(value)))


def test_free_energy_closed_forms():
    grid = build_grid(6, 6, 1.0, 1.0, "left")
    model = default_model()
    reg = _reg(eps=1e-3)
    ones = _flat(grid, 1.0)
    # c = 0, z = 1, no displacement: only the well Psi(0) = 1/4 remains
    assert free_energy(_flat(grid, 0.0), None, ones, model, reg) == pytest.approx(
        0.25, abs=1e-14
    )
    # c = 1, z = 1, u = 0: Psi(1) = 0, f(1) = 0, W = (1 + eps) phi3(1)
    u0 = VectorField(grid, np.zeros((grid.n_nodes, 2)))
    assert free_energy(_flat(grid, 1.0), u0, ones, model, reg) == pytest.approx(
        (1.0 + reg.epsilon) * 0.16, rel=1e-13
    )
    # dead material: f(0) = beta remains, stiffness floor still sees phi
    zeros = _flat(grid, 0.0)
    expected = 0.1 + reg.epsilon * 0.16  # beta + eps * phi3(1)
    assert free_energy(_flat(grid, 1.0), u0, zeros, model, reg) == pytest.approx(
        expected, rel=1e-12
    )


def test_free_energy_region_restriction():
    grid = build_grid(4, 4, 1.0, 1.0, "left")
    model = default_model()
    reg = _reg()
    cells = np.zeros(grid.n_cells, dtype=bool)
    cells[:8] = True  # bottom half
    ones = _flat(grid, 1.0)
    val = free_energy(_flat(grid, 0.0), None, ones, model, reg, cells)
    assert val == pytest.approx(0.125, abs=1e-14)


def test_norms_of_constants():
    grid = build_grid(5, 4, 2.0, 1.0, "left")
    c = _flat(grid, 3.0)
    assert h1_norm(c) == pytest.approx(np.sqrt(9.0 * 2.0), rel=1e-13)
    assert w1p_norm(c, 3.0) == pytest.approx((27.0 * 2.0) ** (1.0 / 3.0), rel=1e-13)


def test_work_increment_equals_energy_difference():
    # for two states equilibrated at the same coefficients the trapezoid
    # work integral telescopes exactly into the elastic energy difference
    grid = build_grid(8, 8, 1.0, 1.0, "left")
    model = default_model()
    eps = 1e-3
    x, y = grid.node_xy[:, 0], grid.node_xy[:, 1]
    c = ScalarField(grid, 0.4 * np.cos(np.pi * x) * np.cos(np.pi * y))
    z = ScalarField(grid, 1.0 - 0.2 * x)

    def lift(rate):
        a = np.array([[0.05 + rate, 0.0], [0.01, -0.03 + rate]])
        return VectorField(grid, grid.node_xy @ a.T)

    b0, b1 = lift(0.0), lift(0.02)
    u0 = solve_equilibrium(c, z, b0, model, eps)
    u1 = solve_equilibrium(c, z, b1, model, eps)
    db = VectorField(grid, b1.values - b0.values)

    def elastic(u):
        e = sym_gradient(u).values
        dens = (model.g(grid.at_quads(z.values)) + eps) * phi(
            model, grid.at_quads(c.values), e
        )
        return grid.integrate_quads(dens)

    w = external_work_increment(c, z, u0, u1, db, model, eps)
    gap = abs(w - (elastic(u1) - elastic(u0)))
    assert gap <= 1e-11 * (1.0 + abs(w))


def test_monitor_uniform_damage_drop():
    grid = build_grid(5, 5, 1.0, 1.0, "left")
    model = default_model()
    reg = _reg(tau=0.1)
    mon = Monitors(model, reg)
    z_prev = _flat(grid, 1.0)
    z_new = _flat(grid, 0.81)
    mu = _flat(grid, 0.0)
    mon.accumulate_step(mu, z_prev, z_new, z_prev, None, z_new, None)
    a = mon.snapshot()
    # a4 = sqrt(||dz||^2 / tau) = 0.19 / sqrt(0.1)
    assert a[3] == pytest.approx(0.19 / np.sqrt(0.1), rel=1e-12)
    assert a[5] == 0.0 and a[6] == 0.0


def test_monitor_sups():
    grid = build_grid(5, 5, 1.0, 1.0, "left")
    model = default_model()
    reg = _reg(eps=1e-2)
    mon = Monitors(model, reg)
    c = _flat(grid, 1.0)
    z = _flat(grid, 1.0)
    u0 = VectorField(grid, np.zeros((grid.n_nodes, 2)))
    mon.observe_state(c, u0, z, None)
    assert mon.sup_c_h1 == pytest.approx(1.0, rel=1e-12)
    assert mon.sup_z_w1p == pytest.approx(1.0, rel=1e-12)
    assert mon.sup_w == pytest.approx((1.0 + reg.epsilon) * 0.16, rel=1e-12)


def _rows_for(e0, entries):
    rows = []
    w_cum = d_cum = j_cum = 0.0
    for k, (w, d_ch, d_dam, e, j_inc) in enumerate(entries, start=1):
        w_cum += w
        d_cum += d_ch + d_dam
        j_cum += j_inc
        rows.append(
            LedgerRow(
                step=k,
                t=0.1 * k,
                E=e,
                mass=0.0,
                d_ch=d_ch,
                d_dam=d_dam,
                w_ext=w,
                J_cum=j_cum,
                slack=e0 + w_cum - e - j_cum - d_cum,
                res_equil=0.0,
                res_mu=0.0,
                res_vi=0.0,
                a1=0.0,
                a2=0.0,
                a3=0.0,
                a4=0.0,
                a5=0.0,
                a6=0.0,
                a7=0.0,
                fineness=0.0,
            )
        )
    return rows


def test_energy_inequality_accepts_valid_history():
    e0 = 2.0
    rows = _rows_for(
        e0,
        [
            (0.1, 0.05, 0.02, 1.9, 0.0),
            (0.0, 0.01, 0.00, 1.8, 0.05),
            (0.2, 0.00, 0.10, 1.9, 0.0),
        ],
    )
    report = check_energy_inequality(rows, e0)
    assert report["ok"], report["issues"]
    assert report["worst_slack"] >= 0.0


def test_energy_inequality_rejects_violations():
    e0 = 1.0
    # energy grows with no work: slack goes negative
    rows = _rows_for(e0, [(0.0, 0.0, 0.0, 1.5, 0.0)])
    report = check_energy_inequality(rows, e0)
    assert not report["ok"]
    assert any("slack" in s for s in report["issues"])

    rows = _rows_for(e0, [(0.0, -0.01, 0.0, 0.9, 0.0)])
    assert not check_energy_inequality(rows, e0)["ok"]

    rows = _rows_for(e0, [(0.0, 0.0, 0.0, 0.9, 0.1), (0.0, 0.0, 0.0, 0.9, -0.05)])
    # j_cum decreasing between rows
    rows[1].J_cum = rows[0].J_cum - 0.05
    assert not check_energy_inequality(rows, e0)["ok"]

    rows = _rows_for(e0, [(0.0, 0.0, 0.0, 0.9, 0.0)])
    rows[0].slack = rows[0].slack + 1.0  # stored column tampered
    assert not check_energy_inequality(rows, e0)["ok"]


def test_energy_tolerance_scale():
    assert energy_tolerance(0.0) == pytest.approx(1e-8)
    assert energy_tolerance(-99.0) == pytest.approx(1e-6)


def test_ledger_round_trip(tmp_path):
    e0 = 0.25
    rows = _rows_for(e0, [(0.1, 0.03, 0.01, 0.2, 0.0), (0.0, 0.0, 0.0, 0.19, 0.02)])
    rows[0].res_mu = 1.25e-11
    rows[1].a4 = np.pi
    verdicts = {
        "energy_inequality": True,
        "shrinking": True,
        "fineness": False,
        "monotonicity": True,
        "overall": False,
    }
    path = tmp_path / "ledger.csv"
    write_ledger(path, rows, e0, verdicts)
    back_rows, back_e0, back_verdicts = read_ledger(path)
    assert back_e0 == e0
    assert back_verdicts == verdicts
    assert len(back_rows) == len(rows)
    for a, b in zip(rows, back_rows):
        assert a == b  # 17 significant digits round-trip doubles exactly

    (tmp_path / "bad.csv").write_text("nope\n1,2,3\n")
    with pytest.raises(ValueError):
        read_ledger(tmp_path / "bad.csv")


def test_ledger_bytes_are_ascii_and_deterministic(tmp_path):
    e0 = 1.0 / 3.0
    rows = _rows_for(e0, [(0.05, 0.001, 0.0, 0.33, 0.0)])
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_ledger(p1, rows, e0, {"overall": True})
    write_ledger(p2, rows, e0, {"overall": True})
    assert p1.read_bytes() == p2.read_bytes()
    p1.read_text(encoding="ascii")  # must not raise
