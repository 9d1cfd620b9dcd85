"""Constitutive functions, their derivatives, and parameter validation."""

import numpy as np
import pytest

from chdsim.errors import ConfigError
from chdsim.material import (
    METRIC,
    MaterialModel,
    RegularizationParams,
    default_model,
    from_homogeneous,
    isotropic_stiffness,
    mobility,
    phi,
    tensor_inner,
    validate_model,
    w_and_derivatives,
    w_cc,
)

import oracles


def test_isotropic_stiffness_entries():
    c = isotropic_stiffness(1.0, 1.0)
    assert np.allclose(c, [[3.0, 1.0, 0.0], [1.0, 3.0, 0.0], [0.0, 0.0, 2.0]])


def test_stiffness_reproduces_isotropic_energy():
    lam, mu = 1.7, 0.6
    c = isotropic_stiffness(lam, mu)
    rng = np.random.default_rng(0)
    for e in rng.normal(size=(20, 3)):
        trace = e[0] + e[1]
        frob = e[0] ** 2 + e[1] ** 2 + 2.0 * e[2] ** 2
        assert tensor_inner(c @ e, e) == pytest.approx(
            lam * trace**2 + 2.0 * mu * frob, rel=1e-12
        )


def test_tensor_inner_counts_offdiagonal_twice():
    a = np.array([1.0, 2.0, 3.0])
    b = np.array([4.0, 5.0, 6.0])
    assert tensor_inner(a, b) == pytest.approx(4.0 + 10.0 + 2.0 * 18.0)
    assert np.allclose(METRIC, np.diag([1.0, 1.0, 2.0]))


def test_default_model_phi3_frozen_values():
    model = default_model()
    # dilational eigenstrain 0.2 c I under lam = mu = 1
    assert model.phi3(1.0) == pytest.approx(0.16, abs=1e-15)
    assert model.phi3(0.0) == pytest.approx(0.0, abs=1e-15)
    assert model.phi3_c(1.0) == pytest.approx(0.32, abs=1e-15)
    assert model.phi3_cc(0.3) == pytest.approx(0.32, abs=1e-15)
    assert phi(model, 0.0, np.zeros(3)) == pytest.approx(0.0, abs=1e-15)
    assert phi(model, 1.0, np.zeros(3)) == pytest.approx(0.16, abs=1e-15)


def test_phi_is_shifted_quadratic():
    # phi(c, e) = 1/2 C(e - e*(c)) : (e - e*(c)) must be nonnegative and
    # vanish exactly on the eigenstrain
    model = default_model(lam=2.0, mu=0.5, alpha=0.3)
    rng = np.random.default_rng(1)
    for c in rng.uniform(-2, 2, size=12):
        e_star = np.array([0.3 * c, 0.3 * c, 0.0])
        assert phi(model, c, e_star) == pytest.approx(0.0, abs=1e-13)
        e = e_star + rng.normal(size=3)
        assert phi(model, c, e) > 0.0


def test_double_well_values_and_split():
    model = default_model()
    for c in (-1.0, 0.0, 1.0, 0.5, 2.0):
        assert model.psi(c) == pytest.approx(0.25 * (c**2 - 1.0) ** 2, rel=1e-14)
    assert model.psi(0.0) == pytest.approx(0.25)
    assert model.psi(1.0) == 0.0
    cs = np.linspace(-2.5, 2.5, 41)
    total = model.psi_vex_prime(cs) + model.psi_cave_prime(cs)
    assert np.allclose(total, model.psi_prime(cs), atol=1e-13)
    assert np.all(model.psi_vex_cc(cs) >= 0.0)


def test_damage_functions():
    model = default_model(beta=0.25)
    assert model.g(0.0) == 0.0
    assert model.g(1.0) == 1.0
    assert model.f(1.0) == pytest.approx(0.0)
    assert model.f(0.0) == pytest.approx(0.25)
    assert model.f_prime(0.3) == pytest.approx(-0.25)
    assert model.m(0.7) == pytest.approx(0.7)


def test_mobility_floor():
    model = default_model()
    assert mobility(model, 0.0, 0.0) == 0.0
    assert mobility(model, 0.0, 1e-3) == pytest.approx(1e-3)
    assert mobility(model, 1.0, 0.0) == pytest.approx(1.0)
    assert np.all(mobility(model, np.linspace(0, 1, 9), 1e-4) > 0.0)


def test_scalar_derivatives_match_fd():
    model = default_model(beta=0.17)
    rng = np.random.default_rng(2)
    pts = rng.uniform(-2.0, 2.0, size=400)
    for c in pts:
        for fn, dfn in (
            (model.psi, model.psi_prime),
            (model.phi3, model.phi3_c),
            (model.phi3_c, model.phi3_cc),
            (model.f, model.f_prime),
            (model.g, model.g_prime),
        ):
            fd = oracles.central_diff(lambda v: float(fn(v)), float(c))
            assert abs(fd - float(dfn(c))) <= 1e-5 * max(1.0, abs(float(dfn(c))))


def test_w_derivatives_match_fd():
    model = default_model()
    eps = 1e-3
    rng = np.random.default_rng(3)
    n_pts = 300
    cs = rng.uniform(-1.5, 1.5, size=n_pts)
    es = rng.uniform(-1.0, 1.0, size=(n_pts, 3))
    zs = rng.uniform(0.0, 1.0, size=n_pts)
    w, w_e, w_c, w_z = w_and_derivatives(model, cs, es, zs, eps)
    h = 1e-5

    def w_of(c, e, z):
        return float(w_and_derivatives(model, c, e, z, eps)[0])

    for i in range(n_pts):
        c, e, z = float(cs[i]), es[i], float(zs[i])
        fd_c = (w_of(c + h, e, z) - w_of(c - h, e, z)) / (2 * h)
        assert abs(fd_c - w_c[i]) <= 1e-5 * max(1.0, abs(w_c[i]))
        fd_z = (w_of(c, e, z + h) - w_of(c, e, z - h)) / (2 * h)
        assert abs(fd_z - w_z[i]) <= 1e-5 * max(1.0, abs(w_z[i]))
        # perturbing storage component k moves the tensor by h in entry k
        # (both off-diagonals for k = 2), so dW = (METRIC w_e)_k h
        for k in range(3):
            step = np.zeros(3)
            step[k] = h
            fd_e = (w_of(c, e + step, z) - w_of(c, e - step, z)) / (2 * h)
            target = METRIC[k, k] * w_e[i, k]
            assert abs(fd_e - target) <= 1e-5 * max(1.0, abs(target))


def test_w_z_excludes_stiffness_floor():
    # the driving force of damage must not see the eps floor
    model = default_model()
    e = np.array([0.4, -0.1, 0.2])
    _, _, _, w_z_a = w_and_derivatives(model, 0.5, e, 0.7, 0.0)
    _, _, _, w_z_b = w_and_derivatives(model, 0.5, e, 0.7, 0.5)
    assert w_z_a == pytest.approx(w_z_b, rel=1e-14)
    assert w_z_a == pytest.approx(phi(model, 0.5, e), rel=1e-14)


def test_w_cc_is_second_c_derivative():
    model = default_model()
    e = np.array([0.2, 0.1, -0.3])
    z, eps = 0.6, 1e-2
    h = 1e-4
    for c in (-0.7, 0.0, 1.2):
        up = w_and_derivatives(model, c + h, e, z, eps)[2]
        dn = w_and_derivatives(model, c - h, e, z, eps)[2]
        fd = (float(up) - float(dn)) / (2 * h)
        assert abs(fd - float(w_cc(model, c, e, z, eps))) < 1e-6


def test_regularization_validation():
    RegularizationParams(epsilon=0.0, delta=0.0, tau=0.1, p=3.0)
    with pytest.raises(ConfigError):
        RegularizationParams(epsilon=-1e-3, delta=0.0, tau=0.1, p=3.0)
    with pytest.raises(ConfigError, match="exceed 2"):
        RegularizationParams(epsilon=0.0, delta=0.0, tau=0.1, p=2.0)
    with pytest.raises(ConfigError):
        RegularizationParams(epsilon=0.0, delta=0.0, tau=0.0, p=3.0)
    with pytest.raises(ConfigError):
        RegularizationParams(epsilon=0.0, delta=-0.1, tau=0.1, p=3.0)
    with pytest.raises(ConfigError):
        RegularizationParams(epsilon=0.0, delta=0.0, tau=0.1, p=3.0, z_tol=0.0)
    with pytest.raises(ConfigError):
        RegularizationParams(epsilon=0.0, delta=0.0, tau=0.1, p=3.0, eta_fineness=0.0)


def test_from_homogeneous_validation():
    good = isotropic_stiffness(1.0, 1.0)
    with pytest.raises(ConfigError):
        from_homogeneous(np.eye(2), np.zeros(3))
    bad_sym = good.copy()
    bad_sym[0, 1] = 0.5
    with pytest.raises(ConfigError):
        from_homogeneous(bad_sym, np.zeros(3))
    with pytest.raises(ConfigError):
        from_homogeneous(-good, np.zeros(3))


def test_from_homogeneous_offset_eigenstrain():
    # affine eigenstrain: phi must vanish on e*(c) = c a + b
    a = np.array([0.1, 0.2, 0.05])
    b = np.array([0.02, -0.01, 0.0])
    model = from_homogeneous(isotropic_stiffness(1.2, 0.8), a, b)
    for c in (-1.0, 0.0, 0.5):
        assert phi(model, c, c * a + b) == pytest.approx(0.0, abs=1e-14)


def test_validate_model_default_passes():
    report = validate_model(default_model())
    assert report["ok"] is True
    for name, entry in report.items():
        if isinstance(entry, dict):
            assert entry["ok"], f"{name}: {entry}"


def test_validate_model_flags_incomplete_damage():
    model = default_model()
    broken = MaterialModel(
        **{
            f.name: getattr(model, f.name)
            for f in model.__dataclass_fields__.values()
        }
    )
    broken.g = lambda z: np.asarray(z) * 0.0 + 0.5  # stiffness never vanishes
    broken.g_prime = lambda z: np.asarray(z) * 0.0
    report = validate_model(broken)
    assert not report["complete_damage_g"]["ok"]
