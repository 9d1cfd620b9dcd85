"""Constitutive model bundle.

The elastic energy density has the product structure

    W(c, e, z) = g(z) * phi(c, e),
    phi(c, e)  = phi1 e : e + phi2(c) : e + phi3(c),

with phi1 a symmetric positive-definite map on symmetric 2x2 tensors,
phi2 affine-growth in c and phi3 quadratic-growth in c.  Symmetric
tensors are stored as 3-vectors (t_xx, t_yy, t_xy), so the double
contraction carries a factor 2 on the shear slot.

The degenerate special case W = z/2 * C(e - e*(c)) : (e - e*(c)) is
reached through :func:`from_homogeneous`, which expands the square into
the product structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import ConfigError

# Metric of the 3-vector tensor representation: A:B = a^T METRIC b.
METRIC = np.diag([1.0, 1.0, 2.0])


def tensor_inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Double contraction of symmetric tensors in 3-vector storage."""
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + 2.0 * a[..., 2] * b[..., 2]


def isotropic_stiffness(lam: float, mu: float) -> np.ndarray:
    """Matrix of e -> 2 mu e + lam tr(e) I in 3-vector storage."""
    return np.array(
        [
            [2.0 * mu + lam, lam, 0.0],
            [lam, 2.0 * mu + lam, 0.0],
            [0.0, 0.0, 2.0 * mu],
        ]
    )


@dataclass
class RegularizationParams:
    """Regularization and discretization constants in force for a run.

    epsilon  - stiffness/mobility floor of the regularized system
    delta    - viscosity coefficient on the concentration increment
    tau      - time step
    p        - damage gradient exponent, must exceed the space dimension 2
    z_tol    - complete-damage threshold for the admissible-region mask
    eta_fineness - admissible window for the region jump rule
    delta_u  - optional quartic displacement-gradient regularization
    """

    epsilon: float
    delta: float
    tau: float
    p: float
    z_tol: float = 1.0e-8
    eta_fineness: float = 0.05
    delta_u: float = 0.0

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ConfigError("epsilon must be nonnegative")
        if self.delta < 0.0 or self.delta_u < 0.0:
            raise ConfigError("viscosity coefficients must be nonnegative")
        if self.tau <= 0.0:
            raise ConfigError("time step must be positive")
        if self.p <= 2.0:
            raise ConfigError("damage gradient exponent must exceed 2")
        if self.z_tol <= 0.0 or self.eta_fineness <= 0.0:
            raise ConfigError("z_tol and eta_fineness must be positive")


@dataclass
class MaterialModel:
    """Callable bundle of constitutive functions and their derivatives.

    All scalar callables are vectorized over numpy arrays.  ``phi2`` maps
    c to a tensor 3-vector with shape c.shape + (3,).  Second derivatives
    of the coupling terms are needed by the implicit concentration solve.
    """

    phi1_mat: np.ndarray
    phi2: Callable
    phi2_c: Callable
    phi3: Callable
    phi3_c: Callable
    phi3_cc: Callable
    g: Callable
    g_prime: Callable
    f: Callable
    f_prime: Callable
    m: Callable
    psi: Callable
    psi_prime: Callable
    psi_vex_prime: Callable
    psi_vex_cc: Callable
    psi_cave_prime: Callable
    phi2_cc: Callable = None
    r_growth: float = 3.0
    eta_slope: float = 1.0
    meta: dict = field(default_factory=dict)

    def apply_phi1(self, e: np.ndarray) -> np.ndarray:
        return e @ self.phi1_mat.T


def phi(model: MaterialModel, c: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Undamaged elastic density phi(c, e) = phi1 e:e + phi2(c):e + phi3(c)."""
    c = np.asarray(c, dtype=float)
    e = np.asarray(e, dtype=float)
    return (
        tensor_inner(model.apply_phi1(e), e)
        + tensor_inner(model.phi2(c), e)
        + model.phi3(c)
    )


def w_and_derivatives(model: MaterialModel, c, e, z, eps: float):
    """Energy density W^eps and its three partial derivatives.

    Returns (W, W_e, W_c, W_z) where W_e is a tensor 3-vector field and
    the floor eps enters the e- and c-derivatives through the common
    prefactor g(z) + eps but drops out of the z-derivative.
    """
    c = np.asarray(c, dtype=float)
    e = np.asarray(e, dtype=float)
    z = np.asarray(z, dtype=float)
    phi_val = phi(model, c, e)
    pref = model.g(z) + eps
    w = pref * phi_val
    w_e = pref[..., None] * (2.0 * model.apply_phi1(e) + model.phi2(c))
    w_c = pref * (tensor_inner(model.phi2_c(c), e) + model.phi3_c(c))
    w_z = model.g_prime(z) * phi_val
    return w, w_e, w_c, w_z


def w_cc(model: MaterialModel, c, e, z, eps: float) -> np.ndarray:
    """Second c-derivative of W^eps, used by the implicit Newton solve."""
    c = np.asarray(c, dtype=float)
    pref = model.g(np.asarray(z, dtype=float)) + eps
    out = model.phi3_cc(c)
    if model.phi2_cc is not None:
        out = out + tensor_inner(model.phi2_cc(c), np.asarray(e, dtype=float))
    return pref * out


def mobility(model: MaterialModel, z, eps: float) -> np.ndarray:
    """Regularized mobility m(z) + eps."""
    return model.m(np.asarray(z, dtype=float)) + eps


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------


def _poly_psi(c):
    c = np.asarray(c, dtype=float)
    return 0.25 * (c * c - 1.0) ** 2


def _poly_psi_prime(c):
    c = np.asarray(c, dtype=float)
    return c * (c * c - 1.0)


def _poly_psi_vex_prime(c):
    c = np.asarray(c, dtype=float)
    return c**3


def _poly_psi_vex_cc(c):
    c = np.asarray(c, dtype=float)
    return 3.0 * c * c


def _poly_psi_cave_prime(c):
    return -np.asarray(c, dtype=float)


def _linear(c, slope, offset):
    return slope * np.asarray(c, dtype=float) + offset


def _const(c, value):
    c = np.asarray(c, dtype=float)
    return np.full(c.shape, value) if c.shape else float(value)


def _quadratic(c, a2, a1, a0):
    c = np.asarray(c, dtype=float)
    return a2 * c * c + a1 * c + a0


def _tensor_linear(c, slope_vec, offset_vec):
    c = np.asarray(c, dtype=float)
    return c[..., None] * slope_vec + offset_vec


def _tensor_const(c, vec):
    c = np.asarray(c, dtype=float)
    return np.broadcast_to(vec, c.shape + (3,)).copy()


def _identity_fn(z):
    return np.asarray(z, dtype=float)


def _ones_fn(z):
    z = np.asarray(z, dtype=float)
    return np.ones(z.shape) if z.shape else 1.0


def _check_spd(c_mat: np.ndarray) -> float:
    """Smallest Rayleigh quotient of a tensor map against the contraction metric."""
    s = c_mat.T @ METRIC
    s = 0.5 * (s + s.T)
    eigs = scipy.linalg.eigvalsh(s, METRIC)
    return float(eigs.min())


def from_homogeneous(
    c_mat: np.ndarray,
    e_star_coeff: np.ndarray,
    e_star_offset=np.zeros(3),
    *,
    beta: float = 0.1,
    r_growth: float = 3.0,
) -> MaterialModel:
    """Expand W = z/2 * C(e - e*(c)):(e - e*(c)) into product form.

    ``c_mat`` is the stiffness map in 3-vector storage and the eigenstrain
    is affine, e*(c) = c * e_star_coeff + e_star_offset.  The expansion is

        phi1 = C/2,  phi2(c) = -C e*(c),  phi3(c) = C e*(c) : e*(c) / 2,

    and g(z) = z, so that g(0) = 0 realizes complete damage.
    """
    c_mat = np.asarray(c_mat, dtype=float)
    if c_mat.shape != (3, 3):
        raise ConfigError("stiffness map must be a 3x3 matrix in tensor storage")
    if not np.allclose(c_mat.T @ METRIC, METRIC @ c_mat, rtol=1e-12, atol=1e-12):
        raise ConfigError("stiffness map must be symmetric")
    if _check_spd(c_mat) <= 0.0:
        raise ConfigError("stiffness map must be positive definite")
    a = np.asarray(e_star_coeff, dtype=float)
    b = np.asarray(e_star_offset, dtype=float)

    c_a = c_mat @ a
    c_b = c_mat @ b
    # phi3(c) = 1/2 <C e*, e*> expands to a quadratic in c.
    q2 = 0.5 * float(tensor_inner(c_a, a))
    q1 = float(tensor_inner(c_a, b))
    q0 = 0.5 * float(tensor_inner(c_b, b))

    return MaterialModel(
        phi1_mat=0.5 * c_mat,
        phi2=partial(_tensor_linear, slope_vec=-c_a, offset_vec=-c_b),
        phi2_c=partial(_tensor_const, vec=-c_a),
        phi3=partial(_quadratic, a2=q2, a1=q1, a0=q0),
        phi3_c=partial(_linear, slope=2.0 * q2, offset=q1),
        phi3_cc=partial(_const, value=2.0 * q2),
        g=_identity_fn,
        g_prime=_ones_fn,
        f=partial(_linear, slope=-beta, offset=beta),
        f_prime=partial(_const, value=-beta),
        m=_identity_fn,
        psi=_poly_psi,
        psi_prime=_poly_psi_prime,
        psi_vex_prime=_poly_psi_vex_prime,
        psi_vex_cc=_poly_psi_vex_cc,
        psi_cave_prime=_poly_psi_cave_prime,
        r_growth=r_growth,
        eta_slope=1.0,
        meta={
            "kind": "homogeneous",
            "c_mat": c_mat.tolist(),
            "e_star_coeff": a.tolist(),
            "e_star_offset": b.tolist(),
            "beta": beta,
        },
    )


def default_model(
    lam: float = 1.0,
    mu: float = 1.0,
    alpha: float = 0.2,
    beta: float = 0.1,
    r_growth: float = 3.0,
) -> MaterialModel:
    """Isotropic homogeneous model with dilational eigenstrain alpha*c*I."""
    c_mat = isotropic_stiffness(lam, mu)
    model = from_homogeneous(
        c_mat, np.array([alpha, alpha, 0.0]), beta=beta, r_growth=r_growth
    )
    model.meta.update({"lam": lam, "mu": mu, "alpha": alpha})
    return model


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def _growth_estimate(fn, bound_fn, samples):
    """Smallest C with |fn| <= C * bound on the samples, plus divergence flag.

    Growth beyond the declared bound shows up as the ratio still climbing
    on the outer half of the (log-spaced) sample range.
    """
    vals = np.abs(np.asarray(fn(samples), dtype=float))
    if vals.ndim > 1:
        vals = np.sqrt(tensor_inner(vals, vals))
    ratios = vals / bound_fn(np.abs(samples))
    c_full = float(ratios.max())
    inner = np.abs(samples) <= np.abs(samples).max() / 8.0
    c_inner = float(ratios[inner].max()) if inner.any() else c_full
    diverges = c_full > 4.0 * max(c_inner, 1e-300)
    witness = float(samples[int(np.argmax(ratios))])
    return {"ok": not diverges, "constant": c_full, "witness": witness}


def validate_model(model: MaterialModel) -> dict:
    """Check structural assumptions; returns a per-condition report.

    Verified: positive definiteness of phi1, complete damage g(0) = 0 with
    slope g' bounded below by a positive eta, degenerate mobility
    (m(z) = 0 iff z = 0), nonnegative psi and f, affine/quadratic/r-growth
    of phi2, phi3 and psi', and consistency of the convex-concave split.
    """
    report = {}
    zs = np.linspace(0.0, 1.0, 2001)
    cs = np.concatenate([-np.logspace(-3, 4, 600), [0.0], np.logspace(-3, 4, 600)])

    pd_floor = _check_spd(2.0 * model.phi1_mat)
    report["phi1_positive_definite"] = {
        "ok": pd_floor > 0.0,
        "constant": pd_floor,
        "witness": None,
    }

    g0 = float(model.g(0.0))
    gp = np.asarray(model.g_prime(zs), dtype=float)
    eta_est = float(gp.min())
    report["complete_damage_g"] = {
        "ok": abs(g0) < 1e-14 and eta_est > 0.0,
        "constant": eta_est,
        "witness": float(zs[int(np.argmin(gp))]),
    }

    m0 = float(model.m(0.0))
    mz = np.asarray(model.m(zs[1:]), dtype=float)
    report["mobility_degenerate"] = {
        "ok": abs(m0) < 1e-14 and bool(np.all(mz > 0.0)),
        "constant": float(mz.min()),
        "witness": float(zs[1:][int(np.argmin(mz))]),
    }

    report["phi2_affine_growth"] = _growth_estimate(
        model.phi2, lambda a: 1.0 + a, cs
    )
    report["phi2_c_affine_growth"] = _growth_estimate(
        model.phi2_c, lambda a: 1.0 + a, cs
    )
    report["phi3_quadratic_growth"] = _growth_estimate(
        model.phi3, lambda a: 1.0 + a * a, cs
    )
    report["phi3_c_quadratic_growth"] = _growth_estimate(
        model.phi3_c, lambda a: 1.0 + a * a, cs
    )
    report["psi_prime_r_growth"] = _growth_estimate(
        model.psi_prime, lambda a: 1.0 + a**model.r_growth, cs
    )

    psi_vals = np.asarray(model.psi(cs), dtype=float)
    report["psi_nonnegative"] = {
        "ok": bool(np.all(psi_vals >= -1e-14)),
        "constant": float(psi_vals.min()),
        "witness": float(cs[int(np.argmin(psi_vals))]),
    }
    f_vals = np.asarray(model.f(zs), dtype=float)
    report["f_nonnegative"] = {
        "ok": bool(np.all(f_vals >= -1e-14)),
        "constant": float(f_vals.min()),
        "witness": float(zs[int(np.argmin(f_vals))]),
    }

    cs_small = np.linspace(-30.0, 30.0, 1201)
    split_gap = np.abs(
        np.asarray(model.psi_prime(cs_small))
        - np.asarray(model.psi_vex_prime(cs_small))
        - np.asarray(model.psi_cave_prime(cs_small))
    )
    scale = 1.0 + np.abs(np.asarray(model.psi_prime(cs_small)))
    rel = split_gap / scale
    report["psi_split_consistent"] = {
        "ok": bool(np.all(rel < 1e-10)),
        "constant": float(rel.max()),
        "witness": float(cs_small[int(np.argmax(rel))]),
    }
    vex_cc = np.asarray(model.psi_vex_cc(cs_small), dtype=float)
    report["psi_vex_convex"] = {
        "ok": bool(np.all(vex_cc >= -1e-14)),
        "constant": float(vex_cc.min()),
        "witness": float(cs_small[int(np.argmin(vex_cc))]),
    }

    report["ok"] = all(v["ok"] for k, v in report.items() if isinstance(v, dict))
    return report
