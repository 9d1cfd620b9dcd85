"""Canonical scenario builders used by the acceptance checks and docs.

Three constructions:

* ``trivial``: uniform stable state, everything an exact fixed point.
* ``spinodal``: seeded random concentration about mean zero on a 32x32
  grid; phase separation with mild damage activity, the whole region
  staying anchored.
* ``island``: a weak vertical seam (three node columns at low z) splits
  the square in front of a damaging bias f(z) = gamma z; the seam
  interior fails in the single step of the run, the right block loses
  its anchoring, and exactly one exclusion event fires.
"""

from __future__ import annotations

from dataclasses import replace
from functools import partial

import numpy as np

from .material import (
    MaterialModel,
    RegularizationParams,
    default_model,
    from_homogeneous,
    isotropic_stiffness,
)
from .stepper import ScenarioConfig


def _bias_f(z, gamma):
    return gamma * np.asarray(z, dtype=float)


def _bias_f_prime(z, gamma):
    return np.full_like(np.asarray(z, dtype=float), gamma)


def with_damage_bias(model: MaterialModel, gamma: float) -> MaterialModel:
    """Replace the damage potential by f(z) = gamma z (gamma >= 0).

    A positive slope drives damage even without stored elastic energy;
    f stays nonnegative on [0, 1] so exclusion jumps remain nonnegative.
    """
    if gamma < 0.0:
        raise ValueError("damage bias slope must be nonnegative")
    return replace(
        model,
        f=partial(_bias_f, gamma=gamma),
        f_prime=partial(_bias_f_prime, gamma=gamma),
        meta={**model.meta, "f": f"bias*{gamma!r}"},
    )


def trivial_config() -> ScenarioConfig:
    """Uniform stable state; every step reproduces it exactly."""
    return ScenarioConfig(
        nx=4,
        ny=4,
        lx=1.0,
        ly=1.0,
        dirichlet="left",
        model=default_model(),
        reg=RegularizationParams(epsilon=1e-4, delta=0.0, tau=0.1, p=3.0),
        t_end=1.0,
        c0_mean=0.0,
        c0_amp=0.0,
        seed=1,
        z0=1.0,
        name="trivial",
    )


def spinodal_config() -> ScenarioConfig:
    """Seeded spinodal decomposition with mild damage activity.

    beta = 0.01 puts part of the noisy concentration field above the
    damage threshold, so z creeps downward while staying far from zero:
    the admissible region remains the whole square.
    """
    return ScenarioConfig(
        nx=32,
        ny=32,
        lx=1.0,
        ly=1.0,
        dirichlet="left",
        model=default_model(beta=0.01),
        reg=RegularizationParams(epsilon=1e-2, delta=0.0, tau=1e-3, p=3.0),
        t_end=0.2,
        c0_mean=0.0,
        c0_amp=0.7,
        seed=20121219,
        z0=1.0,
        snapshot_every=50,
        name="spinodal",
    )


def island_z0(nx: int = 8, ny: int = 8) -> np.ndarray:
    """Damage pattern with a weak three-column seam down the middle."""
    z = np.ones((ny + 1, nx + 1))
    z[:, 3:6] = 0.02
    return z.reshape(-1)


def island_config() -> ScenarioConfig:
    """Single-step run whose weak seam fails and strands the right block.

    The damaging bias gamma = 0.6 overcomes the gradient-energy pull of
    the seam walls only on the flat interior column, which drops to
    exactly zero; the two wall columns stay pinned by their steep
    neighbors.  Both cell columns touching the dead nodes leave the
    threshold mask, the right block loses its path to the left
    (Dirichlet) edge, and the step records one exclusion event.
    """
    model = with_damage_bias(
        from_homogeneous(isotropic_stiffness(1.0, 1.0), np.zeros(3)), 0.6
    )
    return ScenarioConfig(
        nx=8,
        ny=8,
        lx=1.0,
        ly=1.0,
        dirichlet="left",
        model=model,
        reg=RegularizationParams(epsilon=1e-4, delta=0.0, tau=0.5, p=3.0),
        t_end=0.5,
        c0_mean=0.0,
        c0_amp=0.0,
        seed=1,
        z0=island_z0(),
        name="island",
    )


CANONICAL = {
    "trivial": trivial_config,
    "spinodal": spinodal_config,
    "island": island_config,
}
