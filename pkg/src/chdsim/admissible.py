"""Admissible regions, exclusion events, and fineness bookkeeping.

Mechanics is only well posed on material that is still connected to the
Dirichlet boundary.  The admissible part of a cell mask is the union of
its 4-connected components that own at least one Dirichlet boundary
edge; components that lose their anchoring are excluded, the damage
field is zeroed there, and the energy released by the cutoff is recorded
as a jump event.  The region history of a run must shrink in time, and
the mismatch between the tracked region and the exact admissible set of
the current damage field is the fineness measure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import VerificationError
from .grid import GridSpec, ScalarField


@dataclass
class RegionMask:
    """Boolean cell mask over a grid."""

    grid: GridSpec
    cells: np.ndarray

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=bool)
        if self.cells.shape != (self.grid.n_cells,):
            raise ValueError("region mask shape mismatch")

    def node_mask(self) -> np.ndarray:
        """Nodes belonging to at least one retained cell."""
        keep = np.zeros(self.grid.n_nodes, dtype=bool)
        keep[self.grid.conn[self.cells]] = True
        return keep

    def area(self) -> float:
        return float(self.cells.sum()) * self.grid.dx * self.grid.dy

    def is_subset_of(self, other: "RegionMask") -> bool:
        return bool(np.all(other.cells[self.cells]))

    def same_as(self, other: "RegionMask") -> bool:
        return bool(np.array_equal(self.cells, other.cells))


@dataclass(frozen=True)
class ExclusionEvent:
    """One admissibility jump: material removed at a single time.

    ``removed_cells`` are the above-threshold cells that lost their
    anchoring, ``zeroed_nodes`` the nodes whose damage value was reset
    to zero.  The jump magnitude is the drop of the tracked free energy
    across the cutoff and may not be negative.
    """

    time: float
    removed_cells: tuple
    zeroed_nodes: tuple
    energy_before: float
    energy_after: float
    jump: float

    def to_record(self) -> dict:
        return {
            "time": self.time,
            "removed_cells": list(self.removed_cells),
            "zeroed_nodes": list(self.zeroed_nodes),
            "energy_before": self.energy_before,
            "energy_after": self.energy_after,
            "jump": self.jump,
        }


def threshold_mask(z: ScalarField, z_tol: float) -> RegionMask:
    """Cells whose four nodes all carry z > z_tol."""
    keep = np.all(z.values[z.grid.conn] > z_tol, axis=1)
    return RegionMask(z.grid, keep)


def maximal_admissible(mask: RegionMask, dirichlet_cells=None) -> RegionMask:
    """Union of 4-connected components owning a Dirichlet boundary edge.

    ``dirichlet_cells`` defaults to the grid's own Dirichlet cell list.
    The result is contained in ``mask`` and the operation is idempotent.
    """
    grid = mask.grid
    if dirichlet_cells is None:
        dirichlet_cells = grid.dirichlet_cells
    cells_2d = mask.cells.reshape(grid.ny, grid.nx)
    labels, n_comp = ndimage.label(cells_2d)
    if n_comp == 0:
        return RegionMask(grid, np.zeros(grid.n_cells, dtype=bool))
    flat = labels.reshape(-1)
    anchored = np.unique(flat[np.asarray(dirichlet_cells, dtype=int)])
    anchored = anchored[anchored > 0]
    keep = np.isin(flat, anchored)
    return RegionMask(grid, keep)


def apply_exclusion(
    z: ScalarField,
    mask: RegionMask,
    *,
    z_tol: float = 1e-8,
    time: float = 0.0,
    energy_before: float = None,
    energy_after=None,
):
    """Realize the jump rule: zero z outside the retained region.

    ``mask`` must be the maximal admissible region of the threshold mask
    of ``z`` at ``z_tol``.  Returns (z_new, event); the event is None
    when no nodal value changes (already-zero nodes leaving the region
    are silent).  The ledger context is passed as ``energy_before``
    (energy of the pre-jump state) and ``energy_after`` (callable
    evaluating the post-jump state on the new region); with both given
    the event's jump is checked to be nonnegative.
    """
    keep_nodes = mask.node_mask()
    new_vals = np.where(keep_nodes, z.values, 0.0)
    changed = np.flatnonzero(new_vals != z.values)
    if changed.size == 0:
        return z, None

    z_new = ScalarField(z.grid, new_vals)
    above = threshold_mask(z, z_tol)
    removed = np.flatnonzero(above.cells & ~mask.cells)
    if energy_before is not None and energy_after is not None:
        e_minus = float(energy_before)
        e_plus = float(energy_after(z_new))
        jump = e_minus - e_plus
        if jump < -1e-10 * (1.0 + abs(e_minus)):
            raise VerificationError(
                f"exclusion raised the energy by {-jump:.3e}"
            )
    else:
        e_minus = e_plus = jump = 0.0
    event = ExclusionEvent(
        time=time,
        removed_cells=tuple(int(i) for i in removed),
        zeroed_nodes=tuple(int(i) for i in changed),
        energy_before=e_minus,
        energy_after=e_plus,
        jump=jump,
    )
    return z_new, event


def check_shrinking(mask_history) -> bool:
    """True iff each mask is contained in every earlier one.

    Containment is transitive, so consecutive pairs suffice.
    """
    masks = list(mask_history)
    return all(b.is_subset_of(a) for a, b in zip(masks, masks[1:]))


def check_fineness(mask: RegionMask, z: ScalarField, eta: float, z_tol: float = 1e-8):
    """Compare the tracked region against the exact admissible set.

    Returns (ok, measure): measure is the cell area of mask minus the
    maximal admissible region of {z > z_tol}; ok requires the latter to
    be contained in the mask and the measure to stay below eta.
    """
    if eta <= 0.0:
        raise ValueError("fineness tolerance must be positive")
    exact = maximal_admissible(threshold_mask(z, z_tol))
    contained = exact.is_subset_of(mask)
    extra = mask.cells & ~exact.cells
    measure = float(extra.sum()) * mask.grid.dx * mask.grid.dy
    return bool(contained and measure < eta), measure


def full_mask(grid: GridSpec) -> RegionMask:
    return RegionMask(grid, np.ones(grid.n_cells, dtype=bool))


# ---------------------------------------------------------------------------
# mask dumps
# ---------------------------------------------------------------------------
#
# Format: one ASCII header line
#     CHDMASK <nx> <ny> <time>\n
# followed by nx * ny bytes, 0 or 1, in cell order (row-major, y outer).


def write_mask(path, mask: RegionMask, time: float):
    header = f"CHDMASK {mask.grid.nx} {mask.grid.ny} {time!r}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(mask.cells.astype(np.uint8).tobytes())


def read_mask(path):
    """Read a CHDMASK dump; returns (nx, ny, time, cells bool array)."""
    with open(path, "rb") as fh:
        header = bytearray()
        while True:
            ch = fh.read(1)
            if not ch:
                raise ValueError("truncated mask dump header")
            if ch == b"\n":
                break
            header.extend(ch)
        parts = header.decode("ascii").split()
        if len(parts) != 4 or parts[0] != "CHDMASK":
            raise ValueError("not a CHDMASK dump")
        nx, ny, time = int(parts[1]), int(parts[2]), float(parts[3])
        raw = fh.read(nx * ny)
        if len(raw) != nx * ny:
            raise ValueError("truncated mask dump payload")
        cells = np.frombuffer(raw, dtype=np.uint8)
        if not np.all((cells == 0) | (cells == 1)):
            raise ValueError("mask dump contains bytes other than 0/1")
    return nx, ny, time, cells.astype(bool)