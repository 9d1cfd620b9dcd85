"""Uniform quadrilateral grid with bilinear (Q1) elements.

The computational domain is the rectangle [0, lx] x [0, ly], split into
nx * ny axis-aligned cells.  All unknown fields (concentration, chemical
potential, damage, displacement components) are nodal Q1 fields; strains
and other derived densities live on the 2x2 Gauss points of each cell.

Node numbering is row-major with y outermost: node (ix, iy) has index
iy*(nx+1) + ix.  Cell numbering follows the same convention with cell
(cx, cy) at index cy*nx + cx.  Cell connectivity is counterclockwise
starting from the lower-left corner.

A nonempty subset of boundary edges carries Dirichlet data for the
displacement.  Edges are addressed as (side, index) pairs with side in
{"left", "right", "bottom", "top"} and the index running along the side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError

_SIDES = ("left", "right", "bottom", "top")

# Reference-square corner signs, counterclockwise from lower-left.
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])
_GP = 1.0 / np.sqrt(3.0)


def _normalize_dirichlet(selector, nx: int, ny: int) -> tuple:
    """Expand a side selector into a sorted tuple of (side, index) edges."""
    if isinstance(selector, str):
        sides = [s.strip() for s in selector.split("+") if s.strip()]
        edges = []
        for s in sides:
            if s not in _SIDES:
                raise ConfigError(f"unknown boundary side {s!r}")
            count = ny if s in ("left", "right") else nx
            edges.extend((s, j) for j in range(count))
        return tuple(sorted(edges))
    edges = []
    for item in selector:
        if isinstance(item, str):
            edges.extend(_normalize_dirichlet(item, nx, ny))
            continue
        side, idx = item
        if side not in _SIDES:
            raise ConfigError(f"unknown boundary side {side!r}")
        count = ny if side in ("left", "right") else nx
        if not 0 <= idx < count:
            raise ConfigError(f"edge index {idx} out of range for side {side!r}")
        edges.append((side, int(idx)))
    return tuple(sorted(set(edges)))


@dataclass
class GridSpec:
    """Immutable description of the mesh plus precomputed FEM tables.

    Instances are built through :func:`build_grid` and treated as frozen:
    all mutable state in a simulation lives in the fields, never here, so
    one grid can safely be shared across threads.
    """

    nx: int
    ny: int
    lx: float
    ly: float
    dirichlet_edges: tuple

    # derived quantities, filled in __post_init__
    n_nodes: int = field(init=False)
    n_cells: int = field(init=False)
    dx: float = field(init=False)
    dy: float = field(init=False)
    node_xy: np.ndarray = field(init=False, repr=False)
    conn: np.ndarray = field(init=False, repr=False)
    quad_w: float = field(init=False)
    shape_n: np.ndarray = field(init=False, repr=False)
    shape_dx: np.ndarray = field(init=False, repr=False)
    shape_dy: np.ndarray = field(init=False, repr=False)
    dirichlet_nodes: np.ndarray = field(init=False, repr=False)
    dirichlet_cells: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ConfigError("grid must have at least 2 cells per direction")
        if self.lx <= 0.0 or self.ly <= 0.0:
            raise ConfigError("domain edge lengths must be positive")
        if not self.dirichlet_edges:
            raise ConfigError("Dirichlet edge set must be nonempty")

        nx, ny = self.nx, self.ny
        self.n_nodes = (nx + 1) * (ny + 1)
        self.n_cells = nx * ny
        self.dx = self.lx / nx
        self.dy = self.ly / ny

        ix, iy = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
        self.node_xy = np.column_stack(
            [(ix * self.dx).ravel(), (iy * self.dy).ravel()]
        )

        cx, cy = np.meshgrid(np.arange(nx), np.arange(ny))
        cx, cy = cx.ravel(), cy.ravel()
        n00 = cy * (nx + 1) + cx
        self.conn = np.column_stack([n00, n00 + 1, n00 + nx + 2, n00 + nx + 1])

        # 2x2 Gauss tables on the reference square, mapped to physical cells.
        pts = np.array([(-_GP, -_GP), (_GP, -_GP), (_GP, _GP), (-_GP, _GP)])
        self.shape_n = 0.25 * (1 + _XI * pts[:, :1]) * (1 + _ETA * pts[:, 1:])
        dn_dxi = 0.25 * _XI * (1 + _ETA * pts[:, 1:])
        dn_deta = 0.25 * _ETA * (1 + _XI * pts[:, :1])
        self.shape_dx = dn_dxi * (2.0 / self.dx)
        self.shape_dy = dn_deta * (2.0 / self.dy)
        self.quad_w = 0.25 * self.dx * self.dy

        self.dirichlet_cells = np.array(
            sorted({self._edge_cell(e) for e in self.dirichlet_edges}), dtype=int
        )
        nodes = set()
        for edge in self.dirichlet_edges:
            nodes.update(self._edge_nodes(edge))
        self.dirichlet_nodes = np.array(sorted(nodes), dtype=int)

    # -- edge bookkeeping ------------------------------------------------

    def _edge_cell(self, edge) -> int:
        side, j = edge
        if side == "left":
            return j * self.nx
        if side == "right":
            return j * self.nx + self.nx - 1
        if side == "bottom":
            return j
        return (self.ny - 1) * self.nx + j

    def _edge_nodes(self, edge) -> tuple:
        side, j = edge
        nx = self.nx
        if side == "left":
            return (j * (nx + 1), (j + 1) * (nx + 1))
        if side == "right":
            return (j * (nx + 1) + nx, (j + 1) * (nx + 1) + nx)
        if side == "bottom":
            return (j, j + 1)
        top0 = self.ny * (nx + 1)
        return (top0 + j, top0 + j + 1)

    # -- evaluation at quadrature points ----------------------------------

    def at_quads(self, values: np.ndarray) -> np.ndarray:
        """Interpolate nodal values to quadrature points, shape (n_cells, 4)."""
        return values[self.conn] @ self.shape_n.T

    def grads_at_quads(self, values: np.ndarray) -> np.ndarray:
        """Gradients of a nodal field at quadrature points, (n_cells, 4, 2)."""
        local = values[self.conn]
        gx = local @ self.shape_dx.T
        gy = local @ self.shape_dy.T
        return np.stack([gx, gy], axis=-1)

    def integrate_quads(self, density: np.ndarray, cells=None) -> float:
        """Integrate a (n_cells, 4) quadrature-point density over the domain.

        ``cells`` optionally restricts the integral to a boolean cell mask.
        """
        if density.shape != (self.n_cells, 4):
            raise ValueError("density must have shape (n_cells, 4)")
        if cells is None:
            return float(self.quad_w * density.sum())
        return float(self.quad_w * density[cells].sum())

    def scatter_quads(self, density: np.ndarray, cells=None) -> np.ndarray:
        """Assemble the nodal load vector of a quadrature density.

        Returns f with f_i = integral of density * N_i; this is the adjoint
        of :meth:`at_quads` weighted by the quadrature rule.
        """
        weighted = self.quad_w * density @ self.shape_n
        if cells is not None:
            weighted = np.where(cells[:, None], weighted, 0.0)
        f = np.zeros(self.n_nodes)
        np.add.at(f, self.conn, weighted)
        return f

    def scatter_grad_quads(self, flux: np.ndarray, cells=None) -> np.ndarray:
        """Assemble f_i = integral of flux . grad(N_i) for (n_cells,4,2) flux."""
        contrib = self.quad_w * (
            flux[:, :, 0] @ self.shape_dx + flux[:, :, 1] @ self.shape_dy
        )
        if cells is not None:
            contrib = np.where(cells[:, None], contrib, 0.0)
        f = np.zeros(self.n_nodes)
        np.add.at(f, self.conn, contrib)
        return f

    # -- matrix assembly ---------------------------------------------------

    def _assemble(self, local_per_cell: np.ndarray) -> sp.csr_matrix:
        rows = np.repeat(self.conn, 4, axis=1).ravel()
        cols = np.tile(self.conn, (1, 4)).ravel()
        mat = sp.coo_matrix(
            (local_per_cell.ravel(), (rows, cols)),
            shape=(self.n_nodes, self.n_nodes),
        )
        return mat.tocsr()

    def mass_matrix(self, weight=None, cells=None) -> sp.csr_matrix:
        """Consistent mass matrix, optionally weighted at quadrature points."""
        base = self.quad_w * np.einsum("qa,qb->qab", self.shape_n, self.shape_n)
        if weight is None:
            local = np.broadcast_to(base.sum(axis=0), (self.n_cells, 4, 4))
        else:
            local = np.einsum("cq,qab->cab", weight, base)
        if cells is not None:
            local = np.where(cells[:, None, None], local, 0.0)
        return self._assemble(local)

    def stiffness_matrix(self, coeff=None, cells=None) -> sp.csr_matrix:
        """Scalar stiffness matrix with optional (n_cells, 4) coefficient."""
        base = self.quad_w * (
            np.einsum("qa,qb->qab", self.shape_dx, self.shape_dx)
            + np.einsum("qa,qb->qab", self.shape_dy, self.shape_dy)
        )
        if coeff is None:
            local = np.broadcast_to(base.sum(axis=0), (self.n_cells, 4, 4))
        else:
            local = np.einsum("cq,qab->cab", coeff, base)
        if cells is not None:
            local = np.where(cells[:, None, None], local, 0.0)
        return self._assemble(local)

    def lumped_node_volumes(self) -> np.ndarray:
        """Nodal integrals of the hat functions (row sums of the mass matrix)."""
        return self.scatter_quads(np.ones((self.n_cells, 4)))


def build_grid(nx: int, ny: int, lx: float, ly: float, dirichlet="left") -> GridSpec:
    """Construct a :class:`GridSpec`.

    ``dirichlet`` accepts a side name, a "+"-joined combination such as
    "left+right", an iterable of side names, or explicit (side, index)
    edge pairs.
    """
    edges = _normalize_dirichlet(dirichlet, nx, ny)
    return GridSpec(int(nx), int(ny), float(lx), float(ly), edges)


# ---------------------------------------------------------------------------
# field containers
# ---------------------------------------------------------------------------


@dataclass
class ScalarField:
    """Nodal scalar field. Values must be finite."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_nodes,):
            raise ValueError("scalar field shape mismatch")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("scalar field contains non-finite values")

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


@dataclass
class VectorField:
    """Nodal displacement-like field with two components per node.

    Nodes outside the region of a restricted equilibrium solve carry NaN
    sentinels; consumers must mask by region before reading those entries.
    """

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_nodes, 2):
            raise ValueError("vector field shape mismatch")

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.values.copy())


@dataclass
class SymTensorField:
    """Symmetric 2x2 tensor density at quadrature points.

    Stored as (n_cells, 4, 3) arrays of (t_xx, t_yy, t_xy); symmetry is
    exact by construction of the storage.
    """

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_cells, 4, 3):
            raise ValueError("tensor field shape mismatch")


def sym_gradient(u: VectorField, cells=None) -> SymTensorField:
    """Symmetrized gradient of a displacement field at quadrature points.

    With ``cells`` given, the strain is computed on those cells only and
    set to zero elsewhere, so sentinel displacement values outside the
    region are never read.
    """
    grid = u.grid
    vals = u.values
    if cells is not None:
        vals = np.where(np.isfinite(vals), vals, 0.0)
    ex = grid.grads_at_quads(vals[:, 0])
    ey = grid.grads_at_quads(vals[:, 1])
    e = np.empty((grid.n_cells, 4, 3))
    e[:, :, 0] = ex[:, :, 0]
    e[:, :, 1] = ey[:, :, 1]
    e[:, :, 2] = 0.5 * (ex[:, :, 1] + ey[:, :, 0])
    if cells is not None:
        e[~cells] = 0.0
    return SymTensorField(grid, e)


def strain_or_zero(grid: GridSpec, u, cells=None) -> np.ndarray:
    """Strain table of a displacement field, or zeros when u is None."""
    if u is None:
        return np.zeros((grid.n_cells, 4, 3))
    return sym_gradient(u, cells).values


def integrate_cellwise(grid: GridSpec, density: np.ndarray, cells=None) -> float:
    """Quadrature integral of a (n_cells, 4) density, optionally masked."""
    return grid.integrate_quads(density, cells)


def p_laplacian_residual(z: ScalarField, p: float, zeta: ScalarField) -> float:
    """Evaluate integral of |grad z|^(p-2) grad z . grad zeta.

    This is the Galerkin action of the p-Laplacian on a test function;
    for p = 2 it reduces to the bilinear form of the stiffness matrix.
    """
    grid = z.grid
    gz = grid.grads_at_quads(z.values)
    gzeta = grid.grads_at_quads(zeta.values)
    norm2 = np.sum(gz * gz, axis=-1)
    if p == 2.0:
        weight = np.ones_like(norm2)
    else:
        weight = norm2 ** ((p - 2.0) / 2.0)
    return grid.integrate_quads(weight * np.sum(gz * gzeta, axis=-1))


def p_laplacian_gradient(grid: GridSpec, z_values: np.ndarray, p: float) -> np.ndarray:
    """Nodal gradient vector of z -> integral of |grad z|^p / p."""
    gz = grid.grads_at_quads(z_values)
    norm2 = np.sum(gz * gz, axis=-1)
    if p == 2.0:
        weight = np.ones_like(norm2)
    else:
        weight = norm2 ** ((p - 2.0) / 2.0)
    return grid.scatter_grad_quads(weight[:, :, None] * gz)


# ---------------------------------------------------------------------------
# field dumps
# ---------------------------------------------------------------------------
#
# Format: one ASCII header line
#     CHDFIELD <name> <nodes_x> <nodes_y> <time>\n
# followed by nodes_x * nodes_y little-endian float64 values in node
# order (row-major, y outer, x inner).


def write_field(path, name: str, grid: GridSpec, values: np.ndarray, time: float):
    """Dump a nodal array in the CHDFIELD format."""
    values = np.asarray(values, dtype="<f8")
    if values.shape != (grid.n_nodes,):
        raise ValueError("field dump expects one value per node")
    if not name or any(ch.isspace() for ch in name):
        raise ValueError("field name must be nonempty without whitespace")
    header = f"CHDFIELD {name} {grid.nx + 1} {grid.ny + 1} {time!r}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(values.tobytes())


def read_field(path):
    """Read a CHDFIELD dump; returns (name, nodes_x, nodes_y, time, values)."""
    with open(path, "rb") as fh:
        header = bytearray()
        while True:
            ch = fh.read(1)
            if not ch:
                raise ValueError("truncated field dump header")
            if ch == b"\n":
                break
            header.extend(ch)
        parts = header.decode("ascii").split()
        if len(parts) != 5 or parts[0] != "CHDFIELD":
            raise ValueError("not a CHDFIELD dump")
        name, nodes_x, nodes_y = parts[1], int(parts[2]), int(parts[3])
        time = float(parts[4])
        count = nodes_x * nodes_y
        raw = fh.read(8 * count)
        if len(raw) != 8 * count:
            raise ValueError("truncated field dump payload")
        values = np.frombuffer(raw, dtype="<f8").copy()
    return name, nodes_x, nodes_y, time, values
