"""Nested coarse/fine quadrilateral grids, oversampling regions and boundary data.

Numbering conventions used throughout the package:

* fine node ``(ix, iy)`` has index ``iy * (NX + 1) + ix`` with ``NX = Nx * nx``;
* displacement DOFs are interleaved, node ``n`` owns ``2n`` (x) and ``2n + 1`` (y);
* fine cell ``(cx, cy)`` has index ``cy * NX + cx``, coarse element ``(jx, jy)``
  has index ``jy * Nx + jx``;
* the four nodes of a cell are ordered counter-clockwise from the lower-left.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

# 2-point Gauss rule on [0, 1]
GAUSS_01 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
GAUSS_W01 = np.array([0.5, 0.5])

# tensor quadrature points of a cell, same counter-clockwise order as the nodes
QUAD_REF = np.array(
    [
        [GAUSS_01[0], GAUSS_01[0]],
        [GAUSS_01[1], GAUSS_01[0]],
        [GAUSS_01[1], GAUSS_01[1]],
        [GAUSS_01[0], GAUSS_01[1]],
    ]
)
QUAD_W = np.full(4, 0.25)

SIDES = ("bottom", "right", "top", "left")


@dataclass(frozen=True)
class GridSpec:
    Nx: int
    Ny: int
    nx: int
    ny: int
    domain: tuple = (0.0, 1.0, 0.0, 1.0)  # (x0, x1, y0, y1)

    def __post_init__(self):
        for name in ("Nx", "Ny", "nx", "ny"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        x0, x1, y0, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"degenerate domain {self.domain}")


class Grid:
    """Uniform nested mesh of an axis-aligned rectangle.

    Immutable once built; all index arrays are computed lazily and cached.
    """

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.Nx, self.Ny, self.nx, self.ny = spec.Nx, spec.Ny, spec.nx, spec.ny
        self.NX = self.Nx * self.nx
        self.NY = self.Ny * self.ny
        x0, x1, y0, y1 = spec.domain
        self.origin = np.array([x0, y0])
        self.Hx = (x1 - x0) / self.Nx
        self.Hy = (y1 - y0) / self.Ny
        self.hx = self.Hx / self.nx
        self.hy = self.Hy / self.ny

    def __repr__(self):
        return f"Grid(coarse={self.Nx}x{self.Ny}, fine={self.nx}x{self.ny})"

    # counts
    @property
    def n_nodes(self) -> int:
        return (self.NX + 1) * (self.NY + 1)

    @property
    def n_cells(self) -> int:
        return self.NX * self.NY

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_coarse(self) -> int:
        return self.Nx * self.Ny

    @property
    def n_coarse_nodes(self) -> int:
        return (self.Nx + 1) * (self.Ny + 1)

    @property
    def element_ndofs(self) -> int:
        return 2 * (self.nx + 1) * (self.ny + 1)

    def node_index(self, ix, iy):
        return np.asarray(iy) * (self.NX + 1) + np.asarray(ix)

    @cached_property
    def node_coords(self) -> np.ndarray:
        iy, ix = np.divmod(np.arange(self.n_nodes), self.NX + 1)
        return self.origin + np.column_stack([ix * self.hx, iy * self.hy])

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        cy, cx = np.divmod(np.arange(self.n_cells), self.NX)
        n0 = self.node_index(cx, cy)
        return np.column_stack([n0, n0 + 1, n0 + self.NX + 2, n0 + self.NX + 1])

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        return nodes_to_dofs(self.cell_nodes)

    @cached_property
    def cell_centers(self) -> np.ndarray:
        return self.node_coords[self.cell_nodes[:, 0]] + 0.5 * np.array([self.hx, self.hy])

    @cached_property
    def cell_coarse(self) -> np.ndarray:
        cy, cx = np.divmod(np.arange(self.n_cells), self.NX)
        return (cy // self.ny) * self.Nx + cx // self.nx

    def quad_points(self) -> np.ndarray:
        """Physical 2x2 Gauss points, shape ``(n_cells, 4, 2)``."""
        base = self.node_coords[self.cell_nodes[:, 0]]
        return base[:, None, :] + QUAD_REF[None] * np.array([self.hx, self.hy])

    # coarse element <-> fine objects
    @cached_property
    def coarse_cells(self) -> np.ndarray:
        """Fine cells of every coarse element, shape ``(n_coarse, nx*ny)``, local row-major."""
        jy, jx = np.divmod(np.arange(self.n_coarse), self.Nx)
        ly, lx = np.divmod(np.arange(self.nx * self.ny), self.nx)
        cx = jx[:, None] * self.nx + lx[None]
        cy = jy[:, None] * self.ny + ly[None]
        return cy * self.NX + cx

    @cached_property
    def element_nodes(self) -> np.ndarray:
        """Fine nodes of each closed coarse element, shape ``(n_coarse, (nx+1)(ny+1))``."""
        jy, jx = np.divmod(np.arange(self.n_coarse), self.Nx)
        ly, lx = np.divmod(np.arange((self.nx + 1) * (self.ny + 1)), self.nx + 1)
        return self.node_index(jx[:, None] * self.nx + lx[None], jy[:, None] * self.ny + ly[None])

    @cached_property
    def element_dofs(self) -> np.ndarray:
        return nodes_to_dofs(self.element_nodes)

    @cached_property
    def local_cell_dofs(self) -> np.ndarray:
        """Cell DOFs in the local numbering of a closed coarse element, ``(nx*ny, 8)``."""
        ly, lx = np.divmod(np.arange(self.nx * self.ny), self.nx)
        n0 = ly * (self.nx + 1) + lx
        nodes = np.column_stack([n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1])
        return nodes_to_dofs(nodes)

    @cached_property
    def coarse_node_fine_index(self) -> np.ndarray:
        """Fine node index of every coarse node (the set S^H)."""
        JY, JX = np.divmod(np.arange(self.n_coarse_nodes), self.Nx + 1)
        return self.node_index(JX * self.nx, JY * self.ny)

    @cached_property
    def cell_coarse_nodes(self) -> np.ndarray:
        """The four coarse nodes (corners of the owning coarse element) per fine cell."""
        jy, jx = np.divmod(self.cell_coarse, self.Nx)
        c0 = jy * (self.Nx + 1) + jx
        return np.column_stack([c0, c0 + 1, c0 + self.Nx + 2, c0 + self.Nx + 1])

    # boundary facets
    @cached_property
    def boundary_facets(self) -> "Facets":
        nodes, sides, coarse = [], [], []
        NX, NY = self.NX, self.NY
        ix = np.arange(NX)
        iy = np.arange(NY)
        # bottom, right, top, left; node pairs ordered along increasing coordinate
        nodes.append(np.column_stack([self.node_index(ix, 0), self.node_index(ix + 1, 0)]))
        coarse.append(ix // self.nx)
        nodes.append(np.column_stack([self.node_index(NX, iy), self.node_index(NX, iy + 1)]))
        coarse.append((iy // self.ny) * self.Nx + self.Nx - 1)
        nodes.append(np.column_stack([self.node_index(ix, NY), self.node_index(ix + 1, NY)]))
        coarse.append((self.Ny - 1) * self.Nx + ix // self.nx)
        nodes.append(np.column_stack([self.node_index(0, iy), self.node_index(0, iy + 1)]))
        coarse.append((iy // self.ny) * self.Nx)
        for k, n in enumerate((NX, NY, NX, NY)):
            sides.append(np.full(n, k))
        nodes = np.vstack(nodes)
        xy = self.node_coords
        return Facets(
            nodes=nodes,
            side=np.concatenate(sides),
            coarse=np.concatenate(coarse),
            midpoints=0.5 * (xy[nodes[:, 0]] + xy[nodes[:, 1]]),
            lengths=np.linalg.norm(xy[nodes[:, 1]] - xy[nodes[:, 0]], axis=1),
        )

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_facets.nodes)


@dataclass(frozen=True)
class Facets:
    nodes: np.ndarray  # (n, 2)
    side: np.ndarray  # index into SIDES
    coarse: np.ndarray  # owning coarse element
    midpoints: np.ndarray
    lengths: np.ndarray

    def __len__(self):
        return len(self.side)


def nodes_to_dofs(nodes: np.ndarray) -> np.ndarray:
    nodes = np.asarray(nodes)
    d = np.stack([2 * nodes, 2 * nodes + 1], axis=-1)
    return d.reshape(*nodes.shape[:-1], 2 * nodes.shape[-1])


def build_grid(spec: GridSpec) -> Grid:
    return Grid(spec)


# ---------------------------------------------------------------------------
# boundary conditions

VectorFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def zero_field(x, y):
    x = np.asarray(x, dtype=float)
    return np.zeros(x.shape + (2,))


@dataclass
class BoundarySpec:
    """Split of the boundary facets into Dirichlet (Gamma_a) and Neumann (Gamma_b) parts.

    ``h`` and ``g`` map coordinate arrays ``(x, y)`` to values of shape ``x.shape + (2,)``.
    ``h`` is evaluated at every fine node (it doubles as the lifting of the
    Dirichlet data); ``g`` only on Neumann facets.
    """

    dirichlet: np.ndarray  # bool per boundary facet
    h: VectorFn = zero_field
    g: VectorFn = zero_field

    def __post_init__(self):
        self.dirichlet = np.asarray(self.dirichlet, dtype=bool)
        if not self.dirichlet.any():
            raise ValueError("the Dirichlet boundary must not be empty")

    @classmethod
    def from_predicate(cls, grid: Grid, is_dirichlet: Callable, h=zero_field, g=zero_field):
        """Classify facets by evaluating ``is_dirichlet(x, y)`` at facet midpoints."""
        mid = grid.boundary_facets.midpoints
        mask = np.asarray(is_dirichlet(mid[:, 0], mid[:, 1]), dtype=bool)
        mask = np.broadcast_to(mask, (len(mid),)).copy()
        return cls(mask, h, g)

    @classmethod
    def from_sides(cls, grid: Grid, dirichlet_sides, h=zero_field, g=zero_field):
        sides = [SIDES.index(s) for s in dirichlet_sides]
        return cls(np.isin(grid.boundary_facets.side, sides), h, g)

    @property
    def neumann(self) -> np.ndarray:
        return ~self.dirichlet

    def dirichlet_facets(self) -> np.ndarray:
        return np.flatnonzero(self.dirichlet)

    def neumann_facets(self) -> np.ndarray:
        return np.flatnonzero(~self.dirichlet)

    def dirichlet_nodes(self, grid: Grid) -> np.ndarray:
        return np.unique(grid.boundary_facets.nodes[self.dirichlet])

    def dirichlet_dofs(self, grid: Grid) -> np.ndarray:
        return nodes_to_dofs(self.dirichlet_nodes(grid)[:, None]).ravel()


# ---------------------------------------------------------------------------
# oversampling


@dataclass(frozen=True)
class OversampleRegion:
    center: int
    layers: int
    members: np.ndarray  # coarse element indices, sorted
    bounds: tuple  # fine-node index box (ix0, ix1, iy0, iy1), inclusive
    local_dofs: np.ndarray  # global DOFs of the closed region, sorted
    essential_mask: np.ndarray  # per local DOF

    @property
    def free_dofs(self) -> np.ndarray:
        return self.local_dofs[~self.essential_mask]

    def global_to_local(self, dofs) -> np.ndarray:
        loc = np.searchsorted(self.local_dofs, dofs)
        loc = np.minimum(loc, len(self.local_dofs) - 1)
        if not np.all(self.local_dofs[loc] == dofs):
            raise KeyError("DOF outside of the oversampling region")
        return loc

    def local_to_global(self, loc) -> np.ndarray:
        return self.local_dofs[loc]


def coarse_box(grid: Grid, j: int, m: int) -> tuple:
    jy, jx = divmod(int(j), grid.Nx)
    return (max(jx - m, 0), min(jx + m, grid.Nx - 1), max(jy - m, 0), min(jy + m, grid.Ny - 1))


def oversample(grid: Grid, j: int, m: int, dirichlet_nodes: Optional[np.ndarray] = None) -> OversampleRegion:
    """Region K_{j,m}: coarse elements within Chebyshev distance ``m`` of ``j``.

    Local DOFs on the part of the region boundary interior to the domain are
    marked essential, as are DOFs on ``dirichlet_nodes`` (Gamma_a).
    """
    if not 0 <= j < grid.n_coarse:
        raise IndexError(f"coarse element {j} out of range")
    if m < 0:
        raise ValueError("layer count must be non-negative")
    bx0, bx1, by0, by1 = coarse_box(grid, j, m)
    JY, JX = np.meshgrid(np.arange(by0, by1 + 1), np.arange(bx0, bx1 + 1), indexing="ij")
    members = np.sort((JY * grid.Nx + JX).ravel())

    ix0, ix1 = bx0 * grid.nx, (bx1 + 1) * grid.nx
    iy0, iy1 = by0 * grid.ny, (by1 + 1) * grid.ny
    IY, IX = np.meshgrid(np.arange(iy0, iy1 + 1), np.arange(ix0, ix1 + 1), indexing="ij")
    IX, IY = IX.ravel(), IY.ravel()
    nodes = grid.node_index(IX, IY)
    artificial = (
        ((IX == ix0) & (ix0 > 0))
        | ((IX == ix1) & (ix1 < grid.NX))
        | ((IY == iy0) & (iy0 > 0))
        | ((IY == iy1) & (iy1 < grid.NY))
    )
    if dirichlet_nodes is not None and len(dirichlet_nodes):
        artificial |= np.isin(nodes, dirichlet_nodes)
    # nodes are already increasing (row-major), so dofs come out sorted
    dofs = nodes_to_dofs(nodes[:, None]).ravel()
    mask = np.repeat(artificial, 2)
    return OversampleRegion(int(j), int(m), members, (ix0, ix1, iy0, iy1), dofs, mask)


def whole_domain(grid: Grid, dirichlet_nodes: Optional[np.ndarray] = None) -> OversampleRegion:
    """The oversampling region that saturates to the full domain."""
    m = max(grid.Nx, grid.Ny)
    return oversample(grid, 0, m, dirichlet_nodes)


# ---------------------------------------------------------------------------
# partition of unity


@dataclass(frozen=True)
class PartitionOfUnity:
    """Bilinear coarse hats chi_i.

    ``values`` is a sparse ``(n_nodes, n_coarse_nodes)`` matrix of nodal values.
    ``qp_grads[c, q, k]`` is the gradient of hat ``qp_hats[c, k]`` at quadrature
    point ``q`` of fine cell ``c``; only the four hats of the owning coarse
    element are non-zero there.
    """

    values: sp.csr_matrix
    qp_hats: np.ndarray  # (n_cells, 4)
    qp_values: np.ndarray  # (n_cells, 4 qp, 4 hats)
    qp_grads: np.ndarray  # (n_cells, 4 qp, 4 hats, 2)


def _hat_local(xi, eta):
    """Bilinear hats on the unit square and their (xi, eta) derivatives."""
    val = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=-1)
    dxi = np.stack([-(1 - eta), 1 - eta, eta, -eta], axis=-1)
    deta = np.stack([-(1 - xi), -xi, xi, 1 - xi], axis=-1)
    return val, dxi, deta


def partition_of_unity(grid: Grid) -> PartitionOfUnity:
    xy = grid.node_coords - grid.origin
    # coarse element and local coordinates for every fine node; nodes on coarse
    # edges are attributed to the lower-left element, values are continuous anyway
    JX = np.minimum(np.floor(xy[:, 0] / grid.Hx + 1e-12).astype(int), grid.Nx - 1)
    JY = np.minimum(np.floor(xy[:, 1] / grid.Hy + 1e-12).astype(int), grid.Ny - 1)
    xi = xy[:, 0] / grid.Hx - JX
    eta = xy[:, 1] / grid.Hy - JY
    val, _, _ = _hat_local(xi, eta)
    c0 = JY * (grid.Nx + 1) + JX
    cols = np.column_stack([c0, c0 + 1, c0 + grid.Nx + 2, c0 + grid.Nx + 1])
    rows = np.repeat(np.arange(grid.n_nodes), 4)
    values = sp.csr_matrix((val.ravel(), (rows, cols.ravel())), shape=(grid.n_nodes, grid.n_coarse_nodes))
    values.eliminate_zeros()

    qp = grid.quad_points() - grid.origin
    jy, jx = np.divmod(grid.cell_coarse, grid.Nx)
    xi = qp[..., 0] / grid.Hx - jx[:, None]
    eta = qp[..., 1] / grid.Hy - jy[:, None]
    qv, dxi, deta = _hat_local(xi, eta)
    grads = np.stack([dxi / grid.Hx, deta / grid.Hy], axis=-1)
    return PartitionOfUnity(values, grid.cell_coarse_nodes, qv, grads)
