"""Constraint energy minimizing basis functions on oversampling regions."""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .aux_space import AuxBasis
from .fem import Discretization, spd_factor
from .grid import OversampleRegion, oversample, whole_domain

VARIANTS = ("relaxed", "constrained")


def check_variant(variant: str) -> str:
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    return variant


class RegionSolver:
    """Local problems on one oversampling region.

    With ``A`` the stiffness on the region's free DOFs and ``P`` the rows
    ``v -> s(v, phi)`` for every auxiliary vector of every member element,

    * relaxed:     ``(A + P^T P) x = b + P^T t``
    * constrained: ``A x + P^T theta = b``, ``P x = c``

    Both are solved through ``A^{-1}`` and the small matrix ``P A^{-1} P^T``.
    """

    def __init__(self, disc: Discretization, aux: Sequence[AuxBasis], region: OversampleRegion):
        grid = disc.grid
        self.disc = disc
        self.region = region
        self.free = region.free_dofs
        self.gmap = np.full(grid.n_dofs, -1)
        self.gmap[self.free] = np.arange(len(self.free))
        self.rows: Dict[int, slice] = {}

        blocks = []
        k = 0
        for jj in region.members:
            a = aux[jj]
            r = (disc.S_K[jj] @ a.vectors).T
            pos = self.gmap[grid.element_dofs[jj]]
            keep = pos >= 0
            blk = np.zeros((a.count, len(self.free)))
            blk[:, pos[keep]] = r[:, keep]
            blocks.append(blk)
            self.rows[int(jj)] = slice(k, k + a.count)
            k += a.count
        self.P = np.vstack(blocks)
        self.n_constraints = k

        Aff = disc.A[self.free][:, self.free]
        self.A = Aff
        try:
            self.lu = spd_factor(Aff)
        except RuntimeError as exc:
            raise np.linalg.LinAlgError(f"singular local stiffness on region {region.center}: {exc}") from exc
        self.Y = self.lu.solve(np.asfortranarray(self.P.T))
        G = self.P @ self.Y
        self.G = 0.5 * (G + G.T)
        self._relaxed = None
        self._constrained = None

    # factorizations of the small systems, built on first use
    def _relaxed_cho(self):
        if self._relaxed is None:
            self._relaxed = sla.cho_factor(np.eye(self.n_constraints) + self.G)
        return self._relaxed

    def _constrained_cho(self):
        if self._constrained is None:
            try:
                self._constrained = sla.cho_factor(self.G)
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError(
                    f"rank-deficient constraint block on region around element {self.region.center}"
                ) from exc
        return self._constrained

    def target_rows(self, j: int) -> np.ndarray:
        s = self.rows[int(j)]
        return np.arange(s.start, s.stop)

    def element_rhs(self, j: int, vec_local: np.ndarray) -> np.ndarray:
        """Scatter an element-local vector into the region's free DOFs."""
        b = np.zeros(len(self.free))
        pos = self.gmap[self.disc.grid.element_dofs[j]]
        keep = pos >= 0
        b[pos[keep]] += vec_local[keep]
        return b

    def solve_relaxed(self, b=None, t=None) -> np.ndarray:
        n = len(self.free)
        w = np.zeros(n) if b is None else self.lu.solve(b)
        if t is not None:
            w = w + self.Y @ t
        return w - self.Y @ sla.cho_solve(self._relaxed_cho(), self.P @ w)

    def solve_constrained(self, b=None, c=None) -> np.ndarray:
        n = len(self.free)
        z = np.zeros(n) if b is None else self.lu.solve(b)
        rhs = self.P @ z
        if c is not None:
            rhs = rhs - c
        theta = sla.cho_solve(self._constrained_cho(), rhs)
        return z - self.Y @ theta

    def solve(self, variant: str, b=None, c=None) -> np.ndarray:
        """Unified entry: ``c`` is the constraint value (constrained) or target (relaxed)."""
        if variant == "relaxed":
            return self.solve_relaxed(b, c)
        return self.solve_constrained(b, c)

    def basis(self, variant: str, rows: np.ndarray) -> np.ndarray:
        """Basis functions for the given constraint rows, ``(n_free, len(rows))``."""
        E = np.zeros((self.n_constraints, len(rows)))
        E[rows, np.arange(len(rows))] = 1.0
        if variant == "relaxed":
            return self.Y @ sla.cho_solve(self._relaxed_cho(), E)
        return self.Y @ sla.cho_solve(self._constrained_cho(), E)

    def to_global(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.disc.grid.n_dofs if x.ndim == 1 else (self.disc.grid.n_dofs, x.shape[1]))
        out[self.free] = x
        return out


def region_solver(disc, aux, j, m, dirichlet_nodes) -> RegionSolver:
    if m is None:
        return RegionSolver(disc, aux, whole_domain(disc.grid, dirichlet_nodes))
    return RegionSolver(disc, aux, oversample(disc.grid, j, m, dirichlet_nodes))


def relaxed_basis(disc, aux, region: OversampleRegion, target: Tuple[int, int]) -> np.ndarray:
    """Relaxed basis function for aux mode ``target = (j, i)`` as a global fine field."""
    return _single(disc, aux, region, target, "relaxed")


def constrained_basis(disc, aux, region: OversampleRegion, target: Tuple[int, int]) -> np.ndarray:
    return _single(disc, aux, region, target, "constrained")


def _single(disc, aux, region, target, variant):
    j, i = target
    if int(j) not in set(region.members.tolist()):
        raise ValueError(f"target element {j} is not inside the region")
    s = RegionSolver(disc, aux, region)
    return s.to_global(s.basis(variant, s.target_rows(j)[[i]])[:, 0])


@dataclass
class CemBasisSet:
    variant: str
    layers: Optional[int]  # None for the global (non-localized) space
    matrix: sp.csc_matrix  # (n_dofs, n_columns)
    column_map: Dict[Tuple[int, int], int]
    supports: List[np.ndarray] = field(default_factory=list)  # free DOFs per column's region

    @property
    def n_columns(self) -> int:
        return self.matrix.shape[1]


def columns_to_matrix(n_dofs, cols: List[Tuple[np.ndarray, np.ndarray]]) -> sp.csc_matrix:
    """Assemble ``[(row_indices, values), ...]`` into a CSC matrix, one column each."""
    indptr = np.zeros(len(cols) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(r) for r, _ in cols])
    indices = np.concatenate([r for r, _ in cols]) if cols else np.zeros(0, dtype=np.int64)
    data = np.concatenate([v for _, v in cols]) if cols else np.zeros(0)
    return sp.csc_matrix((data, indices, indptr), shape=(n_dofs, len(cols)))


def build_space(disc, aux, dirichlet_nodes, m: Optional[int], variant: str, executor=None) -> CemBasisSet:
    """One basis function per (element, mode). ``m=None`` builds the global space."""
    check_variant(variant)
    grid = disc.grid
    if m is None:
        s = region_solver(disc, aux, 0, None, dirichlet_nodes)
        X = s.basis(variant, np.arange(s.n_constraints))
        cols, cmap, sup = [], {}, []
        for jj, sl in s.rows.items():
            for i, r in enumerate(range(sl.start, sl.stop)):
                cmap[(jj, i)] = len(cols)
                cols.append((s.free, X[:, r]))
                sup.append(s.free)
        return CemBasisSet(variant, None, columns_to_matrix(grid.n_dofs, cols), cmap, sup)

    def one(j):
        s = region_solver(disc, aux, j, m, dirichlet_nodes)
        return s.free, s.basis(variant, s.target_rows(j))

    results = map(one, range(grid.n_coarse)) if executor is None else executor.map(one, range(grid.n_coarse))
    cols, cmap, sup = [], {}, []
    for j, (free, X) in enumerate(results):
        for i in range(X.shape[1]):
            cmap[(j, i)] = len(cols)
            cols.append((free, X[:, i]))
            sup.append(free)
    return CemBasisSet(variant, m, columns_to_matrix(grid.n_dofs, cols), cmap, sup)


# ---------------------------------------------------------------------------
# binary cache
#
# Layout:
#   b"CEMBASIS1\n"
#   one UTF-8 JSON header line terminated by b"\n" with keys
#       grid [Nx, Ny, nx, ny], medium (sha256 of E and nu bytes), layers
#       (int or null), variant, nbf, n_dofs, n_columns, columns [[j, i], ...]
#   then, for each column in order, a block
#       int64 count, int64 rows[count], float64 values[count]
#   all little-endian.

MAGIC = b"CEMBASIS1\n"


def cache_key(disc: Discretization, m, variant, nbf) -> dict:
    g = disc.grid
    return {
        "grid": [g.Nx, g.Ny, g.nx, g.ny],
        "medium": disc.medium.digest(),
        "layers": m,
        "variant": variant,
        "nbf": int(nbf),
    }


def write_cache(path, basis: CemBasisSet, key: dict) -> None:
    B = basis.matrix.tocsc()
    B.sort_indices()
    order = sorted(basis.column_map.items(), key=lambda kv: kv[1])
    header = dict(key, n_dofs=int(B.shape[0]), n_columns=int(B.shape[1]), columns=[list(k) for k, _ in order])
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for c in range(B.shape[1]):
            lo, hi = B.indptr[c], B.indptr[c + 1]
            fh.write(np.array([hi - lo], dtype="<i8").tobytes())
            fh.write(B.indices[lo:hi].astype("<i8").tobytes())
            fh.write(B.data[lo:hi].astype("<f8").tobytes())


def read_cache(path, expect: Optional[dict] = None) -> Tuple[dict, CemBasisSet]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path}: not a basis cache file")
    buf = io.BytesIO(raw[len(MAGIC):])
    header = json.loads(buf.readline().decode())
    if expect is not None:
        stale = {k: (header.get(k), v) for k, v in expect.items() if header.get(k) != v}
        if stale:
            raise ValueError(f"{path}: cache key mismatch {stale}")
    cols = []
    for _ in range(header["n_columns"]):
        (cnt,) = np.frombuffer(buf.read(8), dtype="<i8")
        rows = np.frombuffer(buf.read(8 * cnt), dtype="<i8").astype(np.int64)
        vals = np.frombuffer(buf.read(8 * cnt), dtype="<f8").astype(float)
        cols.append((rows, vals))
    B = columns_to_matrix(header["n_dofs"], cols)
    cmap = {tuple(c): k for k, c in enumerate(header["columns"])}
    return header, CemBasisSet(header["variant"], header["layers"], B, cmap, [r for r, _ in cols])
