"""Q1 fine-scale elasticity: element matrices, assembly, loads and the reference solve."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import GAUSS_01, GAUSS_W01, QUAD_REF, QUAD_W, BoundarySpec, Grid, PartitionOfUnity, partition_of_unity
from .medium import MaterialField

# Voigt (xx, yy, xy with engineering shear) split of the isotropic tensor
D_LAMBDA = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
D_MU = np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]])


def shape_values(xi, eta):
    return np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=-1)


def _strain_matrix(xi, eta, hx, hy):
    dx = np.array([-(1 - eta), 1 - eta, eta, -eta]) / hx
    dy = np.array([-(1 - xi), -xi, xi, 1 - xi]) / hy
    B = np.zeros((3, 8))
    B[0, 0::2] = dx
    B[1, 1::2] = dy
    B[2, 0::2] = dy
    B[2, 1::2] = dx
    return B


def stiffness_parts(hx: float, hy: float):
    """Unit-lambda and unit-mu stiffness of an ``hx x hy`` cell (2x2 Gauss, exact)."""
    Kl = np.zeros((8, 8))
    Km = np.zeros((8, 8))
    for (xi, eta), w in zip(QUAD_REF, QUAD_W):
        B = _strain_matrix(xi, eta, hx, hy)
        Kl += w * hx * hy * B.T @ D_LAMBDA @ B
        Km += w * hx * hy * B.T @ D_MU @ B
    return Kl, Km


def mass_parts(hx: float, hy: float) -> np.ndarray:
    """Per-quadrature-point vector mass contributions, shape ``(4, 8, 8)``."""
    N = shape_values(QUAD_REF[:, 0], QUAD_REF[:, 1])
    out = np.empty((4, 8, 8))
    for q in range(4):
        out[q] = QUAD_W[q] * hx * hy * np.kron(np.outer(N[q], N[q]), np.eye(2))
    return out


def element_matrices(hx, hy, lam, mu, kappa=None):
    """Stiffness and kappa-weighted mass of one rectangular cell.

    ``kappa`` holds the weight at the four Gauss points (defaults to 1).
    """
    if hx <= 0 or hy <= 0:
        raise ValueError("degenerate cell")
    Kl, Km = stiffness_parts(hx, hy)
    w = np.ones(4) if kappa is None else np.asarray(kappa, dtype=float)
    Me = np.einsum("q,qij->ij", w, mass_parts(hx, hy))
    return lam * Kl + mu * Km, Me


def kappa_tilde(grid: Grid, medium: MaterialField, pou: PartitionOfUnity) -> np.ndarray:
    """Weight sum_i (lambda + 2 mu) |grad chi_i|^2 at the Gauss points, ``(n_cells, 4)``."""
    g2 = np.einsum("cqkd,cqkd->cq", pou.qp_grads, pou.qp_grads)
    return (medium.lam + 2 * medium.mu)[:, None] * g2


def _scatter(grid: Grid, blocks: np.ndarray) -> sp.csr_matrix:
    d = grid.cell_dofs
    rows = np.broadcast_to(d[:, :, None], blocks.shape).ravel()
    cols = np.broadcast_to(d[:, None, :], blocks.shape).ravel()
    A = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(grid.n_dofs, grid.n_dofs)).tocsr()
    A.sum_duplicates()
    return A


def cell_stiffness(grid: Grid, medium: MaterialField) -> np.ndarray:
    Kl, Km = stiffness_parts(grid.hx, grid.hy)
    return medium.lam[:, None, None] * Kl + medium.mu[:, None, None] * Km


def cell_weighted_mass(grid: Grid, kappa: np.ndarray) -> np.ndarray:
    return np.einsum("cq,qij->cij", kappa, mass_parts(grid.hx, grid.hy))


def assemble(grid: Grid, medium: MaterialField, pou: Optional[PartitionOfUnity] = None):
    """Global stiffness ``A`` and weighted mass ``S`` (no boundary conditions)."""
    pou = pou or partition_of_unity(grid)
    A = _scatter(grid, cell_stiffness(grid, medium))
    S = _scatter(grid, cell_weighted_mass(grid, kappa_tilde(grid, medium, pou)))
    return A, S


def mass_matrix(grid: Grid) -> sp.csr_matrix:
    """Unweighted vector L2 mass matrix."""
    return _scatter(grid, cell_weighted_mass(grid, np.ones((grid.n_cells, 4))))


def element_blocks(grid: Grid, cell_blocks: np.ndarray) -> np.ndarray:
    """Sum cell matrices into dense per-coarse-element matrices on closed elements."""
    n = grid.element_ndofs
    out = np.zeros((grid.n_coarse, n, n))
    ld = grid.local_cell_dofs
    for loc in range(ld.shape[0]):
        idx = ld[loc]
        out[:, idx[:, None], idx[None, :]] += cell_blocks[grid.coarse_cells[:, loc]]
    return out


# ---------------------------------------------------------------------------
# loads


def interpolate(grid: Grid, fn: Callable) -> np.ndarray:
    """Nodal interpolant of a vector callback as an interleaved DOF vector."""
    xy = grid.node_coords
    vals = np.asarray(fn(xy[:, 0], xy[:, 1]), dtype=float)
    return np.broadcast_to(vals, (grid.n_nodes, 2)).reshape(-1).copy()


def body_load(grid: Grid, f: Optional[Callable]) -> np.ndarray:
    out = np.zeros(grid.n_dofs)
    if f is None:
        return out
    qp = grid.quad_points()
    fq = np.broadcast_to(np.asarray(f(qp[..., 0], qp[..., 1]), dtype=float), qp.shape)
    N = shape_values(QUAD_REF[:, 0], QUAD_REF[:, 1])  # (q, a)
    # contribution to (cell, node a, comp)
    contrib = grid.hx * grid.hy * np.einsum("q,qa,cqd->cad", QUAD_W, N, fq)
    np.add.at(out, grid.cell_dofs.ravel(), contrib.reshape(-1))
    return out


def facet_tractions(grid: Grid, bspec: BoundarySpec) -> np.ndarray:
    """Traction load per boundary facet, shape ``(n_facets, 4)`` over its two nodes."""
    fac = grid.boundary_facets
    xy = grid.node_coords
    p0, p1 = xy[fac.nodes[:, 0]], xy[fac.nodes[:, 1]]
    out = np.zeros((len(fac), 4))
    sel = bspec.neumann
    if not sel.any():
        return out
    for t, w in zip(GAUSS_01, GAUSS_W01):
        p = p0[sel] + t * (p1[sel] - p0[sel])
        gv = np.broadcast_to(np.asarray(bspec.g(p[:, 0], p[:, 1]), dtype=float), p.shape)
        L = fac.lengths[sel, None] * w
        out[sel, 0:2] += L * (1 - t) * gv
        out[sel, 2:4] += L * t * gv
    return out


def traction_load(grid: Grid, bspec: BoundarySpec) -> np.ndarray:
    out = np.zeros(grid.n_dofs)
    n = grid.boundary_facets.nodes
    dofs = np.column_stack([2 * n[:, 0], 2 * n[:, 0] + 1, 2 * n[:, 1], 2 * n[:, 1] + 1])
    np.add.at(out, dofs.ravel(), facet_tractions(grid, bspec).ravel())
    return out


def element_tractions(grid: Grid, bspec: BoundarySpec) -> np.ndarray:
    """Traction load restricted to ``dK_j ∩ Gamma_b`` in each element's local numbering."""
    fac = grid.boundary_facets
    loads = facet_tractions(grid, bspec)
    out = np.zeros((grid.n_coarse, grid.element_ndofs))
    for k in np.flatnonzero(bspec.neumann):
        j = fac.coarse[k]
        pos = np.searchsorted(grid.element_nodes[j], fac.nodes[k])
        out[j, [2 * pos[0], 2 * pos[0] + 1, 2 * pos[1], 2 * pos[1] + 1]] += loads[k]
    return out


def load_vector(grid: Grid, bspec: BoundarySpec, f: Optional[Callable], A, lifting=None) -> np.ndarray:
    """Right-hand side ``(f, v) + (g, v)_{Gamma_b} - a(h, v)`` on all DOFs.

    ``lifting`` defaults to the nodal interpolant of ``bspec.h``.
    """
    if lifting is None:
        lifting = interpolate(grid, bspec.h)
    return body_load(grid, f) + traction_load(grid, bspec) - A @ lifting


# ---------------------------------------------------------------------------
# solve and norms


def free_dofs(n_dofs: int, essential) -> np.ndarray:
    mask = np.ones(n_dofs, dtype=bool)
    mask[np.asarray(essential, dtype=int)] = False
    return np.flatnonzero(mask)


def spd_factor(K):
    return spla.splu(sp.csc_matrix(K), permc_spec="MMD_AT_PLUS_A")


def fine_solve(A, load, essential, lifting=None, rtol=1e-10) -> np.ndarray:
    """Solve for the zero-Dirichlet part and add back the lifting."""
    n = A.shape[0]
    free = free_dofs(n, essential)
    if len(free) == n:
        raise ValueError("no essential DOFs: the elasticity system is singular")
    Aff = A[free][:, free]
    b = load[free]
    try:
        x = spd_factor(Aff).solve(b)
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(f"fine system is singular: {exc}") from exc
    nb = np.linalg.norm(b)
    if nb > 0 and np.linalg.norm(Aff @ x - b) > rtol * nb:
        raise np.linalg.LinAlgError("fine solve did not reach the requested residual")
    u = np.zeros(n) if lifting is None else np.array(lifting, dtype=float)
    u[free] += x
    return u


def quad_norm(v, K) -> float:
    q = float(v @ (K @ v))
    if q < -1e-12 * max(1.0, float(np.abs(K).max()) * float(v @ v)):
        raise ArithmeticError(f"negative quadratic form {q}")
    return float(np.sqrt(max(q, 0.0)))


def norms(v, A, S, M):
    """Energy, s- and L2 norms of a fine field."""
    return quad_norm(v, A), quad_norm(v, S), quad_norm(v, M)


@dataclass
class Discretization:
    """Everything derived from (grid, medium) that the multiscale pipeline reuses."""

    grid: Grid
    medium: MaterialField
    pou: PartitionOfUnity
    kappa: np.ndarray
    A: sp.csr_matrix
    S: sp.csr_matrix
    M: sp.csr_matrix
    A_K: np.ndarray  # (n_coarse, nK, nK) element stiffness on closed coarse elements
    S_K: np.ndarray


def discretize(grid: Grid, medium: MaterialField) -> Discretization:
    pou = partition_of_unity(grid)
    kappa = kappa_tilde(grid, medium, pou)
    Ke = cell_stiffness(grid, medium)
    Me = cell_weighted_mass(grid, kappa)
    return Discretization(
        grid=grid,
        medium=medium,
        pou=pou,
        kappa=kappa,
        A=_scatter(grid, Ke),
        S=_scatter(grid, Me),
        M=mass_matrix(grid),
        A_K=element_blocks(grid, Ke),
        S_K=element_blocks(grid, Me),
    )
