"""Local spectral problems on coarse elements and the s-orthogonal projection."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .fem import Discretization
from .grid import Grid


@dataclass(frozen=True)
class AuxBasis:
    element: int
    eigenvalues: np.ndarray  # the g smallest, ascending
    vectors: np.ndarray  # (nK, g), s-orthonormal, local numbering of the closed element
    spectrum: np.ndarray  # full local spectrum

    @property
    def count(self) -> int:
        return self.vectors.shape[1]

    @property
    def next_eigenvalue(self) -> float:
        """First eigenvalue left out of the auxiliary space (inf if none)."""
        g = self.count
        return float(self.spectrum[g]) if g < len(self.spectrum) else np.inf


def rigid_modes(coords: np.ndarray) -> np.ndarray:
    """Two translations and the linearised rotation, as interleaved DOF columns."""
    c = coords - coords.mean(axis=0)
    R = np.zeros((2 * len(coords), 3))
    R[0::2, 0] = 1.0
    R[1::2, 1] = 1.0
    R[0::2, 2] = -c[:, 1]
    R[1::2, 2] = c[:, 0]
    return R


def _s_gram_schmidt(V, S):
    L = np.linalg.cholesky(V.T @ S @ V)
    return sla.solve_triangular(L, V.T, lower=True).T


def _fix_signs(V):
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def local_eigenproblem(A_K, S_K, g: int, coords: Optional[np.ndarray] = None, element: int = -1) -> AuxBasis:
    """Dense generalized eigenproblem ``A_K phi = theta S_K phi`` with natural BCs.

    The a-null space spanned by rigid motions is degenerate; when ``coords``
    are given it is replaced by the s-orthonormalised translations/rotation in
    that order so the basis does not depend on LAPACK's choice inside the
    eigenspace.  Remaining vectors get a sign convention (largest entry positive).
    """
    n = A_K.shape[0]
    if not 1 <= g <= n:
        raise ValueError(f"need 1 <= g <= {n}, got {g}")
    A_K = 0.5 * (A_K + A_K.T)
    S_K = 0.5 * (S_K + S_K.T)
    try:
        theta, V = sla.eigh(A_K, S_K)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("weighted mass is not positive definite on the element") from exc
    scale = max(abs(theta[-1]), 1.0)
    theta = np.where(np.abs(theta) < 1e-10 * scale, 0.0, theta)
    V = _fix_signs(V)
    if coords is not None:
        k0 = int(np.count_nonzero(theta == 0.0))
        if k0 == 3:
            V[:, :3] = _s_gram_schmidt(rigid_modes(coords), S_K)
    # one pass of re-orthonormalisation against S
    Vg = _s_gram_schmidt(V[:, :g], S_K)
    return AuxBasis(int(element), theta[:g].copy(), Vg, theta)


def build_aux(disc: Discretization, nbf: int, elements: Optional[Sequence[int]] = None, executor=None) -> List[AuxBasis]:
    grid = disc.grid
    coords = grid.node_coords
    elements = range(grid.n_coarse) if elements is None else elements

    def one(j):
        return local_eigenproblem(disc.A_K[j], disc.S_K[j], nbf, coords[grid.element_nodes[j]], j)

    if executor is None:
        return [one(j) for j in elements]
    return list(executor.map(one, elements))


def lambda_min(aux: Sequence[AuxBasis]) -> float:
    """min_j theta_j^{g_j + 1}: the smallest eigenvalue excluded from the auxiliary space."""
    return float(min(a.next_eigenvalue for a in aux))


def lambda_min_included(aux: Sequence[AuxBasis]) -> float:
    """min_j theta_j^{g_j}: largest retained eigenvalue, minimised over elements."""
    return float(min(a.eigenvalues[-1] for a in aux))


# ---------------------------------------------------------------------------
# projection
#
# pi(v) lives in the broken space (one piece per coarse element), so fields
# are handled per element as arrays of shape (n_coarse, nK).


def broken(grid: Grid, v: np.ndarray) -> np.ndarray:
    """Restrict a global fine field to every closed coarse element."""
    return np.asarray(v)[grid.element_dofs]


def project_coefficients(aux: Sequence[AuxBasis], S_K: np.ndarray, vb: np.ndarray) -> List[np.ndarray]:
    """Coefficients s_j(v, phi_j^i) / s_j(phi_j^i, phi_j^i) for every element."""
    out = []
    for a in aux:
        j = a.element
        sv = a.vectors.T @ (S_K[j] @ vb[j])
        ss = np.einsum("ni,nm,mi->i", a.vectors, S_K[j], a.vectors)
        out.append(sv / ss)
    return out


def project_pi(aux: Sequence[AuxBasis], v: np.ndarray, S_K: np.ndarray, grid: Optional[Grid] = None) -> np.ndarray:
    """Apply pi = sum_j pi_j.

    ``v`` is either a global fine field (``grid`` required) or a broken field of
    shape ``(n_coarse, nK)``; the result is always broken.
    """
    vb = broken(grid, v) if np.ndim(v) == 1 else np.asarray(v)
    out = np.zeros_like(vb, dtype=float)
    for a, c in zip(aux, project_coefficients(aux, S_K, vb)):
        out[a.element] = a.vectors @ c
    return out


def broken_s_norm(S_K: np.ndarray, vb: np.ndarray, element: Optional[int] = None) -> float:
    if element is not None:
        return float(np.sqrt(max(vb[element] @ S_K[element] @ vb[element], 0.0)))
    return float(np.sqrt(max(np.einsum("jn,jnm,jm->", vb, S_K, vb), 0.0)))
