"""Coarse multiscale system, reconstruction and error metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from . import aux_space
from .cem_basis import CemBasisSet, build_space, check_variant, columns_to_matrix, region_solver
from .correctors import (
    Corrector,
    dirichlet_element_data,
    element_corrector,
    global_corrector_pair,
    neumann_element_data,
)
from .fem import Discretization, fine_solve, interpolate, load_vector, quad_norm
from .grid import BoundarySpec


@dataclass
class FineReference:
    u: np.ndarray  # u_h
    lifting: np.ndarray  # interpolant of h
    load: np.ndarray  # (f, v) + (g, v) - a(h, v) on all DOFs
    essential: np.ndarray


def fine_reference(disc: Discretization, bspec: BoundarySpec, f: Optional[Callable] = None) -> FineReference:
    grid = disc.grid
    lifting = interpolate(grid, bspec.h)
    load = load_vector(grid, bspec, f, disc.A, lifting)
    essential = bspec.dirichlet_dofs(grid)
    u = fine_solve(disc.A, load, essential, lifting)
    return FineReference(u, lifting, load, essential)


def localized_pass(disc, aux, bspec, lifting, m, variant, executor=None, basis=True, correctors=True, corrector_variant=None):
    """Basis set and both correctors for layer count ``m`` sharing one factorization per element.

    Correctors follow ``variant`` unless ``corrector_variant`` is given.
    Returns ``(CemBasisSet | None, H, G)``; the correctors are ``None`` when not requested.
    """
    check_variant(variant)
    cvar = check_variant(corrector_variant or variant)
    grid = disc.grid
    dnodes = bspec.dirichlet_nodes(grid)
    hdata = dirichlet_element_data(disc, lifting) if correctors else None
    gdata = neumann_element_data(disc, bspec) if correctors else None

    def needed(j):
        if basis:
            return True
        return bool(np.any(hdata[j] != 0) or np.any(gdata[j] != 0))

    elements = [j for j in range(grid.n_coarse) if needed(j)]

    def one(j):
        s = region_solver(disc, aux, j, m, dnodes)
        X = s.basis(variant, s.target_rows(j)) if basis else None
        xh = xg = None
        if correctors and np.any(hdata[j] != 0):
            xh = element_corrector(s, aux, j, hdata[j], cvar)
        if correctors and np.any(gdata[j] != 0):
            xg = element_corrector(s, aux, j, gdata[j], cvar)
        return j, s.free, X, xh, xg

    results = map(one, elements) if executor is None else executor.map(one, elements)
    cols, cmap, sup = [], {}, []
    H = np.zeros(grid.n_dofs)
    G = np.zeros(grid.n_dofs)
    nh = ng = 0
    for j, free, X, xh, xg in results:
        if X is not None:
            for i in range(X.shape[1]):
                cmap[(j, i)] = len(cols)
                cols.append((free, X[:, i]))
                sup.append(free)
        if xh is not None:
            H[free] += xh
            nh += 1
        if xg is not None:
            G[free] += xg
            ng += 1
    space = CemBasisSet(variant, m, columns_to_matrix(grid.n_dofs, cols), cmap, sup) if basis else None
    if not correctors:
        return space, None, None
    return space, Corrector("dirichlet", cvar, m, H, nh), Corrector("neumann", cvar, m, G, ng)


@dataclass
class CoarseSystem:
    gram: np.ndarray
    rhs: np.ndarray


def assemble_coarse(basis: CemBasisSet, A, load, H: Optional[Corrector] = None, G: Optional[Corrector] = None) -> CoarseSystem:
    """Gram matrix a(xi_a, xi_b) and the corrected right-hand side."""
    B = basis.matrix
    if B.shape[0] != A.shape[0] or load.shape[0] != A.shape[0]:
        raise ValueError("basis, stiffness and load dimensions differ")
    r = np.array(load, dtype=float)
    if H is not None:
        r += A @ H.field
    if G is not None:
        r -= A @ G.field
    gram = (B.T @ (A @ B)).toarray()
    gram = 0.5 * (gram + gram.T)
    return CoarseSystem(gram, np.asarray(B.T @ r).ravel())


def solve_multiscale(system: CoarseSystem, basis: CemBasisSet, H, G, lifting) -> np.ndarray:
    """u_cem = l_cem - H h + G g + h on the fine grid."""
    d = np.sqrt(np.diag(system.gram))
    if not np.all(d > 0):
        raise np.linalg.LinAlgError("coarse Gram matrix has a zero-energy column")
    gram = system.gram / np.outer(d, d)  # unit diagonal, so pivots are scale free
    try:
        factor = sla.cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("coarse Gram matrix is singular") from exc
    # a dependent column survives Cholesky with a pivot at roundoff level
    if np.min(np.diag(factor[0])) ** 2 <= len(d) * np.finfo(float).eps:
        raise np.linalg.LinAlgError("coarse Gram matrix is numerically singular")
    coeffs = sla.cho_solve(factor, system.rhs / d) / d
    u = basis.matrix @ coeffs + lifting
    if H is not None:
        u = u - H.field
    if G is not None:
        u = u + G.field
    return np.asarray(u).ravel()


@dataclass
class ErrorReport:
    rel_energy: float
    rel_l2: float
    rel_h: float = float("nan")
    rel_g: float = float("nan")
    lambda_min: float = float("nan")  # min_j theta_j^{g_j + 1}
    lambda_min_included: float = float("nan")  # min_j theta_j^{g_j}, recorded for comparison
    error_bound: float = float("nan")  # lambda_min^{-1/2} ||f||_{L2}
    abs_energy: float = 0.0
    abs_l2: float = 0.0
    flags: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def _ratio(num, den, flags, tag):
    if den > 0.0:
        return num / den
    flags.append(f"{tag}:zero-reference")
    return num


def compute_errors(u_cem, u_h, disc: Discretization, aux=None, f_l2=None, H=None, H_glo=None, G=None, G_glo=None, meta=None) -> ErrorReport:
    """Relative energy/L2 errors plus corrector decay and the spectral constant.

    With a vanishing reference the absolute norm is reported and a flag set.
    """
    A, M = disc.A, disc.M
    d = u_cem - u_h
    flags = []
    ea, el = quad_norm(d, A), quad_norm(d, M)
    rep = ErrorReport(
        rel_energy=_ratio(ea, quad_norm(u_h, A), flags, "energy"),
        rel_l2=_ratio(el, quad_norm(u_h, M), flags, "l2"),
        abs_energy=ea,
        abs_l2=el,
        flags=flags,
        meta=dict(meta or {}),
    )
    if H is not None and H_glo is not None:
        rep.rel_h = _decay(H, H_glo, A, flags, "H")
    if G is not None and G_glo is not None:
        rep.rel_g = _decay(G, G_glo, A, flags, "G")
    if aux is not None:
        rep.lambda_min = aux_space.lambda_min(aux)
        rep.lambda_min_included = aux_space.lambda_min_included(aux)
        if f_l2 is not None:
            rep.error_bound = f_l2 / np.sqrt(rep.lambda_min) if rep.lambda_min > 0 else np.inf
    return rep


def _decay(loc: Corrector, glo: Corrector, A, flags, tag) -> float:
    den = quad_norm(glo.field, A)
    if den == 0.0:
        flags.append(f"rel{tag}:undefined")
        return float("nan")
    return quad_norm(loc.field - glo.field, A) / den


def body_l2(disc: Discretization, f: Optional[Callable]) -> float:
    """||f||_{L2} by the same 2x2 Gauss rule used for the load."""
    if f is None:
        return 0.0
    qp = disc.grid.quad_points()
    fq = np.broadcast_to(np.asarray(f(qp[..., 0], qp[..., 1]), dtype=float), qp.shape)
    w = 0.25 * disc.grid.hx * disc.grid.hy
    return float(np.sqrt(w * np.sum(fq**2)))


@dataclass
class GlobalSolution:
    u: np.ndarray
    basis: CemBasisSet
    H: Corrector
    G: Corrector


def global_solution(disc, aux, bspec, ref: FineReference, variant: str, corrector_variant=None) -> GlobalSolution:
    """u_glo: the non-localized method (global basis and global correctors)."""
    space = build_space(disc, aux, bspec.dirichlet_nodes(disc.grid), None, variant)
    H, G = global_corrector_pair(disc, aux, bspec, ref.lifting, corrector_variant or variant)
    sys_ = assemble_coarse(space, disc.A, ref.load, H, G)
    return GlobalSolution(solve_multiscale(sys_, space, H, G, ref.lifting), space, H, G)
