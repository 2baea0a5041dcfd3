"""Dirichlet (H) and Neumann (G) boundary correctors.

Each coarse element ``K_j`` contributes one local problem on its oversampling
region with the element's data as right-hand side:

* Dirichlet: ``b(z) = int_{K_j} sigma(h) : eps(z)``, i.e. ``A_{K_j} h``;
* Neumann:   ``b(z) = int_{dK_j ∩ Gamma_b} g . z ds``.

The constrained variant pins the s-moments against the auxiliary vectors of
``K_j`` to the same functional evaluated at those vectors (zero for the other
member elements, whose aux functions do not meet ``K_j``'s interior).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .aux_space import AuxBasis
from .cem_basis import RegionSolver, check_variant, region_solver
from .fem import Discretization, element_tractions
from .grid import BoundarySpec


@dataclass
class Corrector:
    kind: str  # "dirichlet" | "neumann"
    variant: str  # "relaxed" | "constrained"
    layers: Optional[int]  # None for the global operator
    field: np.ndarray
    solved: int = 0  # number of element problems that had non-zero data


def dirichlet_element_data(disc: Discretization, lifting: np.ndarray) -> np.ndarray:
    """``A_{K_j} h`` on every closed coarse element, ``(n_coarse, nK)``."""
    hK = lifting[disc.grid.element_dofs]
    out = np.einsum("jab,jb->ja", disc.A_K, hK)
    # rigid parts of h only produce rounding noise; treat it as exact zero
    scale = np.abs(disc.A_K).max(axis=(1, 2)) * np.abs(hK).max(axis=1)
    out[np.abs(out) <= 1e-13 * scale[:, None]] = 0.0
    return out


def neumann_element_data(disc: Discretization, bspec: BoundarySpec) -> np.ndarray:
    return element_tractions(disc.grid, bspec)


def _has_data(vec) -> bool:
    return bool(np.any(vec != 0.0))


def element_corrector(solver: RegionSolver, aux: Sequence[AuxBasis], j: int, data_local: np.ndarray, variant: str):
    """Local corrector of element ``j`` on the solver's region (free-DOF vector)."""
    b = solver.element_rhs(j, data_local)
    c = None
    if variant == "constrained":
        c = np.zeros(solver.n_constraints)
        c[solver.rows[int(j)]] = aux[j].vectors.T @ data_local
        return solver.solve_constrained(b, c)
    return solver.solve_relaxed(b)


def _corrector(kind, disc, aux, dnodes, data, m, variant, executor):
    check_variant(variant)
    grid = disc.grid
    active = [j for j in range(grid.n_coarse) if _has_data(data[j])]
    out = np.zeros(grid.n_dofs)
    if not active:
        return Corrector(kind, variant, m, out, 0)
    if m is None:
        s = region_solver(disc, aux, 0, None, dnodes)
        for j in active:
            out[s.free] += element_corrector(s, aux, j, data[j], variant)
        return Corrector(kind, variant, None, out, len(active))

    def one(j):
        s = region_solver(disc, aux, j, m, dnodes)
        return s.free, element_corrector(s, aux, j, data[j], variant)

    results = map(one, active) if executor is None else executor.map(one, active)
    for free, x in results:  # fixed element order keeps the sum reproducible
        out[free] += x
    return Corrector(kind, variant, m, out, len(active))


def dirichlet_corrector(disc, aux, bspec: BoundarySpec, lifting, m, variant, executor=None) -> Corrector:
    """Localized (``m`` int) or global (``m=None``) Dirichlet corrector ``H h``."""
    dnodes = bspec.dirichlet_nodes(disc.grid)
    return _corrector("dirichlet", disc, aux, dnodes, dirichlet_element_data(disc, lifting), m, variant, executor)


def neumann_corrector(disc, aux, bspec: BoundarySpec, m, variant, executor=None) -> Corrector:
    dnodes = bspec.dirichlet_nodes(disc.grid)
    data = neumann_element_data(disc, bspec)
    interior = np.ones(disc.grid.n_coarse, dtype=bool)
    interior[disc.grid.boundary_facets.coarse[bspec.neumann]] = False
    assert not np.any(data[interior]), "traction data on an element away from Gamma_b"
    return _corrector("neumann", disc, aux, dnodes, data, m, variant, executor)


def global_corrector_pair(disc, aux, bspec, lifting, variant):
    """(H_glo h, G_glo g): element problems posed on the whole domain."""
    return (
        dirichlet_corrector(disc, aux, bspec, lifting, None, variant),
        neumann_corrector(disc, aux, bspec, None, variant),
    )


def relative_decay(local: Corrector, glob: Corrector, K) -> float:
    """||local - global||_K / ||global||_K, NaN when the global corrector vanishes."""
    d = local.field - glob.field
    den = float(glob.field @ (K @ glob.field))
    if den <= 0.0:
        return float("nan")
    return float(np.sqrt(max(d @ (K @ d), 0.0) / den))
