"""Piecewise-constant elastic media on the fine cells."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .grid import Grid


def lame(E, nu):
    """Lame pair ``(lambda, mu)`` from Young's modulus and Poisson ratio."""
    E = np.asarray(E, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if np.any(E <= 0):
        raise ValueError("Young's modulus must be positive")
    if np.any((nu <= 0) | (nu >= 0.5)):
        raise ValueError("Poisson ratio must lie in (0, 0.5)")
    lam = nu * E / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    if lam.ndim == 0:
        return float(lam), float(mu)
    return lam, mu


@dataclass(frozen=True)
class MaterialField:
    E: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        E = np.ascontiguousarray(self.E, dtype=float)
        nu = np.ascontiguousarray(self.nu, dtype=float)
        if E.shape != nu.shape or E.ndim != 1:
            raise ValueError("E and nu must be 1-D arrays of equal length")
        lame(E, nu)  # validates ranges
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "nu", nu)

    @classmethod
    def homogeneous(cls, grid: Grid, E=1.0, nu=0.25):
        return cls(np.full(grid.n_cells, float(E)), np.full(grid.n_cells, float(nu)))

    @property
    def lam(self) -> np.ndarray:
        return lame(self.E, self.nu)[0]

    @property
    def mu(self) -> np.ndarray:
        return lame(self.E, self.nu)[1]

    @property
    def contrast(self) -> float:
        return float(self.E.max() / self.E.min())

    def scaled(self, c: float) -> "MaterialField":
        return MaterialField(self.E * c, self.nu)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.E.tobytes())
        h.update(self.nu.tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# inclusion geometry


@dataclass(frozen=True)
class Rect:
    """Axis-aligned box ``[x0, x1] x [y0, y1]``; optional per-shape material."""

    x0: float
    x1: float
    y0: float
    y1: float
    E: Optional[float] = None
    nu: Optional[float] = None

    def contains(self, x, y):
        return (x > self.x0) & (x < self.x1) & (y > self.y0) & (y < self.y1)

    def parts(self):
        return [self]


@dataclass(frozen=True)
class LChannel:
    """L-shaped channel: a horizontal and a vertical arm meeting at ``corner``.

    ``dx``/``dy`` are signed arm lengths measured from the corner, ``width``
    is the channel thickness.
    """

    corner: tuple
    dx: float
    dy: float
    width: float
    E: Optional[float] = None
    nu: Optional[float] = None

    def parts(self):
        cx, cy = self.corner
        w = self.width
        hx0, hx1 = sorted((cx, cx + self.dx))
        vy0, vy1 = sorted((cy, cy + self.dy))
        return [
            Rect(min(hx0, cx), max(hx1, cx + w), cy, cy + w, self.E, self.nu),
            Rect(cx, cx + w, min(vy0, cy), max(vy1, cy + w), self.E, self.nu),
        ]

    def contains(self, x, y):
        a, b = self.parts()
        return a.contains(x, y) | b.contains(x, y)


def inclusion_medium(
    grid: Grid,
    geometry: Sequence,
    E_matrix: float = 1.0,
    nu_matrix: float = 0.25,
    E_incl: float = 1e4,
    nu_incl: float = 0.45,
) -> MaterialField:
    """Cells whose centre lies in any inclusion get the inclusion material.

    Shapes may carry their own ``E``/``nu``; a cell claimed by two shapes with
    different materials is an error.
    """
    xc, yc = grid.cell_centers[:, 0], grid.cell_centers[:, 1]
    E = np.full(grid.n_cells, float(E_matrix))
    nu = np.full(grid.n_cells, float(nu_matrix))
    claimed = np.zeros(grid.n_cells, dtype=bool)
    for shape in geometry:
        e = E_incl if shape.E is None else shape.E
        n = nu_incl if shape.nu is None else shape.nu
        inside = np.asarray(shape.contains(xc, yc))
        clash = inside & claimed & ((E != e) | (nu != n))
        if clash.any():
            raise ValueError(f"inconsistent material assignment in {int(clash.sum())} cells")
        E[inside] = e
        nu[inside] = n
        claimed |= inside
    return MaterialField(E, nu)


# Parametric stand-ins for the three media of the numerical experiments:
# isolated blocks plus thin channels. They are qualitative approximations only.
PRESETS = {
    "model1": [
        Rect(0.10, 0.20, 0.10, 0.20),
        Rect(0.70, 0.82, 0.12, 0.22),
        Rect(0.12, 0.22, 0.72, 0.84),
        Rect(0.62, 0.72, 0.62, 0.72),
        Rect(0.40, 0.48, 0.84, 0.92),
        Rect(0.05, 0.80, 0.30, 0.3375),
        Rect(0.25, 0.95, 0.5125, 0.55),
        LChannel((0.85, 0.60), -0.25, 0.30, 0.0375),
    ],
    "model2": [
        Rect(0.15, 0.25, 0.15, 0.25),
        Rect(0.55, 0.65, 0.20, 0.30),
        Rect(0.30, 0.40, 0.60, 0.70),
        Rect(0.75, 0.85, 0.70, 0.80),
        Rect(0.10, 0.90, 0.4375, 0.475),
        LChannel((0.20, 0.80), 0.40, -0.20, 0.0375),
    ],
    "model3": [
        Rect(0.12, 0.22, 0.40, 0.50),
        Rect(0.70, 0.80, 0.15, 0.25),
        Rect(0.45, 0.55, 0.70, 0.80),
        Rect(0.20, 0.2375, 0.05, 0.35),
        Rect(0.60, 0.6375, 0.35, 0.95),
        LChannel((0.30, 0.875), 0.25, -0.20, 0.0375),
    ],
}


def preset_medium(name: str, grid: Grid, contrast: float = 1e4, E_matrix=1.0, nu_matrix=0.25, nu_incl=0.45):
    if name == "homogeneous":
        return MaterialField.homogeneous(grid, E_matrix, nu_matrix)
    try:
        geometry = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown medium preset {name!r}") from None
    return inclusion_medium(grid, geometry, E_matrix, nu_matrix, contrast * E_matrix, nu_incl)


# ---------------------------------------------------------------------------
# raster files
#
# Plain text. First line "cols rows", then ``rows`` lines of integer keys, the
# first data line being the bottom row of cells.


def load_raster(path, grid: Grid, legend: dict) -> MaterialField:
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or len(lines[0]) != 2:
        raise ValueError(f"{path}: missing 'cols rows' header")
    cols, rows = (int(v) for v in lines[0])
    if (cols, rows) != (grid.NX, grid.NY):
        raise ValueError(f"{path}: raster is {cols}x{rows}, grid has {grid.NX}x{grid.NY} fine cells")
    body = lines[1:]
    if len(body) != rows or any(len(r) != cols for r in body):
        raise ValueError(f"{path}: body does not match the {cols}x{rows} header")
    keys = np.array([[int(v) for v in r] for r in body]).ravel()
    legend = {int(k): v for k, v in legend.items()}
    unknown = set(np.unique(keys)) - set(legend)
    if unknown:
        raise KeyError(f"{path}: raster keys {sorted(unknown)} missing from legend")
    table_E = {k: float(v[0]) for k, v in legend.items()}
    table_nu = {k: float(v[1]) for k, v in legend.items()}
    E = np.array([table_E[k] for k in keys])
    nu = np.array([table_nu[k] for k in keys])
    return MaterialField(E, nu)


def write_raster(path, grid: Grid, medium: MaterialField) -> dict:
    """Write ``medium`` as a raster and return the legend needed to reload it."""
    pairs = np.column_stack([medium.E, medium.nu])
    uniq, keys = np.unique(pairs, axis=0, return_inverse=True)
    keys = keys.reshape(grid.NY, grid.NX)
    with open(path, "w") as fh:
        fh.write(f"{grid.NX} {grid.NY}\n")
        for row in keys:
            fh.write(" ".join(str(int(k)) for k in row) + "\n")
    return {i: (float(e), float(n)) for i, (e, n) in enumerate(uniq)}
