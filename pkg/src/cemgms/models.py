"""Boundary data, sources and media of the three model problems."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .grid import BoundarySpec, Grid, zero_field


def model1_h(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.stack([x + np.exp(x * y), np.cos(x) * np.cos(y)], axis=-1)


def model1_f(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    cross = ((x > 1 / 8) & (x < 7 / 8) & (y > 3 / 8) & (y < 5 / 8)) | (
        (x > 3 / 8) & (x < 5 / 8) & (y > 1 / 8) & (y < 7 / 8)
    )
    return np.stack([cross.astype(float), np.zeros_like(x)], axis=-1)


def model2_g(x, y):
    """Tractions on the left, right and bottom edges (top edge is clamped)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    gx = np.zeros_like(x)
    gx = np.where(np.isclose(x, 0.0), -1.0, gx)
    gx = np.where(np.isclose(x, 1.0), 1.0, gx)
    bottom = np.isclose(y, 0.0) & ~np.isclose(x, 0.0) & ~np.isclose(x, 1.0)
    gx = np.where(bottom & (x < 0.5), 1.0, gx)
    gx = np.where(bottom & (x > 0.5), 0.0, gx)
    return np.stack([gx, np.zeros_like(x)], axis=-1)


def model3_g(x, y):
    """Tractions on the left, right and top edges (bottom edge carries Dirichlet data)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    gx = np.where(np.isclose(x, 0.0), -1.0, np.where(np.isclose(x, 1.0), 1.0, 0.0))
    top = np.isclose(y, 1.0) & ~np.isclose(x, 0.0) & ~np.isclose(x, 1.0)
    gy = np.where(top & (x < 0.5), 1.0, 0.0)
    return np.stack([gx, gy], axis=-1)


@dataclass
class ModelProblem:
    name: str
    bspec: BoundarySpec
    f: Optional[Callable]
    medium: str  # default medium preset


def model_problem(model, grid: Grid) -> ModelProblem:
    """Model 1: clamped everywhere with h and a cross-shaped body force.
    Model 2: top edge clamped at zero, piecewise constant tractions elsewhere.
    Model 3: bottom edge with the model-1 displacement, tractions on the rest, no body force.
    ``custom``: clamped on the whole boundary with zero data.
    """
    model = str(model)
    if model == "1":
        return ModelProblem("1", BoundarySpec.from_sides(grid, ("bottom", "right", "top", "left"), h=model1_h), model1_f, "model1")
    if model == "2":
        return ModelProblem("2", BoundarySpec.from_sides(grid, ("top",), g=model2_g), None, "model2")
    if model == "3":
        return ModelProblem("3", BoundarySpec.from_sides(grid, ("bottom",), h=model1_h, g=model3_g), None, "model3")
    if model == "custom":
        return ModelProblem("custom", BoundarySpec.from_sides(grid, ("bottom", "right", "top", "left")), None, "homogeneous")
    raise ValueError(f"unknown model {model!r}")
