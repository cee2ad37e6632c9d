"""Uniform space grids on [0,1] x T^{d-1} shared by the PDE, field extraction,
and functional quadrature.

Axis 0 spans [0,1] with m1 nodes including both wall endpoints (spacing
1/(m1-1)); the d-1 transverse axes are periodic with mt nodes at spacing 1/mt.
Space quadrature is the trapezoid rule along axis 0 and the exact uniform rule
on the transverse torus.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid:
    d: int
    m1: int
    mt: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.m1 < 3:
            raise ValueError("need at least 3 nodes across [0,1]")
        if self.d > 1 and self.mt < 3:
            raise ValueError("transverse axes need at least 3 nodes")

    @property
    def shape(self) -> tuple:
        return (self.m1,) + (self.mt,) * (self.d - 1)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def h1(self) -> float:
        return 1.0 / (self.m1 - 1)

    @property
    def ht(self) -> float:
        return 1.0 / self.mt if self.d > 1 else 0.0

    @property
    def min_spacing(self) -> float:
        return min([self.h1] + ([self.ht] if self.d > 1 else []))

    def axis(self, i: int) -> np.ndarray:
        if i == 0:
            return np.linspace(0.0, 1.0, self.m1)
        return np.arange(self.mt) / self.mt

    def nodes(self) -> np.ndarray:
        """(shape..., d) array of node positions."""
        axes = [self.axis(i) for i in range(self.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def weights(self) -> np.ndarray:
        """Space quadrature weights, shape = grid shape; sums to |D| = 1."""
        w1 = np.full(self.m1, self.h1)
        w1[0] = w1[-1] = self.h1 / 2
        w = w1
        for _ in range(self.d - 1):
            w = np.multiply.outer(w, np.full(self.mt, self.ht))
        return w

    @property
    def tshape(self) -> tuple:
        return (self.mt,) * (self.d - 1)

    def transverse_points(self) -> np.ndarray:
        """(n_t, d-1) flattened positions on the wall torus; a single
        zero-coordinate point for d=1."""
        if self.d == 1:
            return np.zeros((1, 0))
        axes = [self.axis(1)] * (self.d - 1)
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.d - 1)

    def transverse_weights(self) -> np.ndarray:
        """Flattened surface quadrature weights on T^{d-1}; total mass 1."""
        if self.d == 1:
            return np.ones(1)
        n_t = self.mt ** (self.d - 1)
        return np.full(n_t, 1.0 / n_t)
