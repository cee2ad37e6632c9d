"""Macroscopic observables of microscopic configurations.

The empirical measure puts mass N^{-d} I_k(eta_x) at x/N for each conserved
component k; block averages coarse-grain the conserved vector over cubes;
the box smoother turns the atomic measure into grid-sampled densities
(mass in the sup-norm eps-box around each node, divided by the box's Lebesgue
measure inside the domain and by the inflation constant U_eps = 1 + eps).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .grid import Grid
from .lattice import Configuration, Lattice
from .velocities import VelocitySet


@dataclass
class EmpiricalMeasure:
    """Atomic representation: one atom per site, d+1 mass components."""

    positions: np.ndarray   # (n_sites, d), x/N
    masses: np.ndarray      # (n_sites, d+1), N^{-d} I(eta_x)
    N: int
    d: int

    @property
    def component_totals(self) -> np.ndarray:
        return self.masses.sum(axis=0)


def empirical_measure(eta, lattice: Lattice, vset: VelocitySet) -> EmpiricalMeasure:
    if isinstance(eta, Configuration):
        eta = eta.eta
    eta = np.asarray(eta)
    if eta.shape != (lattice.n_sites, len(vset)):
        raise ValueError("configuration shape does not match lattice/velocity set")
    site_I = eta.astype(float) @ vset.vtilde
    scale = float(lattice.N) ** (-lattice.d)
    return EmpiricalMeasure(
        positions=lattice.positions(), masses=scale * site_I,
        N=lattice.N, d=lattice.d,
    )


def pair(measure: EmpiricalMeasure, G, component: int = 0) -> float:
    """<pi_k, G> = sum over atoms of mass_k(x) G(x); exact for atomic measures."""
    if callable(G):
        gvals = np.asarray(G(measure.positions), dtype=float)
    else:
        gvals = np.full(len(measure.positions), float(G))
    return float(measure.masses[:, component] @ gvals)


def block_average(eta, lattice: Lattice, vset: VelocitySet, x, L: int) -> np.ndarray:
    """Average conserved vector over the cube x + {-L..L}^d.

    Transverse directions wrap; the first coordinate must satisfy
    L+1 <= x_1 <= N-1-L so the cube stays inside the walls.
    """
    if isinstance(eta, Configuration):
        eta = eta.eta
    coords = (lattice.coords(x) if isinstance(x, (int, np.integer)) else tuple(x))
    if L < 0:
        raise ValueError("block radius must be nonnegative")
    if not L + 1 <= coords[0] <= lattice.N - 1 - L:
        raise DomainError(
            f"block of radius {L} around x1={coords[0]} leaves the cylinder "
            f"(need {L + 1} <= x1 <= {lattice.N - 1 - L})"
        )
    total = np.zeros(vset.d + 1)
    offsets = np.meshgrid(*([np.arange(-L, L + 1)] * lattice.d), indexing="ij")
    offsets = np.stack(offsets, axis=-1).reshape(-1, lattice.d)
    for off in offsets:
        c = list(coords)
        c[0] += off[0]
        for j in range(1, lattice.d):
            c[j] = (c[j] + off[j]) % lattice.N
        site = lattice.index(c)
        total += eta[site].astype(float) @ vset.vtilde
    return total / len(offsets)


@dataclass
class SmoothedField:
    """Grid-sampled smoothed densities of an empirical measure."""

    grid: Grid
    eps: float
    u_eps: float
    values: np.ndarray  # (*grid.shape, d+1)

    def to_csv(self, path, header_comment: str = "") -> None:
        nodes = self.grid.nodes().reshape(-1, self.grid.d)
        flat = self.values.reshape(-1, self.values.shape[-1])
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write(f"# eps={self.eps} u_eps={self.u_eps}\n")
            writer = csv.writer(fh)
            writer.writerow([f"u{i+1}" for i in range(self.grid.d)]
                            + [f"comp{k}" for k in range(self.values.shape[-1])])
            for x, row in zip(nodes, flat):
                writer.writerow([f"{c:.10g}" for c in x] + [f"{y:.12g}" for y in row])


def smooth(measure: EmpiricalMeasure, eps: float, grid: Grid) -> SmoothedField:
    """Box-smooth the empirical measure onto grid nodes.

    At node u the density is (mass of atoms within sup-norm distance eps,
    wrapping transverse axes) / (Lebesgue measure of the box clipped to the
    domain) / U_eps with U_eps = 1 + eps.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if grid.d != measure.d:
        raise ValueError("grid dimension does not match the measure")
    if grid.min_spacing > eps / 2 + 1e-12:
        raise ValueError(
            f"grid spacing {grid.min_spacing:.4g} exceeds eps/2 = {eps / 2:.4g}"
        )
    nodes = grid.nodes().reshape(-1, grid.d)
    pos = measure.positions
    inside = np.abs(pos[None, :, 0] - nodes[:, None, 0]) <= eps
    for j in range(1, grid.d):
        diff = np.abs(pos[None, :, j] - nodes[:, None, j])
        inside &= np.minimum(diff, 1.0 - diff) <= eps
    mass = inside @ measure.masses  # (n_nodes, d+1)
    len0 = np.minimum(nodes[:, 0] + eps, 1.0) - np.maximum(nodes[:, 0] - eps, 0.0)
    volume = len0 * (min(2 * eps, 1.0) ** (grid.d - 1))
    u_eps = 1.0 + eps
    values = mass / (volume[:, None] * u_eps)
    return SmoothedField(grid=grid, eps=eps, u_eps=u_eps,
                         values=values.reshape(grid.shape + (-1,)))


def l1_distance(grid: Grid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Componentwise integral of |a - b| over the domain (trapezoid weights)."""
    if a.shape != b.shape:
        raise ValueError("field shapes differ")
    w = grid.weights()
    diff = np.abs(a - b)
    axes = tuple(range(grid.d))
    return np.sum(diff * w[..., None], axis=axes)
