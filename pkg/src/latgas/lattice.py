"""Cylinder lattice {1..N-1} x T_N^{d-1}: indexing, neighbors, configurations.

The first coordinate runs over 1..N-1 with hard walls (no wrap); the remaining
d-1 coordinates are periodic with period N.  Directions are indexed
0..2d-1 as (+e_1, -e_1, +e_2, -e_2, ...).  A `periodic=True` lattice wraps the
first coordinate on its ring of N-1 sites instead (used by the exact-generator
workbench to check invariance of product measures).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .velocities import VelocitySet


class BoundarySide(Enum):
    LEFT = "left"
    RIGHT = "right"
    BULK = "bulk"


@dataclass(frozen=True)
class Lattice:
    N: int
    d: int = 1
    periodic: bool = False

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if self.d < 1:
            raise ValueError("d must be >= 1")

    @property
    def shape(self) -> tuple:
        return (self.N - 1,) + (self.N,) * (self.d - 1)

    @property
    def n_sites(self) -> int:
        return (self.N - 1) * self.N ** (self.d - 1)

    def index(self, coords) -> int:
        """Flat site index of coordinates (x1, ..., xd), x1 in 1..N-1."""
        coords = tuple(int(c) for c in coords)
        if len(coords) != self.d:
            raise ValueError(f"expected {self.d} coordinates, got {len(coords)}")
        x1 = coords[0]
        if not 1 <= x1 <= self.N - 1:
            raise ValueError(f"x1={x1} outside 1..{self.N - 1}")
        rest = coords[1:]
        if any(not 0 <= c <= self.N - 1 for c in rest):
            raise ValueError(f"transverse coordinate out of range in {coords}")
        return int(np.ravel_multi_index((x1 - 1,) + rest, self.shape))

    def coords(self, site: int) -> tuple:
        idx = np.unravel_index(int(site), self.shape)
        return (int(idx[0]) + 1,) + tuple(int(c) for c in idx[1:])

    def all_coords(self) -> np.ndarray:
        """(n_sites, d) integer coordinates in site-index order."""
        grids = np.indices(self.shape).reshape(self.d, -1).T
        grids[:, 0] += 1
        return grids

    def positions(self) -> np.ndarray:
        """Macroscopic positions x/N of all sites, shape (n_sites, d)."""
        return self.all_coords() / self.N

    def neighbor_site(self, site: int, direction: int) -> int:
        """Target of a unit jump, or -1 if it would exit through a wall."""
        axis, sign = divmod(direction, 2)
        step = 1 if sign == 0 else -1
        c = list(self.coords(site))
        if axis == 0:
            x1 = c[0] + step
            if self.periodic:
                x1 = (x1 - 1) % (self.N - 1) + 1
            elif not 1 <= x1 <= self.N - 1:
                return -1
            c[0] = x1
        else:
            c[axis] = (c[axis] + step) % self.N
        return self.index(c)

    def neighbors(self, site_or_coords) -> list:
        """All (neighbor_site, direction) pairs with jumps through walls omitted."""
        site = (site_or_coords if isinstance(site_or_coords, (int, np.integer))
                else self.index(site_or_coords))
        if not 0 <= site < self.n_sites:
            raise ValueError(f"site {site} out of range")
        out = []
        for direction in range(2 * self.d):
            tgt = self.neighbor_site(site, direction)
            if tgt >= 0:
                out.append((tgt, direction))
        return out

    def neighbor_table(self) -> np.ndarray:
        """(n_sites, 2d) table of jump targets, -1 where suppressed."""
        table = np.empty((self.n_sites, 2 * self.d), dtype=np.int64)
        for s in range(self.n_sites):
            for direction in range(2 * self.d):
                table[s, direction] = self.neighbor_site(s, direction)
        return table

    def classify(self, site_or_coords) -> BoundarySide:
        coords = (self.coords(site_or_coords)
                  if isinstance(site_or_coords, (int, np.integer))
                  else tuple(site_or_coords))
        if self.periodic:
            return BoundarySide.BULK
        x1 = coords[0]
        if x1 == 1:
            return BoundarySide.LEFT
        if x1 == self.N - 1:
            return BoundarySide.RIGHT
        return BoundarySide.BULK

    def boundary_sites(self, side: BoundarySide) -> list:
        return [s for s in range(self.n_sites) if self.classify(s) == side]


class Configuration:
    """Occupation field eta(x, v) in {0,1} on lattice sites x and velocities v."""

    def __init__(self, lattice: Lattice, vset: VelocitySet, eta=None):
        self.lattice = lattice
        self.vset = vset
        if eta is None:
            eta = np.zeros((lattice.n_sites, len(vset)), dtype=np.uint8)
        eta = np.asarray(eta, dtype=np.uint8)
        if eta.shape != (lattice.n_sites, len(vset)):
            raise ValueError(
                f"eta shape {eta.shape} does not match "
                f"(n_sites={lattice.n_sites}, nv={len(vset)})"
            )
        if not np.all(eta <= 1):
            raise ValueError("occupations must be 0 or 1")
        self.eta = eta

    def copy(self) -> "Configuration":
        return Configuration(self.lattice, self.vset, self.eta.copy())

    def totals(self) -> np.ndarray:
        return totals(self.eta, self.vset)

    def per_velocity_counts(self) -> np.ndarray:
        return self.eta.sum(axis=0, dtype=np.int64)


def totals(eta, vset: VelocitySet) -> np.ndarray:
    """Extensive conserved vector sum_x (mass, momentum)(eta_x)."""
    eta = np.asarray(eta)
    if eta.shape[1] != len(vset):
        raise ValueError("eta/velocity-set shape mismatch")
    counts = eta.sum(axis=0, dtype=np.int64).astype(float)
    return counts @ vset.vtilde


# Checkpoint byte layout (little-endian):
#   magic     4 bytes  b"LGCK"
#   version   u8       currently 1
#   d         u8
#   flags     u8       bit 0: periodic first axis
#   reserved  u8       zero
#   N         u32
#   n_vel     u32
#   payload   packbits of eta.ravel(order="C"), bitorder="little"
_CKPT_MAGIC = b"LGCK"
_CKPT_HEADER = struct.Struct("<4sBBBBII")


def save_configuration(cfg: Configuration, path) -> None:
    lat = cfg.lattice
    header = _CKPT_HEADER.pack(
        _CKPT_MAGIC, 1, lat.d, 1 if lat.periodic else 0, 0, lat.N, len(cfg.vset)
    )
    payload = np.packbits(cfg.eta.ravel(order="C"), bitorder="little").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_configuration(path, vset: VelocitySet) -> Configuration:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, d, flags, _, n, nv = _CKPT_HEADER.unpack_from(raw, 0)
    if magic != _CKPT_MAGIC:
        raise ValueError("not a configuration checkpoint")
    if version != 1:
        raise ValueError(f"unsupported checkpoint version {version}")
    if nv != len(vset) or d != vset.d:
        raise ValueError("checkpoint velocity layout does not match the given set")
    lat = Lattice(n, d, periodic=bool(flags & 1))
    n_bits = lat.n_sites * nv
    bits = np.unpackbits(
        np.frombuffer(raw, dtype=np.uint8, offset=_CKPT_HEADER.size),
        bitorder="little", count=n_bits,
    )
    return Configuration(lat, vset, bits.reshape(lat.n_sites, nv))
