"""Finite symmetric velocity sets and their momentum-conserving collision table.

A velocity set is a finite family of d-vectors closed under sign flips of any
single coordinate and under coordinate permutations.  Collisions are ordered
quadruples (v, w, v', w') with v + w = v' + w'; a collision moves an incoming
pair of particles at (v, w) on one site to the outgoing slots (v', w').
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np


def _symmetry_orbit(v: tuple) -> set:
    """All images of v under coordinate sign flips and permutations."""
    orbit = set()
    for perm in itertools.permutations(v):
        for signs in itertools.product((1.0, -1.0), repeat=len(v)):
            orbit.add(tuple(s * c for s, c in zip(signs, perm)))
    return orbit


@dataclass(frozen=True)
class VelocitySet:
    """An ordered, duplicate-free, reflection/permutation-invariant velocity set.

    Attributes:
        velocities: (nv, d) float array, one velocity per row.
        d: spatial dimension.
        breve_v: maximum first coordinate over the set.
        vtilde: (nv, d+1) array with rows (1, v_1, ..., v_d), the per-particle
            contribution to the (mass, momentum) vector.
    """

    velocities: np.ndarray
    d: int = field(init=False)
    breve_v: float = field(init=False)
    vtilde: np.ndarray = field(init=False)

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if v.size == 0:
            raise ValueError("velocity set must be nonempty")
        object.__setattr__(self, "velocities", v)
        object.__setattr__(self, "d", v.shape[1])
        object.__setattr__(self, "breve_v", float(np.max(v[:, 0])))
        object.__setattr__(self, "vtilde", np.hstack([np.ones((len(v), 1)), v]))
        self._validate()

    def _validate(self):
        rows = [tuple(r) for r in self.velocities]
        if len(set(rows)) != len(rows):
            raise ValueError("duplicate velocities in set")
        members = set(rows)
        for r in rows:
            missing = _symmetry_orbit(r) - members
            if missing:
                raise ValueError(
                    f"velocity set not closed under reflections/permutations: "
                    f"orbit of {r} is missing {sorted(missing)[:4]}"
                )

    def __len__(self) -> int:
        return len(self.velocities)

    def index_of(self, v) -> int:
        v = np.asarray(v, dtype=float)
        hits = np.where(np.all(self.velocities == v, axis=1))[0]
        if len(hits) != 1:
            raise ValueError(f"velocity {v} not in set")
        return int(hits[0])

    def max_l1_speed(self) -> float:
        """max_v sum_j |v_j|; must be <= 1 for the default nearest-neighbor jump law."""
        return float(np.max(np.sum(np.abs(self.velocities), axis=1)))

    def rescaled(self, factor: float) -> "VelocitySet":
        return VelocitySet(self.velocities * factor)


def load_velocity_set(path) -> VelocitySet:
    """Read a velocity set from a plain-text table (one velocity per line, d columns)."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            rows.append([float(tok) for tok in line.split()])
    if not rows:
        raise ValueError(f"no velocities found in {path}")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"inconsistent column counts in {path}: {sorted(widths)}")
    return VelocitySet(np.array(rows))


def save_velocity_set(vset: VelocitySet, path) -> None:
    with open(path, "w") as fh:
        for row in vset.velocities:
            fh.write(" ".join(repr(float(c)) for c in row) + "\n")


@dataclass(frozen=True)
class Collision:
    """Ordered quadruple of velocity indices (v, w, v', w') with v+w = v'+w'."""

    v: int
    w: int
    vp: int
    wp: int

    def reversed(self) -> "Collision":
        return Collision(self.vp, self.wp, self.v, self.w)


class CollisionSet:
    """All ordered momentum-conserving quadruples over a velocity set.

    `quadruples` holds every (v, w, v', w') in V^4 with v + w = v' + w' exactly.
    `active` is the subset that can ever fire under the occupancy rate
    eta(v) eta(w) (1-eta(v')) (1-eta(w')): those with {v, w} disjoint from
    {v', w'}.  Construction rejects velocity sets containing a fireable
    quadruple with a repeated incoming or outgoing slot, since the slot swap
    would not conserve mass for such sets.
    """

    def __init__(self, vset: VelocitySet):
        self.vset = vset
        vel = vset.velocities
        nv = len(vset)
        quadruples = []
        active = []
        for i, j, k, l in itertools.product(range(nv), repeat=4):
            if not np.array_equal(vel[i] + vel[j], vel[k] + vel[l]):
                continue
            q = Collision(i, j, k, l)
            quadruples.append(q)
            if {i, j}.isdisjoint({k, l}):
                if i == j or k == l:
                    raise ValueError(
                        "velocity set admits a mass-non-conserving collision "
                        f"quadruple {q}; repeated slots in a fireable collision "
                        "are not supported"
                    )
                active.append(q)
        self.quadruples = tuple(quadruples)
        self.active = tuple(active)

    def __len__(self) -> int:
        return len(self.quadruples)


# Two ready-made sets used throughout tests and shipped configs.  Both have
# max_l1_speed <= 1 so the default nearest-neighbor jump law applies directly.
def two_velocity_set(speed: float = 0.5) -> VelocitySet:
    """d=1 minimal set {+speed, -speed}; collisions are all no-ops for this set."""
    return VelocitySet(np.array([[speed], [-speed]]))


def four_velocity_set(fast: float = 0.5, slow: float = 0.25) -> VelocitySet:
    """d=1 set {±fast, ±slow} with genuine pair-exchange collisions."""
    if fast == slow:
        raise ValueError("speeds must differ")
    return VelocitySet(np.array([[fast], [-fast], [slow], [-slow]]))
