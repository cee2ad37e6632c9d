"""Continuous-time dynamics: exclusion jumps, on-site collisions, reservoirs.

Three event families drive the chain, all accelerated by N^2 on the
macroscopic clock:

  * exclusion: a particle at (x, v) hops to a neighbor (x+y, v) at rate
    P_N(y, v) = 1/2 + p(y, v)/N when the target slot is empty; jumps through
    the x_1 walls are suppressed;
  * collision: an ordered quadruple q = (v, w, v', w') fires at rate 1 on a
    site holding the incoming pair with the outgoing slots empty, swapping
    (v, w) occupation into (v', w');
  * boundary: slots on the wall layers flip at reservoir rates alpha_v /
    1 - alpha_v (left) and beta_v / 1 - beta_v (right).

The simulator thins a Poisson candidate stream against static per-family rate
bounds (composition-rejection): candidates arrive at the constant bound rate,
are accepted with probability rate/bound evaluated lazily from the current
configuration, and rejected candidates advance the clock only.  Waiting times
between accepted events are therefore exactly Exponential(total rate x N^2)
and events are chosen proportionally to their rates, with O(1) expected work
per event.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NumericalFailure
from .lattice import BoundarySide, Configuration, Lattice
from .velocities import Collision, CollisionSet, VelocitySet

_UNIT_MEAN_TOL = 1e-15


class JumpLaw:
    """Per-velocity jump probabilities p(y, v) on the 2d unit displacements.

    Columns follow the direction indexing (+e_1, -e_1, +e_2, -e_2, ...).  Each
    row must be a probability vector whose mean displacement equals the
    velocity exactly (to 1e-15 per component).  Longer-range laws are not
    supported; the nearest-neighbor default below covers every velocity set
    with max_l1_speed <= 1.
    """

    def __init__(self, vset: VelocitySet, probs):
        probs = np.asarray(probs, dtype=float)
        d, nv = vset.d, len(vset)
        if probs.shape != (nv, 2 * d):
            raise ValueError(f"probs shape {probs.shape}, expected {(nv, 2 * d)}")
        if np.any(probs < 0):
            raise ValueError("jump probabilities must be nonnegative")
        if np.max(np.abs(probs.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("jump probabilities must sum to 1 per velocity")
        mean = probs[:, 0::2] - probs[:, 1::2]
        if np.max(np.abs(mean - vset.velocities)) > _UNIT_MEAN_TOL:
            raise ValueError("mean displacement does not equal the velocity")
        self.vset = vset
        self.probs = probs

    @classmethod
    def nearest_neighbor(cls, vset: VelocitySet) -> "JumpLaw":
        """Minimal law p(+-e_j, v) = (a_j +- v_j)/2, a_j = |v_j| + (1 - sum|v_k|)/d."""
        v = vset.velocities
        excess = vset.max_l1_speed()
        if excess > 1.0 + 1e-12:
            raise ValueError(
                f"max l1 speed {excess:.3g} exceeds 1; rescale the velocity set "
                "before building the nearest-neighbor jump law"
            )
        a = np.abs(v) + (1.0 - np.sum(np.abs(v), axis=1, keepdims=True)) / vset.d
        probs = np.empty((len(vset), 2 * vset.d))
        probs[:, 0::2] = (a + v) / 2.0
        probs[:, 1::2] = (a - v) / 2.0
        return cls(vset, probs)

    def p(self, y, v_idx: int) -> float:
        """p(y, v) for an arbitrary integer displacement y (0 off the support)."""
        y = np.asarray(y)
        nz = np.nonzero(y)[0]
        if len(nz) != 1 or abs(y[nz[0]]) != 1:
            return 0.0
        axis = int(nz[0])
        direction = 2 * axis + (0 if y[axis] > 0 else 1)
        return float(self.probs[v_idx, direction])

    def P_N(self, y, v_idx: int, N: int) -> float:
        """Weakly asymmetric hop rate 1/2 [|y| unit] + p(y, v)/N."""
        y = np.asarray(y)
        nz = np.nonzero(y)[0]
        unit = len(nz) == 1 and abs(y[nz[0]]) == 1
        return (0.5 if unit else 0.0) + self.p(y, v_idx) / N

    def PN_matrix(self, N: int) -> np.ndarray:
        """(nv, 2d) table of P_N over unit directions."""
        return 0.5 + self.probs / N


class ReservoirProfiles:
    """Reservoir densities alpha_v, beta_v as functions on the transverse torus.

    Each entry is a callable taking a (..., d-1) array of transverse positions
    and returning densities; plain numbers are promoted to constants.  Images
    must stay inside a compact subset of (0, 1), checked on a sampling grid.
    """

    def __init__(self, vset: VelocitySet, alpha: Sequence, beta: Sequence):
        if len(alpha) != len(vset) or len(beta) != len(vset):
            raise ValueError("need one alpha and one beta profile per velocity")
        self.vset = vset
        self.alpha = [self._promote(f) for f in alpha]
        self.beta = [self._promote(f) for f in beta]
        self._check_range()

    @staticmethod
    def _promote(f) -> Callable:
        if callable(f):
            return f
        value = float(f)
        return lambda u, _v=value: np.full(np.shape(u)[:-1], _v) if np.ndim(u) else _v

    def _check_range(self, n_probe: int = 64):
        dm1 = self.vset.d - 1
        if dm1 == 0:
            probe = np.zeros((1, 0))
        else:
            axes = [np.linspace(0.0, 1.0, n_probe, endpoint=False)] * dm1
            probe = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dm1)
        for name, fns in (("alpha", self.alpha), ("beta", self.beta)):
            for i, f in enumerate(fns):
                vals = np.asarray(f(probe), dtype=float)
                if vals.size and (vals.min() <= 0.0 or vals.max() >= 1.0):
                    raise ValueError(
                        f"{name}[{i}] leaves (0,1): range "
                        f"[{vals.min():.4g}, {vals.max():.4g}]"
                    )

    def alpha_at(self, v_idx: int, tilde_u) -> float:
        return float(np.asarray(self.alpha[v_idx](np.atleast_2d(tilde_u))).ravel()[0])

    def beta_at(self, v_idx: int, tilde_u) -> float:
        return float(np.asarray(self.beta[v_idx](np.atleast_2d(tilde_u))).ravel()[0])

    @classmethod
    def constant(cls, vset: VelocitySet, alpha, beta) -> "ReservoirProfiles":
        return cls(vset, list(np.atleast_1d(alpha)), list(np.atleast_1d(beta)))

    @classmethod
    def matched(cls, vset: VelocitySet, lam) -> "ReservoirProfiles":
        """Equal reservoirs at the product-measure densities theta_v(lam)."""
        from .thermo import theta_all

        th = theta_all(np.asarray(lam, dtype=float), vset)
        return cls(vset, list(th), list(th))


@dataclass
class Model:
    """A lattice-gas instance: geometry, velocities, jump law, reservoirs."""

    lattice: Lattice
    vset: VelocitySet
    jump_law: JumpLaw = None
    profiles: Optional[ReservoirProfiles] = None
    collisions: Optional[CollisionSet] = field(default=None)
    include_exclusion: bool = True
    include_collisions: bool = True

    def __post_init__(self):
        if self.jump_law is None:
            self.jump_law = JumpLaw.nearest_neighbor(self.vset)
        if self.collisions is None and self.include_collisions:
            self.collisions = CollisionSet(self.vset)

    @property
    def time_scale(self) -> float:
        """Diffusive acceleration N^2 of the macroscopic clock."""
        return float(self.lattice.N) ** 2

    def empty_configuration(self) -> Configuration:
        return Configuration(self.lattice, self.vset)


# --- single-event rate formulas (reference implementations) -----------------

def exclusion_rate(model: Model, eta: np.ndarray, x: int, z: int, v_idx: int) -> float:
    """eta(x,v) (1 - eta(z,v)) P_N(z - x, v); zero when the move exits the wall."""
    lat = model.lattice
    if not (0 <= x < lat.n_sites and 0 <= z < lat.n_sites):
        return 0.0
    cx, cz = np.array(lat.coords(x)), np.array(lat.coords(z))
    y = cz - cx
    if lat.d > 1:
        # shortest displacement on the transverse torus
        y[1:] = (y[1:] + lat.N // 2) % lat.N - lat.N // 2
    return float(eta[x, v_idx]) * (1.0 - float(eta[z, v_idx])) * model.jump_law.P_N(
        y, v_idx, lat.N
    )


def collision_rate(eta: np.ndarray, y: int, q: Collision) -> float:
    """1 if the incoming pair is present and the outgoing pair absent, else 0."""
    row = eta[y]
    return float(row[q.v] * row[q.w] * (1 - row[q.vp]) * (1 - row[q.wp]))


def boundary_rate(model: Model, eta: np.ndarray, x: int, v_idx: int) -> float:
    """Reservoir flip rate at a wall site: birth alpha_v / beta_v, death 1 - it."""
    side = model.lattice.classify(x)
    if side == BoundarySide.BULK or model.profiles is None:
        return 0.0
    tilde = np.array(model.lattice.coords(x)[1:], dtype=float) / model.lattice.N
    if side == BoundarySide.LEFT:
        dens = model.profiles.alpha_at(v_idx, tilde)
    else:
        dens = model.profiles.beta_at(v_idx, tilde)
    return dens if eta[x, v_idx] == 0 else 1.0 - dens


# --- events ------------------------------------------------------------------

EXCLUSION, COLLISION, BOUNDARY = 0, 1, 2
KIND_NAMES = ("exclusion", "collision", "boundary")


@dataclass(frozen=True)
class Event:
    kind: int
    site: int
    velocity: Optional[int] = None
    target: Optional[int] = None
    quadruple: Optional[Collision] = None

    @property
    def kind_name(self) -> str:
        return KIND_NAMES[self.kind]


def apply_event(eta: np.ndarray, event: Event) -> None:
    """Apply an event in place.  The event must have positive rate under eta."""
    if event.kind == EXCLUSION:
        x, z, v = event.site, event.target, event.velocity
        if not (eta[x, v] == 1 and eta[z, v] == 0):
            raise NumericalFailure("exclusion event has zero rate under this state")
        eta[x, v], eta[z, v] = eta[z, v], eta[x, v]
    elif event.kind == COLLISION:
        q, y = event.quadruple, event.site
        if collision_rate(eta, y, q) <= 0:
            raise NumericalFailure("collision event has zero rate under this state")
        row = eta[y]
        row[q.v], row[q.w], row[q.vp], row[q.wp] = row[q.vp], row[q.wp], row[q.v], row[q.w]
    elif event.kind == BOUNDARY:
        x, v = event.site, event.velocity
        eta[x, v] = 1 - eta[x, v]
    else:
        raise ValueError(f"unknown event kind {event.kind}")


# --- rate table ---------------------------------------------------------------

class RateTable:
    """Static event catalogs with per-family rate bounds.

    Entry rates are pure functions of the current configuration and are
    evaluated lazily, so the table is consistent with the configuration by
    construction; `exact_totals` recomputes the family sums for checks and
    waiting-time statistics.  Suppressed exclusion moves (through a wall) are
    excluded from the catalog, as are collision quadruples that can never
    fire.
    """

    def __init__(self, model: Model):
        lat, vset = model.lattice, model.vset
        nv = len(vset)
        self.model = model
        self.nv = nv

        ex_src, ex_tgt, ex_pn = [], [], []
        ex_meta = []
        if model.include_exclusion:
            pn = model.jump_law.PN_matrix(lat.N)
            nbr = lat.neighbor_table()
            for s in range(lat.n_sites):
                for v in range(nv):
                    for direction in range(2 * lat.d):
                        t = nbr[s, direction]
                        if t < 0:
                            continue
                        ex_src.append(s * nv + v)
                        ex_tgt.append(int(t) * nv + v)
                        ex_pn.append(float(pn[v, direction]))
                        ex_meta.append((s, v, direction, int(t)))
        self.ex_src, self.ex_tgt, self.ex_pn = ex_src, ex_tgt, ex_pn
        self.ex_meta = ex_meta

        col_slots, col_meta = [], []
        if model.include_collisions and model.collisions is not None:
            for s in range(lat.n_sites):
                base = s * nv
                for q in model.collisions.active:
                    col_slots.append((base + q.v, base + q.w, base + q.vp, base + q.wp))
                    col_meta.append((s, q))
        self.col_slots, self.col_meta = col_slots, col_meta

        bd_slot, bd_birth, bd_death, bd_meta = [], [], [], []
        if model.profiles is not None:
            for s in range(lat.n_sites):
                side = lat.classify(s)
                if side == BoundarySide.BULK:
                    continue
                tilde = np.array(lat.coords(s)[1:], dtype=float) / lat.N
                for v in range(nv):
                    if side == BoundarySide.LEFT:
                        dens = model.profiles.alpha_at(v, tilde)
                    else:
                        dens = model.profiles.beta_at(v, tilde)
                    bd_slot.append(s * nv + v)
                    bd_birth.append(dens)
                    bd_death.append(1.0 - dens)
                    bd_meta.append((s, v))
        self.bd_slot, self.bd_birth, self.bd_death = bd_slot, bd_birth, bd_death
        self.bd_meta = bd_meta

        self.bound_ex = max(ex_pn, default=0.0)
        self.bound_col = 1.0 if col_slots else 0.0
        self.bound_bd = max((max(b, d) for b, d in zip(bd_birth, bd_death)), default=0.0)
        self.counts = (len(ex_src), len(col_slots), len(bd_slot))
        self.weights = (
            self.counts[0] * self.bound_ex,
            self.counts[1] * self.bound_col,
            self.counts[2] * self.bound_bd,
        )
        self.total_bound = sum(self.weights)

    def exact_totals(self, eta: np.ndarray) -> np.ndarray:
        """Microscopic (per unit N^2-time) total rate per event family."""
        flat = eta.reshape(-1)
        ex = col = bd = 0.0
        if self.ex_src:
            src = flat[np.array(self.ex_src)]
            tgt = flat[np.array(self.ex_tgt)]
            ex = float(np.sum(src * (1 - tgt) * np.array(self.ex_pn)))
        if self.col_slots:
            sl = np.array(self.col_slots)
            col = float(
                np.sum(flat[sl[:, 0]] * flat[sl[:, 1]] * (1 - flat[sl[:, 2]]) * (1 - flat[sl[:, 3]]))
            )
        if self.bd_slot:
            occ = flat[np.array(self.bd_slot)]
            bd = float(np.sum(np.where(occ == 0, self.bd_birth, self.bd_death)))
        return np.array([ex, col, bd])

    def total_rate(self, eta: np.ndarray) -> float:
        """Total event rate on the macroscopic clock (includes the N^2 factor)."""
        return float(self.exact_totals(eta).sum()) * self.model.time_scale

    def event_from_entry(self, kind: int, idx: int) -> Event:
        if kind == EXCLUSION:
            s, v, _, t = self.ex_meta[idx]
            return Event(EXCLUSION, site=s, velocity=v, target=t)
        if kind == COLLISION:
            s, q = self.col_meta[idx]
            return Event(COLLISION, site=s, quadruple=q)
        s, v = self.bd_meta[idx]
        return Event(BOUNDARY, site=s, velocity=v)

    def rate_of(self, eta: np.ndarray, event: Event) -> float:
        """Microscopic rate of an event under eta (audit helper)."""
        if event.kind == EXCLUSION:
            return exclusion_rate(self.model, eta, event.site, event.target, event.velocity)
        if event.kind == COLLISION:
            return collision_rate(eta, event.site, event.quadruple)
        return boundary_rate(self.model, eta, event.site, event.velocity)


# --- simulation ---------------------------------------------------------------

class OccupationTracker:
    """Time-weighted occupation averages, updated only when slots flip."""

    def __init__(self, n_slots: int):
        self.occ_time = np.zeros(n_slots)
        self.last = np.zeros(n_slots)
        self.t0 = 0.0

    def start(self, t: float, eta_flat) -> None:
        self.t0 = t
        self.last[:] = t

    def on_flip(self, t: float, slot: int, old: int) -> None:
        if old == 1:
            self.occ_time[slot] += t - self.last[slot]
        self.last[slot] = t

    def mean_occupation(self, t_end: float, eta_flat) -> np.ndarray:
        occ = self.occ_time.copy()
        for slot in range(len(occ)):
            if eta_flat[slot]:
                occ[slot] += t_end - self.last[slot]
        span = t_end - self.t0
        return occ / span if span > 0 else occ


class SimState:
    """Mutable simulation state driving the thinned candidate stream."""

    BATCH = 1 << 14

    def __init__(self, model: Model, eta: np.ndarray, rng, t0: float = 0.0):
        self.model = model
        self.table = RateTable(model)
        self.rng = rng
        self.t = t0
        self.nv = len(model.vset)
        self.eta_flat = bytearray(np.ascontiguousarray(eta, dtype=np.uint8).tobytes())
        if self.table.total_bound <= 0.0:
            raise NumericalFailure("no events are possible for this model")
        self.gap_scale = 1.0 / (self.table.total_bound * model.time_scale)
        w = self.table.weights
        self.thr1 = w[0]
        self.thr2 = w[0] + w[1]
        self._buf = []
        self._pos = 0
        self.n_events = 0
        self.kind_counts = [0, 0, 0]
        self.trackers: list = []

    def _refill(self):
        rng, B = self.rng, self.BATCH
        gaps = (rng.exponential(self.gap_scale, B)).tolist()
        sel = (rng.random(B) * self.table.total_bound).tolist()
        acc = rng.random(B).tolist()
        self._buf = list(zip(gaps, sel, acc))
        self._pos = 0

    def _next_candidate(self):
        if self._pos >= len(self._buf):
            self._refill()
        c = self._buf[self._pos]
        self._pos += 1
        return c

    def snapshot(self) -> np.ndarray:
        return np.frombuffer(bytes(self.eta_flat), dtype=np.uint8).reshape(
            self.model.lattice.n_sites, self.nv
        ).copy()

    def _select(self):
        """Advance the clock to the next accepted event; return (kind, idx)."""
        table, eta = self.table, self.eta_flat
        w_ex, w_col, _ = table.weights
        tried = 0
        while True:
            gap, sel, acc = self._next_candidate()
            self.t += gap
            if sel < self.thr1:
                idx = min(int(sel / table.bound_ex), table.counts[0] - 1)
                src = table.ex_src[idx]
                if eta[src] and not eta[table.ex_tgt[idx]]:
                    if acc * table.bound_ex < table.ex_pn[idx]:
                        return EXCLUSION, idx
            elif sel < self.thr2:
                idx = min(int((sel - self.thr1) / table.bound_col), table.counts[1] - 1)
                a, b, c, d = table.col_slots[idx]
                if eta[a] and eta[b] and not eta[c] and not eta[d]:
                    return COLLISION, idx
            else:
                idx = min(int((sel - self.thr2) / table.bound_bd), table.counts[2] - 1)
                slot = table.bd_slot[idx]
                rate = table.bd_death[idx] if eta[slot] else table.bd_birth[idx]
                if acc * table.bound_bd < rate:
                    return BOUNDARY, idx
            tried += 1
            if tried % 10_000_000 == 0:
                if self.table.exact_totals(self.snapshot()).sum() == 0.0:
                    raise NumericalFailure("absorbing state reached: total rate is zero")

    def _apply(self, kind: int, idx: int) -> None:
        eta, table = self.eta_flat, self.table
        t = self.t
        if kind == EXCLUSION:
            src, tgt = table.ex_src[idx], table.ex_tgt[idx]
            eta[src] = 0
            eta[tgt] = 1
            for tr in self.trackers:
                tr.on_flip(t, src, 1)
                tr.on_flip(t, tgt, 0)
        elif kind == COLLISION:
            a, b, c, d = table.col_slots[idx]
            eta[a] = 0
            eta[b] = 0
            eta[c] = 1
            eta[d] = 1
            for tr in self.trackers:
                tr.on_flip(t, a, 1)
                tr.on_flip(t, b, 1)
                tr.on_flip(t, c, 0)
                tr.on_flip(t, d, 0)
        else:
            slot = table.bd_slot[idx]
            old = eta[slot]
            eta[slot] = 1 - old
            for tr in self.trackers:
                tr.on_flip(t, slot, old)
        self.n_events += 1
        self.kind_counts[kind] += 1


def step(state: SimState):
    """Execute one event: returns (event, waiting_time) and updates the state.

    The waiting time is exponential with the current total macroscopic rate;
    the event is drawn proportionally to its rate.
    """
    t_before = state.t
    kind, idx = state._select()
    state._apply(kind, idx)
    return state.table.event_from_entry(kind, idx), state.t - t_before


@dataclass
class SimulationResult:
    final: Configuration
    t_end: float
    n_events: int
    kind_counts: tuple
    samples: list


def simulate(initial: Configuration, model: Model, horizon: float, rng,
             sample_times: Optional[Sequence[float]] = None,
             observers: Sequence[Callable] = (),
             trackers: Sequence = (),
             event_log=None,
             max_events: Optional[int] = None) -> SimulationResult:
    """Run the chain to macroscopic time `horizon` with observation hooks.

    Observers are called as f(t, Configuration) at each requested sample time
    (the state at t, i.e. before any event at a later clock reading).  The
    returned samples list holds (t, eta array) pairs for the same times.
    Deterministic given the rng seed.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    times = sorted(float(t) for t in (sample_times or []))
    if any(t < 0 or t > horizon for t in times):
        raise ValueError("sample times must lie in [0, horizon]")

    samples: list = []

    def emit(t: float, state: SimState):
        snap = Configuration(model.lattice, model.vset, state.snapshot())
        samples.append((t, snap.eta))
        for obs in observers:
            obs(t, snap)

    state = SimState(model, initial.eta, rng)
    for tr in trackers:
        tr.start(0.0, state.eta_flat)
        state.trackers.append(tr)

    log_fh = open(event_log, "w") if isinstance(event_log, (str, bytes)) else event_log
    if log_fh is not None:
        log_fh.write("time,kind,site,velocity,target,quadruple\n")

    next_i = 0
    truncated = False
    if horizon > 0:
        while True:
            if max_events is not None and state.n_events >= max_events:
                truncated = True
                break
            kind, idx = state._select()
            t_new = state.t
            while next_i < len(times) and times[next_i] <= min(t_new, horizon):
                emit(times[next_i], state)
                next_i += 1
            if t_new >= horizon:
                break
            state._apply(kind, idx)
            if log_fh is not None:
                ev = state.table.event_from_entry(kind, idx)
                q = "" if ev.quadruple is None else (
                    f"{ev.quadruple.v}|{ev.quadruple.w}|{ev.quadruple.vp}|{ev.quadruple.wp}"
                )
                log_fh.write(
                    f"{t_new:.12g},{ev.kind_name},{ev.site},"
                    f"{'' if ev.velocity is None else ev.velocity},"
                    f"{'' if ev.target is None else ev.target},{q}\n"
                )
    # Remaining sample times are only valid if the run reached the horizon
    # (e.g. horizon == 0); a max_events truncation leaves them unobserved.
    if not truncated:
        while next_i < len(times):
            emit(times[next_i], state)
            next_i += 1
    state.t = min(state.t, horizon)

    if isinstance(event_log, (str, bytes)) and log_fh is not None:
        log_fh.close()

    final = Configuration(model.lattice, model.vset, state.snapshot())
    return SimulationResult(
        final=final,
        t_end=horizon,
        n_events=state.n_events,
        kind_counts=tuple(state.kind_counts),
        samples=samples,
    )
