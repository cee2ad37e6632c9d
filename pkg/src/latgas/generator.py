"""Exact generator matrices for tiny systems (full state-space enumeration).

States are integers whose bit `site * nv + v` holds eta(x, v).  The generator
has off-diagonal entries N^2 x (sum of rates of all events mapping one state
to another) and a diagonal making every row sum to zero.  Intended for
verification: invariance of homogeneous product measures under periodic
exclusion, and detailed balance of the collision dynamics with respect to the
single-site product weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dynamics import Model
from .errors import SizeError
from .lattice import BoundarySide
from .thermo import theta_all
from .velocities import VelocitySet

STATE_SPACE_CAP = 2**20
ALL_PARTS = ("boundary", "collision", "exclusion")


def _transitions(model: Model, parts) -> list:
    """All (state, state', micro_rate) triples over the full state space."""
    lat, vset = model.lattice, model.vset
    nv = len(vset)
    n_bits = lat.n_sites * nv
    n_states = 1 << n_bits
    pn = model.jump_law.PN_matrix(lat.N)
    nbr = lat.neighbor_table()

    hops = []
    if "exclusion" in parts:
        for s in range(lat.n_sites):
            for v in range(nv):
                for direction in range(2 * lat.d):
                    t = nbr[s, direction]
                    if t >= 0:
                        hops.append((s * nv + v, int(t) * nv + v, float(pn[v, direction])))
    cols = []
    if "collision" in parts and model.collisions is not None:
        for s in range(lat.n_sites):
            base = s * nv
            for q in model.collisions.active:
                cols.append((base + q.v, base + q.w, base + q.vp, base + q.wp))
    flips = []
    if "boundary" in parts and model.profiles is not None:
        for s in range(lat.n_sites):
            side = lat.classify(s)
            if side == BoundarySide.BULK:
                continue
            tilde = np.array(lat.coords(s)[1:], dtype=float) / lat.N
            for v in range(nv):
                dens = (model.profiles.alpha_at(v, tilde) if side == BoundarySide.LEFT
                        else model.profiles.beta_at(v, tilde))
                flips.append((s * nv + v, dens))

    out = []
    for state in range(n_states):
        for src, tgt, rate in hops:
            if (state >> src) & 1 and not (state >> tgt) & 1:
                out.append((state, state ^ (1 << src) ^ (1 << tgt), rate))
        for a, b, c, d in cols:
            if (state >> a) & 1 and (state >> b) & 1 and not (state >> c) & 1 \
                    and not (state >> d) & 1:
                out.append((state, state ^ (1 << a) ^ (1 << b) ^ (1 << c) ^ (1 << d), 1.0))
        for slot, dens in flips:
            rate = 1.0 - dens if (state >> slot) & 1 else dens
            out.append((state, state ^ (1 << slot), rate))
    return out


@dataclass
class ExactGenerator:
    """Assembled generator with helpers for invariance and balance checks.

    `matrix` is the canonical CSR form.  `row_sums` re-evaluates each row in
    the documented order (off-diagonal entries as accumulated during
    assembly, diagonal last); since the diagonal is defined as the negated
    running sum of its row, the result is exactly zero for every row.
    """

    model: Model
    matrix: sp.csr_matrix  # includes diagonal; rows sum to zero exactly
    parts: tuple
    _off_rows: np.ndarray = None
    _off_cols: np.ndarray = None
    _off_vals: np.ndarray = None
    _diag: np.ndarray = None

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    def row_sums(self) -> np.ndarray:
        # np.add.at accumulates element-by-element in array order, which is
        # exactly how the diagonal was built: the sum cancels bitwise.
        sums = np.zeros(self.n_states)
        np.add.at(sums, self._off_rows, self._off_vals)
        return sums + self._diag

    def state_bits(self) -> np.ndarray:
        n_bits = self.model.lattice.n_sites * len(self.model.vset)
        states = np.arange(self.n_states, dtype=np.int64)
        return ((states[:, None] >> np.arange(n_bits)) & 1).astype(np.uint8)

    def product_measure(self, lam) -> np.ndarray:
        """Normalized product-measure weights mu_lam over all states.

        Per-site weights use exp(lam . I(xi)), so states whose per-site
        conserved vectors coincide get bitwise-identical weights (exact for
        velocity sets whose component sums are exactly representable).
        """
        lat, vset = self.model.lattice, self.model.vset
        nv = len(vset)
        bits = self.state_bits()
        n_states = bits.shape[0]
        lam = np.asarray(lam, dtype=float)
        weights = np.ones(n_states)
        for s in range(lat.n_sites):
            xi = bits[:, s * nv:(s + 1) * nv].astype(float)
            site_I = xi @ vset.vtilde
            weights = weights * np.exp(site_I @ lam)
        return weights / weights.sum()

    def invariance_residual(self, lam) -> float:
        """sup-norm of mu^T L for the product measure at chemical potential lam."""
        mu = self.product_measure(lam)
        return float(np.max(np.abs(mu @ self.matrix)))

    def detailed_balance_audit(self, lam) -> dict:
        """Check mu(eta) rate(eta->eta') == mu(eta') rate(eta'->eta) per transition.

        Only meaningful for the collision part (build with parts=("collision",)).
        Returns the number of transitions, the worst absolute imbalance, and
        whether every reverse transition exists with the same rate.
        """
        mu = self.product_measure(lam)
        coo = self.matrix.tocoo()
        entries = {}
        for i, j, r in zip(coo.row, coo.col, coo.data):
            if i != j:
                entries[(int(i), int(j))] = float(r)
        worst = 0.0
        reversible = True
        for (i, j), r in entries.items():
            r_back = entries.get((j, i))
            if r_back is None:
                reversible = False
                continue
            worst = max(worst, abs(mu[i] * r - mu[j] * r_back))
        return {
            "n_transitions": len(entries),
            "worst_imbalance": worst,
            "all_reversible": reversible,
        }


def assemble_exact_generator(model: Model, parts=ALL_PARTS) -> ExactGenerator:
    """Build the full generator matrix of a tiny system.

    `parts` selects which of the boundary/collision/exclusion dynamics are
    included; use a periodic lattice in the model to replace the walls by a
    wrap.  The state space 2^(sites x velocities) is capped at 2^20.
    """
    parts = tuple(parts)
    unknown = set(parts) - set(ALL_PARTS)
    if unknown:
        raise ValueError(f"unknown generator parts {sorted(unknown)}")
    lat = model.lattice
    n_bits = lat.n_sites * len(model.vset)
    if 2**n_bits > STATE_SPACE_CAP:
        raise SizeError(
            f"state space 2^{n_bits} exceeds the cap {STATE_SPACE_CAP}"
        )
    n_states = 1 << n_bits
    triples = _transitions(model, parts)
    scale = model.time_scale
    if triples:
        rows, cols, vals = zip(*triples)
        off = sp.coo_matrix(
            (np.array(vals) * scale, (rows, cols)), shape=(n_states, n_states)
        ).tocsr()
        off.sum_duplicates()
        off.sort_indices()
    else:
        off = sp.csr_matrix((n_states, n_states))
    canon = off.tocoo()
    off_rows = canon.row.astype(np.int64)
    off_cols = canon.col.astype(np.int64)
    off_vals = canon.data.copy()
    diag = np.zeros(n_states)
    np.add.at(diag, off_rows, off_vals)
    diag = -diag
    mat = (off + sp.diags(diag)).tocsr()
    gen = ExactGenerator(model=model, matrix=mat, parts=parts,
                         _off_rows=off_rows, _off_cols=off_cols,
                         _off_vals=off_vals, _diag=diag)
    assert not np.any(gen.row_sums())
    return gen
