"""Local-equilibrium thermodynamics of a single site.

A site state xi assigns 0/1 occupation to every velocity slot.  Its conserved
vector is (mass, momentum) = (sum_v xi(v), sum_v v xi(v)).  The one-parameter
family of product measures with chemical potential lam = (lam_0, ..., lam_d)
has per-velocity occupation probability

    theta_v(lam) = logistic(lam_0 + lam . v),

and the map lam -> (rho, p) = (sum theta_v, sum v theta_v) is a diffeomorphism
onto the open convex hull U of the single-site conserved vectors.  This module
evaluates the forward map, inverts it with a damped Newton iteration (exact
Jacobian: sum_v chi(theta_v) vtilde vtilde^T, positive definite on U), tests
hull membership, and samples product-measure configurations.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull

from .errors import ConvergenceError, DomainError
from .velocities import VelocitySet

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 100


def chi(r):
    """Static compressibility r(1-r)."""
    r = np.asarray(r, dtype=float)
    out = r * (1.0 - r)
    return float(out) if out.ndim == 0 else out


def conserved_of_state(xi, vset: VelocitySet) -> np.ndarray:
    """(mass, momentum) of a single-site occupation vector xi in {0,1}^V."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (len(vset),):
        raise ValueError(f"state has {xi.shape} entries, expected {(len(vset),)}")
    if not np.all((xi == 0) | (xi == 1)):
        raise ValueError("occupations must be 0 or 1")
    return xi @ vset.vtilde


def _logistic(z):
    # Stable branch: exponentiate negative arguments only.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def theta_all(lam, vset: VelocitySet) -> np.ndarray:
    """Per-velocity occupation probabilities theta_v(lam).

    lam may be a single (d+1,) vector or a batch (..., d+1); returns (..., nv).
    """
    lam = np.asarray(lam, dtype=float)
    z = lam @ vset.vtilde.T
    return _logistic(z)


def theta(lam, v, vset: VelocitySet) -> float:
    """theta_v(lam) for one velocity (given as a vector or an index)."""
    idx = v if isinstance(v, (int, np.integer)) else vset.index_of(v)
    return float(theta_all(np.asarray(lam, dtype=float), vset)[..., idx])


def rho_p_of_lambda(lam, vset: VelocitySet) -> np.ndarray:
    """Forward map: conserved vector (rho, p) of the product measure at lam."""
    return theta_all(lam, vset) @ vset.vtilde


class ConvexDomain:
    """The convex hull of the single-site conserved vectors {I(xi)}.

    Membership tests use the hull's facet inequalities; `margin` is the signed
    Euclidean distance to the nearest facet plane (positive inside).  The
    vertex enumeration is exhaustive over the 2^nv site states, capped at
    nv <= 16.
    """

    MAX_VELOCITIES = 16

    def __init__(self, vset: VelocitySet):
        nv = len(vset)
        if nv > self.MAX_VELOCITIES:
            raise ValueError(
                f"hull enumeration capped at {self.MAX_VELOCITIES} velocities, got {nv}"
            )
        self.vset = vset
        states = ((np.arange(2**nv)[:, None] >> np.arange(nv)) & 1).astype(float)
        points = states @ vset.vtilde
        points = np.unique(points, axis=0)
        try:
            hull = ConvexHull(points)
        except Exception as exc:  # degenerate (not full-dimensional) sets
            raise ValueError(
                "conserved vectors are not full-dimensional; the density/momentum "
                "parametrization is degenerate for this velocity set"
            ) from exc
        # Facet inequalities normal . x + offset <= 0 with unit normals.
        self.normals = hull.equations[:, :-1]
        self.offsets = hull.equations[:, -1]
        self.centroid = points[hull.vertices].mean(axis=0)
        self.vertices = points[hull.vertices]

    def margin(self, x) -> np.ndarray:
        """Signed distance to the hull boundary; positive strictly inside."""
        x = np.asarray(x, dtype=float)
        slack = x @ self.normals.T + self.offsets
        out = -np.max(slack, axis=-1)
        return float(out) if out.ndim == 0 else out

    def contains(self, x, strict: bool = True) -> np.ndarray:
        m = self.margin(x)
        return m > 0 if strict else m >= 0

    def project_inward(self, x, min_margin: float = 0.0) -> np.ndarray:
        """Pull points toward the centroid until margin >= min_margin.

        Intended for rounding-scale excursions only; the pull distance is of
        the order of the margin deficit.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x).copy()
        for _ in range(60):
            m = np.atleast_1d(self.margin(x))
            bad = m < min_margin
            if not np.any(bad):
                return x[0] if single else x
            t = np.minimum(1.0, 2.0 * (min_margin - m[:, None]) + 1e-15)
            x = np.where(bad[:, None], x + t * (self.centroid - x), x)
        raise DomainError("could not project points into the hull interior")


_DOMAIN_CACHE: dict = {}


def domain_of(vset: VelocitySet) -> ConvexDomain:
    key = vset.velocities.tobytes()
    dom = _DOMAIN_CACHE.get(key)
    if dom is None:
        dom = _DOMAIN_CACHE[key] = ConvexDomain(vset)
    return dom


def check_in_U(target, vset: VelocitySet) -> tuple:
    """Whether target lies in the open hull of conserved vectors, plus its margin."""
    m = domain_of(vset).margin(np.asarray(target, dtype=float))
    return bool(np.all(m > 0)), m


def invert_conserved(targets, vset: VelocitySet, lam0=None,
                     tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER,
                     check_domain: bool = True) -> np.ndarray:
    """Batched inverse of the (rho, p) parametrization by damped Newton.

    targets: (..., d+1) interior points; lam0 optionally warm-starts the
    iteration (same shape).  Steps are halved while the sup-norm residual of a
    point increases.  Raises DomainError for non-interior targets (when
    check_domain) and ConvergenceError with the worst residual on failure.
    """
    targets = np.asarray(targets, dtype=float)
    single = targets.ndim == 1
    t = np.atleast_2d(targets)
    if check_domain:
        ok, margin = check_in_U(t, vset)
        if not ok:
            worst = float(np.min(margin))
            raise DomainError(
                f"target outside the open admissible region (worst margin {worst:.3e})"
            )
    vt = vset.vtilde
    lam = np.zeros_like(t) if lam0 is None else np.array(lam0, dtype=float).reshape(t.shape)
    th = _logistic(lam @ vt.T)
    res = t - th @ vt
    rnorm = np.max(np.abs(res), axis=-1)
    for _ in range(max_iter):
        if np.all(rnorm <= tol):
            break
        w = th * (1.0 - th)
        jac = np.einsum("nv,vk,vl->nkl", w, vt, vt)
        step = np.linalg.solve(jac, res[..., None])[..., 0]
        alpha = np.ones(len(t))
        for _ in range(50):
            cand = lam + alpha[:, None] * step
            th_c = _logistic(cand @ vt.T)
            res_c = t - th_c @ vt
            rn_c = np.max(np.abs(res_c), axis=-1)
            worse = rn_c > rnorm
            if not np.any(worse & (rnorm > tol)):
                break
            alpha = np.where(worse, alpha * 0.5, alpha)
        lam, th, res, rnorm = cand, th_c, res_c, rn_c
    if np.any(rnorm > tol):
        raise ConvergenceError(
            f"Newton inversion did not reach {tol:.1e} "
            f"(worst residual {float(np.max(rnorm)):.3e})",
            residual=float(np.max(rnorm)),
        )
    return lam[0] if single else lam.reshape(targets.shape)


def lambda_of_rho_p(target, vset: VelocitySet) -> np.ndarray:
    """Chemical potential with conserved vector `target` (interior of the hull)."""
    return invert_conserved(np.asarray(target, dtype=float), vset)


def theta_field(target, vset: VelocitySet, lam0=None, check_domain: bool = True) -> np.ndarray:
    """Per-velocity densities theta_v at the chemical potential matching target.

    Accepts batches (..., d+1) and returns (..., nv); sums against vtilde
    reproduce the target up to the Newton tolerance.
    """
    lam = invert_conserved(target, vset, lam0=lam0, check_domain=check_domain)
    return theta_all(lam, vset)


def sample_product_state(lam, lattice, vset: VelocitySet, rng) -> np.ndarray:
    """Sample eta(x, v) ~ independent Bernoulli(theta_v(lam)) over all sites.

    Returns a (n_sites, nv) uint8 array; deterministic given the rng state.
    """
    th = theta_all(np.asarray(lam, dtype=float), vset)
    u = rng.random((lattice.n_sites, len(vset)))
    return (u < th[None, :]).astype(np.uint8)


def sample_profile_state(targets, lattice, vset: VelocitySet, rng) -> np.ndarray:
    """Sample a product state whose local equilibrium matches per-site targets.

    targets: (n_sites, d+1) conserved vectors, each interior to the hull.
    """
    th = theta_field(np.asarray(targets, dtype=float), vset)
    u = rng.random(th.shape)
    return (u < th).astype(np.uint8)
