"""Finite Gaussian mixtures in two dimensions.

Components are parameterized by mean and *precision* matrix. Densities are
always evaluated in log space; weights are stored as plain fractions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
import math

import numpy as np
from scipy.special import logsumexp

LOG_2PI = math.log(2.0 * math.pi)

# Added to every M-step covariance (coordinate units squared).
DEFAULT_REG_COVAR = 1e-6


def as_points(xs, name="xs"):
    """Coerce `xs` to a float array of shape (n, 2)."""
    arr = np.asarray(xs, dtype=float)
    if arr.ndim == 1 and arr.shape == (2,):
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (n, 2), got {arr.shape}")
    return arr


def canonical_order(xs):
    """Index order that sorts points lexicographically by (x, y).

    Seeded initializations draw in this order so that fits do not depend on
    how the input points happen to be arranged.
    """
    return np.lexsort((xs[:, 1], xs[:, 0]))


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    """A 2-D Gaussian N(mean, precision^-1)."""

    mean: np.ndarray
    precision: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        prec = np.asarray(self.precision, dtype=float)
        if mean.shape != (2,) or not np.all(np.isfinite(mean)):
            raise ValueError(f"mean must be a finite 2-vector, got {mean!r}")
        if prec.shape != (2, 2) or not np.all(np.isfinite(prec)):
            raise ValueError(f"precision must be a finite 2x2 matrix, got {prec!r}")
        scale = max(1.0, float(np.max(np.abs(prec))))
        if np.max(np.abs(prec - prec.T)) > 1e-9 * scale:
            raise ValueError("precision matrix is not symmetric")
        prec = 0.5 * (prec + prec.T)
        if np.min(np.linalg.eigvalsh(prec)) <= 0:
            raise ValueError("precision matrix is not positive-definite")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "precision", _frozen(prec))

    @property
    def covariance(self):
        return np.linalg.inv(self.precision)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "precision": self.precision.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=d["mean"], precision=d["precision"])


@dataclass(frozen=True, eq=False)
class MixtureDensity:
    """Weighted set of Gaussian components.

    Parameters
    ----------
    weights : sequence of float
        Mixing fractions, each in (0, 1], summing to one.
    components : sequence of GaussianComponent
    """

    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        comps = tuple(self.components)
        if len(comps) == 0:
            raise ValueError("a mixture needs at least one component")
        if w.shape != (len(comps),):
            raise ValueError(
                f"{len(comps)} components but weights have shape {w.shape}")
        if np.any(~np.isfinite(w)) or np.any(w <= 0) or np.any(w > 1):
            raise ValueError(f"weights must lie in (0, 1], got {w}")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_arrays(cls, weights, means, precisions):
        comps = [GaussianComponent(m, p) for m, p in zip(means, precisions)]
        return cls(weights=weights, components=comps)

    @property
    def n_components(self):
        return len(self.components)

    @cached_property
    def means(self):
        return np.stack([c.mean for c in self.components])

    @cached_property
    def precisions(self):
        return np.stack([c.precision for c in self.components])

    @cached_property
    def _prec_chol(self):
        # Lower Cholesky factors L with precision = L L^T.
        return np.linalg.cholesky(self.precisions)

    @cached_property
    def _log_norm(self):
        # log(pi_k) - log(2 pi) + 0.5 log|Lambda_k|
        log_det = 2.0 * np.sum(
            np.log(np.diagonal(self._prec_chol, axis1=1, axis2=2)), axis=1)
        return np.log(self.weights) - LOG_2PI + 0.5 * log_det

    def component_log_prob(self, xs):
        """Weighted per-component log densities, shape (n, K)."""
        diff = xs[:, None, :] - self.means[None, :, :]
        # y = L^T (x - mu); quadratic form is |y|^2
        y = np.einsum("kji,nkj->nki", self._prec_chol, diff)
        return self._log_norm[None, :] - 0.5 * np.sum(y * y, axis=2)

    def to_dict(self):
        return {
            "weights": self.weights.tolist(),
            "components": [c.to_dict() for c in self.components],
        }

    @classmethod
    def from_dict(cls, d):
        # serialized weights are rounded; restore the exact unit sum
        w = np.asarray(d["weights"], dtype=float)
        return cls(weights=w / w.sum(),
                   components=[GaussianComponent.from_dict(c) for c in d["components"]])


def log_density(m: MixtureDensity, x):
    """Log of the mixture density at `x`.

    Accepts a single 2-vector (returns a float) or an (n, 2) array (returns
    an array of n values). Evaluated with log-sum-exp over components.
    """
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    pts = as_points(arr, "x")
    if not np.all(np.isfinite(pts)):
        raise ValueError("log_density requires finite coordinates")
    out = logsumexp(m.component_log_prob(pts), axis=1)
    return float(out[0]) if single else out


def mean_log_likelihood(m: MixtureDensity, xs) -> float:
    """Arithmetic mean of ``log_density`` over a non-empty point list."""
    pts = as_points(xs)
    if len(pts) == 0:
        raise ValueError("mean_log_likelihood needs at least one point")
    return float(np.mean(log_density(m, pts)))


def sample(m: MixtureDensity, n: int, seed=None):
    """Draw `n` i.i.d. points from the mixture; deterministic given `seed`."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    labels = rng.choice(m.n_components, size=n, p=m.weights)
    z = rng.standard_normal((n, 2))
    out = np.empty((n, 2))
    for k in range(m.n_components):
        idx = labels == k
        if not np.any(idx):
            continue
        # x = mu + L^-T z has covariance (L L^T)^-1
        lt = m._prec_chol[k].T
        out[idx] = m.means[k] + np.linalg.solve(lt, z[idx].T).T
    return out


def kmeans_plus_plus(xs, K, rng):
    """Pick K rows of `xs` by D^2 sampling (first one uniformly)."""
    centers = [xs[rng.integers(len(xs))]]
    d2 = np.sum((xs - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        idx = rng.choice(len(xs), p=d2 / total if total > 0 else None)
        centers.append(xs[idx])
        d2 = np.minimum(d2, np.sum((xs - xs[idx]) ** 2, axis=1))
    return np.array(centers)


def _m_step(xs, resp, reg_covar):
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    means = resp.T @ xs / nk[:, None]
    K = resp.shape[1]
    covs = np.empty((K, 2, 2))
    for k in range(K):
        diff = xs - means[k]
        covs[k] = (resp[:, k, None] * diff).T @ diff / nk[k]
        covs[k].flat[::3] += reg_covar
    weights = nk / nk.sum()
    return MixtureDensity.from_arrays(weights, means, np.linalg.inv(covs))


def fit_em(xs, K: int, seed=None, tol: float = 1e-4, max_iter: int = 200,
           reg_covar: float = DEFAULT_REG_COVAR, history: list | None = None):
    """Fit a K-component Gaussian mixture by expectation-maximization.

    Means are seeded by k-means++ style D^2 sampling; the first M-step uses
    hard nearest-mean assignments. Iteration stops when the mean
    log-likelihood improves by less than `tol` or after `max_iter` M-steps.
    A step that lowers it (possible only through `reg_covar` on a collapsed
    component) is discarded and the previous parameters are returned.

    Parameters
    ----------
    xs : array-like of shape (n, 2)
    K : int
        Number of components, at least 1.
    seed : int or numpy Generator, optional
    tol, max_iter : convergence controls.
    reg_covar : float
        Added to the diagonal of every covariance estimate.
    history : list, optional
        If given, the mean log-likelihood after every M-step is appended.

    Returns
    -------
    mixture : MixtureDensity
    mean_ll : float
        Mean log-likelihood of `xs` under the returned mixture.
    """
    pts = as_points(xs)
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("fit_em requires finite coordinates")
    if len(np.unique(pts, axis=0)) < K:
        raise ValueError(f"need at least K={K} distinct points to fit")
    rng = np.random.default_rng(seed)
    pts = pts[canonical_order(pts)]

    centers = kmeans_plus_plus(pts, K, rng)
    d2 = np.sum((pts[:, None, :] - centers[None]) ** 2, axis=2)
    resp = np.zeros((len(pts), K))
    resp[np.arange(len(pts)), np.argmin(d2, axis=1)] = 1.0

    mix = _m_step(pts, resp, reg_covar)
    prev_mix, prev = None, -np.inf
    for it in range(max_iter):
        log_prob = mix.component_log_prob(pts)
        log_norm = logsumexp(log_prob, axis=1)
        ll = float(np.mean(log_norm))
        if ll < prev:
            # the ridge makes the M-step inexact on collapsed components;
            # never hand back a step that lost likelihood
            return prev_mix, prev
        if history is not None:
            history.append(ll)
        if ll - prev < tol or it == max_iter - 1:
            return mix, ll
        prev_mix, prev = mix, ll
        resp = np.exp(log_prob - log_norm[:, None])
        mix = _m_step(pts, resp, reg_covar)
    return mix, ll
