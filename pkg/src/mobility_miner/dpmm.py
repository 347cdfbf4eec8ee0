"""Truncated Dirichlet-process Gaussian mixture fitted by mean-field VI.

The variational family is the truncated stick-breaking one: T-1 Beta
factors q(v_k) = Beta(gamma1_k, gamma2_k), with the last stick fixed at 1 so
that component T takes the remaining mass, Gaussian-Wishart factors
q(mu_k, Lambda_k) = N(mu_k | m_k, (beta_k Lambda_k)^-1) W(Lambda_k | W_k, nu_k),
and categorical factors q(z_n) with responsibilities r_nk.

All updates are exact coordinate maxima of the evidence lower bound, so
the recorded ELBO trace is non-decreasing up to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.special import betaln, digamma, gammaln, logsumexp, xlogy

from .gmm import (LOG_2PI, MixtureDensity, as_points, canonical_order,
                  kmeans_plus_plus)

DIM = 2
DEFAULT_MIN_POINTS = 10
# Prior expected component covariance, as a fraction of the day's covariance.
# At 1.0 the prior scatter swamps clusters holding a few dozen points.
DEFAULT_COV_SCALE = 0.02


class NumericalError(ArithmeticError):
    """A variational update produced an invalid (non-SPD) scale matrix."""

    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


@dataclass(frozen=True)
class DpPrior:
    """Concentration and Gaussian-Wishart base measure hyperparameters."""

    alpha: float
    m0: np.ndarray
    beta0: float
    W0: np.ndarray
    nu0: float

    def __post_init__(self):
        m0 = np.asarray(self.m0, dtype=float)
        W0 = np.asarray(self.W0, dtype=float)
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.beta0 > 0:
            raise ValueError(f"beta0 must be positive, got {self.beta0}")
        if not self.nu0 > DIM - 1:
            raise ValueError(f"nu0 must exceed {DIM - 1}, got {self.nu0}")
        if m0.shape != (DIM,) or W0.shape != (DIM, DIM):
            raise ValueError("m0 must be a 2-vector and W0 a 2x2 matrix")
        if not np.allclose(W0, W0.T) or np.min(np.linalg.eigvalsh(W0)) <= 0:
            raise ValueError("W0 must be symmetric positive-definite")
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "W0", 0.5 * (W0 + W0.T))

    @classmethod
    def from_data(cls, xs, alpha=1.0, beta0=1e-3, nu0=3.0, cov_scale=DEFAULT_COV_SCALE,
                  ridge=1e-6):
        """Empirical-Bayes prior centred on the data.

        ``m0`` is the data mean and ``W0`` is chosen so that the prior mean
        precision ``nu0 * W0`` is the inverse of ``cov_scale`` times the
        data covariance. `ridge` (relative to the mean variance, with an
        absolute floor) keeps W0 finite when all points coincide.
        """
        pts = as_points(xs)
        cov = np.cov(pts.T, bias=True) if len(pts) > 1 else np.zeros((DIM, DIM))
        scale = max(float(np.trace(cov)) / DIM, 1.0)
        cov = cov + ridge * scale * np.eye(DIM)
        return cls(alpha=alpha, m0=pts.mean(axis=0), beta0=beta0,
                   W0=np.linalg.inv(cov_scale * cov) / nu0, nu0=nu0)

    def to_dict(self):
        return {"alpha": self.alpha, "m0": self.m0.tolist(), "beta0": self.beta0,
                "W0": self.W0.tolist(), "nu0": self.nu0}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class TruncationConfig:
    T: int = 20
    tol: float = 1e-5
    max_iter: int = 500
    seed: int = 0
    min_points: int = DEFAULT_MIN_POINTS
    init: str = "kmeans++"
    merge_every: int = 25

    def __post_init__(self):
        if self.T < 2:
            raise ValueError(f"truncation T must be >= 2, got {self.T}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.init not in ("kmeans++", "dirichlet"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.merge_every < 0:
            raise ValueError("merge_every must be >= 0 (0 disables merges)")


@dataclass(frozen=True, eq=False)
class VariationalPosterior:
    """Variational parameters of one truncated DP mixture fit.

    ``gamma1``/``gamma2`` have length T-1; the Gaussian-Wishart arrays have
    leading dimension T; ``resp`` is (n_points, T).
    """

    gamma1: np.ndarray
    gamma2: np.ndarray
    means: np.ndarray
    beta: np.ndarray
    W: np.ndarray
    nu: np.ndarray
    resp: np.ndarray
    elbo: float = float("nan")
    n_iter: int = 0
    converged: bool = False
    elbo_trace: tuple = field(default_factory=tuple)

    @property
    def T(self):
        return len(self.beta)

    def expected_sticks(self):
        return self.gamma1 / (self.gamma1 + self.gamma2)

    def expected_weights(self):
        return stick_lengths_to_weights(self.expected_sticks())

    def to_dict(self, include_resp=True):
        d = {
            "gamma1": self.gamma1.tolist(), "gamma2": self.gamma2.tolist(),
            "means": self.means.tolist(), "beta": self.beta.tolist(),
            "W": self.W.tolist(), "nu": self.nu.tolist(),
            "elbo": self.elbo, "n_iter": self.n_iter, "converged": self.converged,
            "elbo_trace": list(self.elbo_trace),
        }
        if include_resp:
            d["resp"] = self.resp.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        arr = {k: np.asarray(d[k], dtype=float)
               for k in ("gamma1", "gamma2", "means", "beta", "W", "nu")}
        resp = np.asarray(d.get("resp", np.zeros((0, len(arr["beta"])))), dtype=float)
        return cls(resp=resp, elbo=float(d["elbo"]), n_iter=int(d["n_iter"]),
                   converged=bool(d["converged"]),
                   elbo_trace=tuple(d.get("elbo_trace", ())), **arr)


def stick_lengths_to_weights(v):
    """Map T-1 stick fractions to T mixture weights.

    ``pi_k = v_k * prod_{j<k} (1 - v_j)`` for k < T, and the last weight is
    the unbroken remainder ``prod_{j<T} (1 - v_j)``.

    >>> stick_lengths_to_weights([0.5, 0.5]).tolist()
    [0.5, 0.25, 0.25]
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError("stick fractions must be a 1-D sequence")
    if np.any(~(v >= 0) | ~(v <= 1)):
        raise ValueError(f"stick fractions must lie in [0, 1], got {v}")
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - v)])
    return np.concatenate([v, [1.0]]) * remaining


# -- expectations under q ---------------------------------------------------

def _expected_log_sticks(gamma1, gamma2):
    dg = digamma(gamma1 + gamma2)
    return digamma(gamma1) - dg, digamma(gamma2) - dg


def _expected_log_weights(gamma1, gamma2):
    e_log_v, e_log_1mv = _expected_log_sticks(gamma1, gamma2)
    # E[log pi_k] = E[log v_k] + sum_{j<k} E[log(1 - v_j)], v_T = 1
    return (np.concatenate([e_log_v, [0.0]])
            + np.concatenate([[0.0], np.cumsum(e_log_1mv)]))


def _logdet(W):
    sign, ld = np.linalg.slogdet(W)
    return ld


def _expected_log_det_precision(W, nu):
    i = np.arange(1, DIM + 1)
    return (np.sum(digamma(0.5 * (nu[:, None] + 1 - i)), axis=1)
            + DIM * math.log(2.0) + _logdet(W))


def _log_wishart_norm(W, nu):
    """log B(W, nu), the Wishart normalizer, vectorized over components."""
    i = np.arange(1, DIM + 1)
    return (-0.5 * nu * _logdet(W)
            - 0.5 * nu * DIM * math.log(2.0)
            - 0.25 * DIM * (DIM - 1) * math.log(math.pi)
            - np.sum(gammaln(0.5 * (np.asarray(nu)[..., None] + 1 - i)), axis=-1))


def _mahalanobis(xs, means, W):
    # (x_n - m_k)^T W_k (x_n - m_k), shape (n, T)
    diff = xs[:, None, :] - means[None, :, :]
    return np.einsum("nki,kij,nkj->nk", diff, W, diff)


def _log_rho(xs, post):
    """Unnormalized log responsibilities given the non-assignment factors."""
    e_log_pi = _expected_log_weights(post.gamma1, post.gamma2)
    e_log_det = _expected_log_det_precision(post.W, post.nu)
    maha = _mahalanobis(xs, post.means, post.W)
    return (e_log_pi[None, :] + 0.5 * e_log_det[None, :] - 0.5 * DIM * LOG_2PI
            - 0.5 * (DIM / post.beta[None, :] + post.nu[None, :] * maha))


# -- coordinate updates -----------------------------------------------------

def _update_params(xs, resp, prior, iteration):
    """Optimal stick and Gaussian-Wishart factors given responsibilities."""
    nk = resp.sum(axis=0)
    T = resp.shape[1]

    gamma1 = 1.0 + nk[:-1]
    tail = np.cumsum(nk[::-1])[::-1]  # tail[k] = sum_{j>=k} N_j
    gamma2 = prior.alpha + tail[1:]

    beta = prior.beta0 + nk
    nu = prior.nu0 + nk
    sx = resp.T @ xs
    xbar = np.where(nk[:, None] > 0, sx / np.where(nk > 0, nk, 1.0)[:, None],
                    prior.m0)
    means = (prior.beta0 * prior.m0 + sx) / beta[:, None]
    W0_inv = np.linalg.inv(prior.W0)
    W_inv = np.empty((T, DIM, DIM))
    for k in range(T):
        diff = xs - xbar[k]
        scatter = (resp[:, k, None] * diff).T @ diff
        d0 = xbar[k] - prior.m0
        W_inv[k] = (W0_inv + scatter
                    + (prior.beta0 * nk[k] / beta[k]) * np.outer(d0, d0))
    W_inv = 0.5 * (W_inv + np.swapaxes(W_inv, 1, 2))
    try:
        chol = np.linalg.cholesky(W_inv)
    except np.linalg.LinAlgError:
        raise NumericalError("Gaussian-Wishart scale matrix is not SPD",
                             iteration) from None
    chol_inv = np.linalg.inv(chol)
    W = np.swapaxes(chol_inv, 1, 2) @ chol_inv
    if not np.all(np.isfinite(W)):
        raise NumericalError("non-finite Gaussian-Wishart scale matrix", iteration)
    return gamma1, gamma2, means, beta, W, nu


def _responsibilities(xs, post):
    log_rho = _log_rho(xs, post)
    return np.exp(log_rho - logsumexp(log_rho, axis=1, keepdims=True))


def elbo(posterior: VariationalPosterior, xs, prior: DpPrior) -> float:
    """Evidence lower bound of `posterior` for data `xs`.

    Sum of

    * E[log p(x, z | v, mu, Lambda)] - E[log q(z)], which for arbitrary
      responsibilities equals ``sum_nk r_nk (log rho_nk - log r_nk)``;
    * E[log p(v)] - E[log q(v)] with a Beta(1, alpha) prior per stick;
    * E[log p(mu, Lambda)] - E[log q(mu, Lambda)] for the Gaussian-Wishart
      factors.
    """
    pts = as_points(xs)
    post = posterior
    T = post.T
    if post.resp.shape != (len(pts), T):
        raise ValueError(
            f"responsibilities have shape {post.resp.shape}, expected {(len(pts), T)}")
    if post.means.shape != (T, DIM) or post.W.shape != (T, DIM, DIM) \
            or len(post.gamma1) != T - 1 or prior.m0.shape != (DIM,):
        raise ValueError("posterior dimensions do not match")

    r = post.resp
    data_term = float(np.sum(r * _log_rho(pts, post)) - np.sum(xlogy(r, r)))

    e_log_v, e_log_1mv = _expected_log_sticks(post.gamma1, post.gamma2)
    a = prior.alpha
    stick_term = float(np.sum(
        math.log(a) + (a - 1.0) * e_log_1mv
        - (post.gamma1 - 1.0) * e_log_v - (post.gamma2 - 1.0) * e_log_1mv
        + betaln(post.gamma1, post.gamma2)))

    e_log_det = _expected_log_det_precision(post.W, post.nu)
    d0 = post.means - prior.m0
    quad0 = np.einsum("ki,kij,kj->k", d0, post.W, d0)
    W0_inv = np.linalg.inv(prior.W0)
    trace_term = np.einsum("ij,kji->k", W0_inv, post.W)
    log_p = (0.5 * DIM * math.log(prior.beta0 / (2 * math.pi))
             + 0.5 * e_log_det
             - 0.5 * DIM * prior.beta0 / post.beta
             - 0.5 * prior.beta0 * post.nu * quad0
             + _log_wishart_norm(prior.W0, prior.nu0)
             + 0.5 * (prior.nu0 - DIM - 1) * e_log_det
             - 0.5 * post.nu * trace_term)
    log_q = (0.5 * e_log_det + 0.5 * DIM * np.log(post.beta / (2 * math.pi))
             - 0.5 * DIM
             + _log_wishart_norm(post.W, post.nu)
             + 0.5 * (post.nu - DIM - 1) * e_log_det
             - 0.5 * post.nu * DIM)
    gw_term = float(np.sum(log_p - log_q))
    return data_term + stick_term + gw_term


def coordinate_ascent_step(posterior, xs, prior, iteration=0):
    """One full sweep: responsibilities, then sticks and Gaussian-Wishart."""
    pts = as_points(xs)
    resp = _responsibilities(pts, posterior)
    return _posterior_from_resp(pts, resp, prior, iteration)


def _posterior_from_resp(xs, resp, prior, iteration):
    g1, g2, means, beta, W, nu = _update_params(xs, resp, prior, iteration)
    return VariationalPosterior(gamma1=g1, gamma2=g2, means=means, beta=beta,
                                W=W, nu=nu, resp=resp)


def initial_posterior(xs, prior, cfg: TruncationConfig):
    """Seeded starting point, followed by one parameter update.

    ``cfg.init == "kmeans++"`` (default) assigns every point to the nearest
    of T centres picked by D^2 sampling; ``"dirichlet"`` draws each row of
    responsibilities from a symmetric Dirichlet. Both draw in lexicographic
    point order, so permuting `xs` permutes the start along with it.
    """
    pts = as_points(xs)
    rng = np.random.default_rng(cfg.seed)
    order = canonical_order(pts)
    if cfg.init == "dirichlet":
        resp = np.empty((len(pts), cfg.T))
        resp[order] = rng.dirichlet(np.ones(cfg.T), size=len(pts))
    else:
        centers = kmeans_plus_plus(pts[order], min(cfg.T, len(pts)), rng)
        d2 = np.sum((pts[:, None, :] - centers[None]) ** 2, axis=2)
        resp = np.zeros((len(pts), cfg.T))
        resp[np.arange(len(pts)), np.argmin(d2, axis=1)] = 1.0
        resp = _sort_by_size(resp)
    return _posterior_from_resp(pts, resp, prior, 0)


def _sort_by_size(resp):
    # stable, so ties keep their current order
    return resp[:, np.argsort(-resp.sum(axis=0), kind="stable")]


def _merge_candidates(post, max_pairs):
    nk = post.resp.sum(axis=0)
    active = np.flatnonzero(nk > 1e-8)
    pairs = []
    for a_i, j in enumerate(active):
        for k in active[a_i + 1:]:
            # distance between means in the metric of the broader component
            d = post.means[j] - post.means[k]
            cov_sum = (np.linalg.inv(post.nu[j] * post.W[j])
                       + np.linalg.inv(post.nu[k] * post.W[k]))
            pairs.append((float(d @ np.linalg.solve(cov_sum, d)), int(j), int(k)))
    pairs.sort()
    return [(j, k) for _, j, k in pairs[:max_pairs]]


def _try_reorder(pts, post, current, prior, iteration):
    """Sort components by decreasing size if that raises the ELBO."""
    nk = post.resp.sum(axis=0)
    if np.all(np.diff(nk) <= 0):
        return post, current
    cand = _posterior_from_resp(pts, _sort_by_size(post.resp), prior, iteration)
    value = elbo(cand, pts, prior)
    return (cand, value) if value > current else (post, current)


def _try_merges(pts, post, current, prior, iteration, max_pairs=20):
    """Greedy merge moves: accept a merge only if it raises the ELBO."""
    accepted = False
    for j, k in _merge_candidates(post, max_pairs):
        if post.resp[:, j].sum() <= 1e-8 or post.resp[:, k].sum() <= 1e-8:
            continue
        resp = post.resp.copy()
        resp[:, j] += resp[:, k]
        resp[:, k] = 0.0
        cand = _posterior_from_resp(pts, _sort_by_size(resp), prior, iteration)
        value = elbo(cand, pts, prior)
        if value > current:
            post, current, accepted = cand, value, True
    return post, current, accepted


def fit_variational(xs, prior: DpPrior | None = None,
                    cfg: TruncationConfig | None = None) -> VariationalPosterior:
    """Fit the truncated DP mixture by coordinate-ascent VI.

    Sweeps alternate responsibilities with stick and Gaussian-Wishart
    updates, and components are re-sorted by size whenever that helps. Every
    ``cfg.merge_every`` sweeps, and again once the ELBO
    change drops below ``cfg.tol``, pairs of components are tentatively
    merged; a merge is kept only when it increases the ELBO. Fitting ends
    when a converged state admits no merge or after ``cfg.max_iter`` sweeps.

    Parameters
    ----------
    xs : array-like of shape (n, 2)
        At least ``cfg.min_points`` points.
    prior : DpPrior, optional
        Defaults to ``DpPrior.from_data(xs)``.
    cfg : TruncationConfig, optional

    Returns
    -------
    VariationalPosterior
        Carrying the ELBO trace: the initial value, then one entry per sweep
        or accepted merge round.
    """
    cfg = cfg or TruncationConfig()
    pts = as_points(xs)
    if len(pts) < cfg.min_points:
        raise ValueError(
            f"need at least {cfg.min_points} points to fit, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("fit_variational requires finite coordinates")
    prior = prior or DpPrior.from_data(pts)

    post = initial_posterior(pts, prior, cfg)
    trace = [elbo(post, pts, prior)]
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        post = coordinate_ascent_step(post, pts, prior, it)
        value = elbo(post, pts, prior)
        post, value = _try_reorder(pts, post, value, prior, it)
        trace.append(value)
        stalled = trace[-1] - trace[-2] < cfg.tol
        if cfg.merge_every and (stalled or it % cfg.merge_every == 0):
            post, value, merged = _try_merges(pts, post, trace[-1], prior, it)
            if merged:
                trace.append(value)
                continue
        if stalled:
            converged = True
            break
    return VariationalPosterior(
        gamma1=post.gamma1, gamma2=post.gamma2, means=post.means, beta=post.beta,
        W=post.W, nu=post.nu, resp=post.resp, elbo=trace[-1], n_iter=it,
        converged=converged, elbo_trace=tuple(trace))


def extract_mixture(posterior: VariationalPosterior,
                    weight_floor: float = 0.01) -> MixtureDensity:
    """Plug-in Gaussian mixture from posterior expectations.

    Weights come from the expected stick fractions; components lighter than
    `weight_floor` are dropped and the rest renormalized. Each surviving
    component has mean ``m_k`` and precision ``nu_k * W_k``.
    """
    if not 0 <= weight_floor < 1:
        raise ValueError(f"weight_floor must lie in [0, 1), got {weight_floor}")
    w = posterior.expected_weights()
    keep = (w >= weight_floor) & (w > 0)
    if not np.any(keep):
        raise ValueError("every component falls below the weight floor")
    kept = w[keep]
    return MixtureDensity.from_arrays(
        kept / kept.sum(), posterior.means[keep],
        posterior.nu[keep, None, None] * posterior.W[keep])
