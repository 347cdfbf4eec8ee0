"""Monte-Carlo Kullback-Leibler divergence between Gaussian mixtures."""

from __future__ import annotations

import csv
from dataclasses import dataclass
import math

import numpy as np

from .gmm import GaussianComponent, MixtureDensity, log_density, sample

DEFAULT_MC_SAMPLES = 10_000


@dataclass(frozen=True)
class McConfig:
    n: int = DEFAULT_MC_SAMPLES
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"sample count must be >= 1, got {self.n}")


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    std_error: float
    n_used: int


@dataclass(frozen=True)
class DivergencePair:
    """``forward`` is D(p||q), ``reverse`` is D(q||p)."""

    forward: DivergenceEstimate
    reverse: DivergenceEstimate

    def values(self):
        return self.forward.value, self.reverse.value


def kl_mc(p: MixtureDensity, q: MixtureDensity, cfg: McConfig = McConfig(),
          seed=None) -> DivergenceEstimate:
    """Estimate D(p||q) as the sample mean of log p(x) - log q(x), x ~ p.

    The standard error is the sample standard deviation of the log ratios
    over sqrt(n). `seed`, when given, overrides ``cfg.seed`` (it may be any
    value accepted by ``numpy.random.default_rng``).
    """
    xs = sample(p, cfg.n, cfg.seed if seed is None else seed)
    log_ratio = log_density(p, xs) - log_density(q, xs)
    value = float(np.mean(log_ratio))
    se = float(np.std(log_ratio, ddof=1) / math.sqrt(cfg.n)) if cfg.n > 1 else 0.0
    if not math.isfinite(value):
        raise FloatingPointError("non-finite KL estimate")
    return DivergenceEstimate(value=value, std_error=se, n_used=cfg.n)


def kl_pair(p: MixtureDensity, q: MixtureDensity,
            cfg: McConfig = McConfig()) -> DivergencePair:
    """Both directed divergences, drawn from decorrelated child seeds."""
    fwd_seed, rev_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    return DivergencePair(forward=kl_mc(p, q, cfg, seed=fwd_seed),
                          reverse=kl_mc(q, p, cfg, seed=rev_seed))


def kl_gaussian_closed_form(a: GaussianComponent, b: GaussianComponent) -> float:
    """Exact D(a||b) between two Gaussians given by mean and precision."""
    for g in (a, b):
        if np.linalg.cond(g.precision) > 1e15:
            raise ValueError("singular precision matrix")
    cov_a = np.linalg.inv(a.precision)
    d = b.mean - a.mean
    k = len(d)
    _, logdet_pa = np.linalg.slogdet(a.precision)
    _, logdet_pb = np.linalg.slogdet(b.precision)
    # ln(det cov_b / det cov_a) = ln det prec_a - ln det prec_b
    return 0.5 * float(np.trace(b.precision @ cov_a) + d @ b.precision @ d - k
                       + logdet_pa - logdet_pb)


def write_divergence_csv(path, rows):
    """Write ``(day_p, day_q, DivergencePair)`` rows in the export layout."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day_id_p", "day_id_q", "forward", "reverse",
                    "std_error_fwd", "std_error_rev"])
        for day_p, day_q, pair in rows:
            w.writerow([str(day_p), str(day_q),
                        f"{pair.forward.value:.9g}", f"{pair.reverse.value:.9g}",
                        f"{pair.forward.std_error:.9g}", f"{pair.reverse.std_error:.9g}"])
