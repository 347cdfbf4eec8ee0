"""Held-out density-model comparison across days."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .discovery import DensityCatalog
from .dpmm import (DEFAULT_COV_SCALE, DpPrior, NumericalError, TruncationConfig,
                   extract_mixture, fit_variational)
from .gmm import fit_em, mean_log_likelihood


@dataclass(frozen=True)
class ModelScore:
    model: str
    mean_log_likelihood: float
    n_days: int


def holdout_split(points, test_fraction, seed):
    """Seeded random train/test split of one day's points."""
    pts = np.asarray(points, dtype=float)
    perm = np.random.default_rng(seed).permutation(len(pts))
    n_test = max(1, int(round(test_fraction * len(pts))))
    return pts[perm[n_test:]], pts[perm[:n_test]]


def _fit_job(job):
    day_id, pts, trunc, prior_kw, weight_floor, gmm_k, em_kw = job
    if len(pts) < trunc.min_points:
        return day_id, None, None, f"too few points ({len(pts)} < {trunc.min_points})"
    try:
        if gmm_k:
            mix, mll = fit_em(pts, gmm_k, seed=trunc.seed, **em_kw)
            return day_id, mix, mll, None
        post = fit_variational(pts, DpPrior.from_data(pts, **prior_kw), trunc)
        return day_id, extract_mixture(post, weight_floor), post, None
    except (NumericalError, ValueError) as exc:
        return day_id, None, None, f"fit failed: {exc}"


def fit_catalog(dataset, seed=0, trunc: TruncationConfig | None = None,
                prior_kwargs=None, weight_floor=0.01, gmm_k=None, em_kwargs=None,
                map_fn=map):
    """Fit a density to every fittable day of a :class:`UserDataset`.

    Each day gets its own seed spawned from `seed`, so results do not depend
    on `map_fn` or on which other days are present before it. Days below
    ``trunc.min_points`` or whose fit fails are listed in
    ``catalog.skipped`` as ``(day_id, reason)``.

    Parameters
    ----------
    dataset : UserDataset
    seed : int
    trunc : TruncationConfig, optional
        Its own seed is replaced per day.
    prior_kwargs : dict, optional
        Passed to :meth:`DpPrior.from_data`.
    weight_floor : float
    gmm_k : int, optional
        Fit EM with this many components instead of the DP mixture.
    em_kwargs : dict, optional
        ``tol``, ``max_iter``, ``reg_covar`` for EM.

    Returns
    -------
    catalog : DensityCatalog
    fits : dict
        Day id -> VariationalPosterior (DP) or final mean log-likelihood (EM).
    """
    trunc = trunc or TruncationConfig()
    seeds = np.random.SeedSequence(seed).spawn(len(dataset.trajectories))
    jobs = [(t.day_id, np.asarray(t.points), replace(trunc, seed=int(s.generate_state(1)[0])),
             prior_kwargs or {}, weight_floor, gmm_k, em_kwargs or {})
            for t, s in zip(dataset.trajectories, seeds)]
    densities, fits, skipped = {}, {}, []
    for day_id, mix, fit, reason in map_fn(_fit_job, jobs):
        if reason is not None:
            skipped.append((day_id, reason))
        else:
            densities[day_id] = mix
            fits[day_id] = fit
    return DensityCatalog(densities, skipped), fits


def _score_day(job):
    pts, child, ks, test_fraction, trunc, prior_kw, weight_floor, em_kw = job
    split_seed, fit_seed = child.spawn(2)
    train, test = holdout_split(pts, test_fraction, split_seed)
    if len(train) < trunc.min_points or len(np.unique(train, axis=0)) < max(ks):
        return None
    fit_int = int(fit_seed.generate_state(1)[0])
    scores = {}
    for k in ks:
        mix, _ = fit_em(train, k, seed=fit_int, **em_kw)
        scores[f"gmm-{k}"] = mean_log_likelihood(mix, test)
    cfg = replace(trunc, seed=fit_int)
    post = fit_variational(train, DpPrior.from_data(train, **prior_kw), cfg)
    scores["dp"] = mean_log_likelihood(extract_mixture(post, weight_floor), test)
    return scores


def compare_models(days, ks=(1, 2, 3, 4, 5), test_fraction=0.3, seed=0,
                   trunc: TruncationConfig | None = None, alpha=1.0,
                   cov_scale=DEFAULT_COV_SCALE, weight_floor=0.01, em_tol=1e-4,
                   em_max_iter=200, reg_covar=1e-6, map_fn=map):
    """Mean held-out log-likelihood of EM fits with each K and of the DP mixture.

    Every day is split once; each model is trained on the same training part
    and scored on the same held-out part. A model's score is the average of
    its per-day held-out mean log-likelihoods. Days too small for the
    largest K are skipped for all models.

    `map_fn` evaluates the per-day jobs (e.g. ``executor.map``); results do
    not depend on it.

    Returns a list of :class:`ModelScore`, EM models first, the DP mixture
    (named ``"dp"``) last.
    """
    ks = tuple(int(k) for k in ks)
    if not ks or min(ks) < 1:
        raise ValueError("ks must be a non-empty list of positive integers")
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    trunc = trunc or TruncationConfig(seed=seed)
    prior_kw = {"alpha": alpha, "cov_scale": cov_scale}
    em_kw = {"tol": em_tol, "max_iter": em_max_iter, "reg_covar": reg_covar}
    seeds = np.random.SeedSequence(seed).spawn(len(days))
    jobs = [(np.asarray(pts, dtype=float), child, ks, test_fraction, trunc,
             prior_kw, weight_floor, em_kw) for pts, child in zip(days, seeds)]
    per_model = {f"gmm-{k}": [] for k in ks}
    per_model["dp"] = []
    for scores in map_fn(_score_day, jobs):
        if scores is None:
            continue
        for name, v in scores.items():
            per_model[name].append(v)
    return [ModelScore(name, float(np.mean(v)) if v else float("nan"), len(v))
            for name, v in per_model.items()]


def write_comparison_csv(path, scores):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "mean_log_likelihood", "n_days"])
        for s in scores:
            w.writerow([s.model, f"{s.mean_log_likelihood:.9g}", s.n_days])
