"""Labelled synthetic multi-day GPS data with known pattern structure."""

from __future__ import annotations

import csv
from dataclasses import dataclass
import datetime as dt
from itertools import combinations

import numpy as np

from .dpmm import DEFAULT_MIN_POINTS
from .trajectory import (EQUIRECTANGULAR, DailyTrajectory, ProjectionConfig,
                         UserDataset, unproject)

SCHEDULES = ("shuffled", "round-robin", "blocked")


@dataclass(frozen=True)
class Anchor:
    location: tuple
    dwell: float
    spread: float


@dataclass(frozen=True)
class RouteTemplate:
    """A daily routine: weighted places visited plus travel between them.

    Transition points are laid on the segments joining consecutive anchors.
    """

    template_id: str
    anchors: tuple
    transition_spread: float = 50.0

    def __post_init__(self):
        anchors = tuple(a if isinstance(a, Anchor) else Anchor(*a) for a in self.anchors)
        if not anchors:
            raise ValueError("a template needs at least one anchor")
        dwell = np.array([a.dwell for a in anchors])
        if np.any(dwell <= 0) or abs(dwell.sum() - 1) > 1e-9:
            raise ValueError("dwell weights must be positive and sum to 1")
        if any(a.spread <= 0 for a in anchors) or self.transition_spread <= 0:
            raise ValueError("spreads must be positive")
        object.__setattr__(self, "anchors", anchors)

    @property
    def locations(self):
        return np.array([a.location for a in self.anchors], dtype=float)

    def to_dict(self):
        return {"template_id": self.template_id,
                "anchors": [{"location": list(a.location), "dwell": a.dwell,
                             "spread": a.spread} for a in self.anchors],
                "transition_spread": self.transition_spread}

    @classmethod
    def from_dict(cls, d):
        return cls(d["template_id"],
                   tuple(Anchor(tuple(a["location"]), a["dwell"], a["spread"])
                         for a in d["anchors"]),
                   d.get("transition_spread", 50.0))


@dataclass(frozen=True)
class GeneratorConfig:
    """Dataset layout for :func:`generate`.

    Coordinates are planar (metres by default); ``reference_point`` anchors
    the plane on the globe when the dataset is written as lat/lon CSV.
    """

    templates: tuple
    days_per_template: int = 25
    points_per_day: tuple = (50, 500)
    schedule: str = "shuffled"
    transition_fraction: float = 0.15
    noise_scale: float = 0.0
    seed: int = 0
    start_date: dt.date = dt.date(2024, 1, 1)
    user_id: str = "synthetic"
    reference_point: tuple = (46.52, 6.57)
    min_points: int = DEFAULT_MIN_POINTS

    def __post_init__(self):
        object.__setattr__(self, "templates", tuple(
            t if isinstance(t, RouteTemplate) else RouteTemplate.from_dict(t)
            for t in self.templates))
        if not self.templates:
            raise ValueError("at least one template is required")
        lo, hi = self.points_per_day
        if not self.min_points <= lo <= hi:
            raise ValueError(
                f"points_per_day {self.points_per_day} must satisfy "
                f"{self.min_points} <= min <= max")
        if self.days_per_template < 1:
            raise ValueError("days_per_template must be >= 1")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if not 0 <= self.transition_fraction < 1:
            raise ValueError("transition_fraction must lie in [0, 1)")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        if isinstance(self.start_date, str):
            object.__setattr__(self, "start_date", dt.date.fromisoformat(self.start_date))

    @property
    def projection(self):
        return ProjectionConfig(EQUIRECTANGULAR, self.reference_point)

    @property
    def n_days(self):
        return self.days_per_template * len(self.templates)


def _schedule(cfg, rng):
    n_t = len(cfg.templates)
    if cfg.schedule == "blocked":
        return np.repeat(np.arange(n_t), cfg.days_per_template)
    labels = np.tile(np.arange(n_t), cfg.days_per_template)
    if cfg.schedule == "shuffled":
        rng.shuffle(labels)
    return labels


def sample_day(template: RouteTemplate, n, transition_fraction, noise_scale, rng):
    """Draw `n` points for one day of `template`."""
    locs = template.locations
    n_trans = int(round(transition_fraction * n)) if len(locs) > 1 else 0
    n_stay = n - n_trans
    which = rng.choice(len(locs), size=n_stay, p=[a.dwell for a in template.anchors])
    spreads = np.array([a.spread for a in template.anchors])
    stay = locs[which] + spreads[which, None] * rng.standard_normal((n_stay, 2))
    seg = rng.integers(0, len(locs) - 1, size=n_trans) if n_trans else np.zeros(0, int)
    t = rng.random(n_trans)[:, None]
    trans = (locs[seg] + t * (locs[seg + 1] - locs[seg])
             + template.transition_spread * rng.standard_normal((n_trans, 2)))
    pts = np.concatenate([stay, trans])
    pts = pts[rng.permutation(len(pts))]
    if noise_scale > 0:
        pts = pts + noise_scale * rng.standard_normal(pts.shape)
    return pts


def generate(cfg: GeneratorConfig):
    """Build a labelled dataset.

    Returns
    -------
    dataset : UserDataset
        One trajectory per day, consecutive dates from ``cfg.start_date``.
    truth : dict
        Day id -> template id.
    """
    master = np.random.SeedSequence(cfg.seed)
    sched_seed, *day_seeds = master.spawn(cfg.n_days + 1)
    labels = _schedule(cfg, np.random.default_rng(sched_seed))
    lo, hi = cfg.points_per_day
    trajs, truth = [], {}
    for i, (label, seq) in enumerate(zip(labels, day_seeds)):
        rng = np.random.default_rng(seq)
        template = cfg.templates[label]
        n = int(rng.integers(lo, hi + 1))
        day = cfg.start_date + dt.timedelta(days=i)
        trajs.append(DailyTrajectory(day, sample_day(
            template, n, cfg.transition_fraction, cfg.noise_scale, rng)))
        truth[day] = template.template_id
    return UserDataset(cfg.user_id, trajs), truth


def day_timestamps(day: dt.date, n, rng, tz_offset_minutes=0):
    """`n` distinct increasing unix times between 06:00 and 22:00 local."""
    midnight = dt.datetime(day.year, day.month, day.day, tzinfo=dt.timezone.utc)
    base = int(midnight.timestamp()) - 60 * tz_offset_minutes
    secs = np.sort(rng.choice(np.arange(6 * 3600, 22 * 3600), size=n, replace=False))
    return base + secs


def write_records_csv(path, dataset: UserDataset, projection: ProjectionConfig, seed=0):
    """Write a dataset as ``user_id,timestamp,lat,lon`` rows."""
    rng = np.random.default_rng(seed)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "timestamp", "lat", "lon"])
        for traj in dataset.trajectories:
            latlon = unproject(traj.points, projection)
            stamps = day_timestamps(traj.day_id, traj.point_count, rng,
                                    projection.tz_offset_minutes)
            for ts, (lat, lon) in zip(stamps, latlon):
                w.writerow([dataset.user_id, int(ts), f"{lat:.9f}", f"{lon:.9f}"])


@dataclass(frozen=True)
class RecoveryScore:
    rand_index: float
    n_found: int
    n_true: int


def rand_index(labels_a, labels_b):
    """Fraction of item pairs on which two labelings agree."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if len(a) != len(b):
        raise ValueError("labelings differ in length")
    n = len(a)
    if n < 2:
        return 1.0
    iu = np.triu_indices(n, k=1)
    same_a = (a[:, None] == a[None, :])[iu]
    same_b = (b[:, None] == b[None, :])[iu]
    return float(np.mean(same_a == same_b))


def score_recovery(found, truth) -> RecoveryScore:
    """Rand index between a discovered PatternSet and true template labels."""
    found_labels = found.labels()
    if set(found_labels) != set(truth):
        raise ValueError("found patterns and truth cover different days")
    days = sorted(truth)
    true_ids = {t: i for i, t in enumerate(sorted({str(v) for v in truth.values()}))}
    a = [found_labels[d] for d in days]
    b = [true_ids[str(truth[d])] for d in days]
    return RecoveryScore(rand_index(a, b), len(set(a)), len(set(b)))


def rand_index_bruteforce(labels_a, labels_b):
    """Pair-by-pair reference count (quadratic Python loop)."""
    pairs = list(combinations(range(len(labels_a)), 2))
    if not pairs:
        return 1.0
    agree = sum((labels_a[i] == labels_a[j]) == (labels_b[i] == labels_b[j])
                for i, j in pairs)
    return agree / len(pairs)


def commuter_templates(scale=1.0):
    """Four routines sharing only a home anchor, in metres.

    Office workday, campus day, weekend errands and a long excursion. Each
    template puts at least 40% of its dwell time somewhere no other
    template goes. `scale` stretches distances and spreads together.
    """
    s = scale
    home = (0.0, 0.0)
    return (
        RouteTemplate("workday", (Anchor(home, 0.55, 120 * s),
                                  Anchor((4000 * s, 2000 * s), 0.45, 100 * s)), 40 * s),
        RouteTemplate("campus", (Anchor(home, 0.5, 120 * s),
                                 Anchor((-1000 * s, -4500 * s), 0.5, 150 * s)), 40 * s),
        RouteTemplate("errands", (Anchor(home, 0.6, 120 * s),
                                  Anchor((-3000 * s, 3000 * s), 0.25, 80 * s),
                                  Anchor((-6000 * s, 500 * s), 0.15, 250 * s)), 40 * s),
        RouteTemplate("excursion", (Anchor(home, 0.3, 120 * s),
                                    Anchor((12000 * s, 9000 * s), 0.7, 300 * s)), 60 * s),
    )


def heterogeneous_days(n_days=40, max_components=5, points_per_day=(150, 400),
                       separation=8.0, seed=0):
    """Days drawn from Gaussian mixtures with 1..max_components components.

    Component counts cycle through 1..max_components. Means are placed by
    rejection so that any two sit at least `separation` unit-scale spreads
    apart; covariances are random rotations of axis scales in [0.5, 2].

    Returns
    -------
    days : list of (n, 2) arrays
    n_true : list of int
    """
    ss = np.random.SeedSequence(seed)
    days, n_true = [], []
    for i, child in enumerate(ss.spawn(n_days)):
        rng = np.random.default_rng(child)
        k = i % max_components + 1
        means = []
        while len(means) < k:
            cand = rng.uniform(-25, 25, size=2)
            if all(np.linalg.norm(cand - m) >= separation for m in means):
                means.append(cand)
        weights = rng.dirichlet(np.full(k, 4.0))
        n = int(rng.integers(points_per_day[0], points_per_day[1] + 1))
        labels = rng.choice(k, size=n, p=weights)
        pts = np.empty((n, 2))
        for j in range(k):
            theta = rng.uniform(0, np.pi)
            rot = np.array([[np.cos(theta), -np.sin(theta)],
                            [np.sin(theta), np.cos(theta)]])
            chol = rot @ np.diag(rng.uniform(0.5, 2.0, size=2))
            idx = labels == j
            pts[idx] = means[j] + rng.standard_normal((idx.sum(), 2)) @ chol.T
        days.append(pts)
        n_true.append(k)
    return days, n_true
