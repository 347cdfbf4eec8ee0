"""Threshold-based sequential clustering of daily densities.

Days are scanned in ascending order against a baseline day. A day joins
the open pattern when the smaller of its two directed divergences to the
baseline is below ``Thresholds.lower`` and the larger is below
``Thresholds.upper``. Accepted days may take over as baseline; the final
baseline is the pattern's representative.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import datetime as dt
from typing import Mapping
import zlib

import numpy as np

from .kl import DivergencePair, McConfig, kl_pair

SWAP_RULES = ("pseudocode", "prose")


@dataclass(frozen=True)
class Thresholds:
    lower: float = 5.0
    upper: float = 100.0

    def __post_init__(self):
        if not (0 < self.lower <= self.upper):
            raise ValueError(
                f"thresholds need 0 < lower <= upper, got ({self.lower}, {self.upper})")

    def accepts(self, pair: DivergencePair) -> bool:
        lo, hi = sorted(pair.values())
        return lo < self.lower and hi < self.upper


@dataclass(frozen=True, eq=False)
class DensityCatalog:
    """Day-ordered mixture densities plus days left out and why."""

    densities: Mapping
    skipped: tuple = ()

    def __post_init__(self):
        days = list(self.densities)
        if days != sorted(days):
            raise ValueError("catalog days must be ascending")
        object.__setattr__(self, "densities", dict(self.densities))
        object.__setattr__(self, "skipped", tuple(self.skipped))

    @property
    def day_ids(self):
        return list(self.densities)

    def __len__(self):
        return len(self.densities)

    def window(self, start, length):
        """Sub-catalog of `length` consecutive days starting at index `start`."""
        days = self.day_ids[start:start + length]
        return DensityCatalog({d: self.densities[d] for d in days})


@dataclass(frozen=True)
class MobilityPattern:
    pattern_id: int
    member_day_ids: tuple
    representative_day_id: object

    def __post_init__(self):
        if not self.member_day_ids:
            raise ValueError("a pattern needs at least one member")
        if len(set(self.member_day_ids)) != len(self.member_day_ids):
            raise ValueError("pattern members must be unique")
        if self.representative_day_id not in self.member_day_ids:
            raise ValueError("representative must be a member")


@dataclass(frozen=True)
class PatternSet:
    patterns: tuple = ()
    thresholds: Thresholds = field(default_factory=Thresholds)
    mc: McConfig = field(default_factory=McConfig)

    def __len__(self):
        return len(self.patterns)

    def labels(self):
        """Map day id -> pattern id."""
        return {d: p.pattern_id for p in self.patterns for d in p.member_day_ids}

    def to_dict(self):
        return {
            "thresholds": {"lower": self.thresholds.lower, "upper": self.thresholds.upper},
            "mc": {"n": self.mc.n, "seed": self.mc.seed},
            "patterns": [{"id": p.pattern_id,
                          "representative_day": _day_str(p.representative_day_id),
                          "members": [_day_str(d) for d in p.member_day_ids]}
                         for p in self.patterns],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            patterns=tuple(MobilityPattern(p["id"], tuple(_parse_day(m) for m in p["members"]),
                                           _parse_day(p["representative_day"]))
                           for p in d["patterns"]),
            thresholds=Thresholds(**d["thresholds"]),
            mc=McConfig(**d.get("mc", {})))


def _day_str(day):
    return day.isoformat() if isinstance(day, dt.date) else str(day)


def _parse_day(text):
    try:
        return dt.date.fromisoformat(text)
    except (TypeError, ValueError):
        return text


def _day_key(day):
    if isinstance(day, dt.date):
        return day.toordinal()
    return zlib.crc32(str(day).encode())


def pair_seed(mc: McConfig, day_a, day_b):
    """Seed for the (baseline, candidate) comparison, fixed per ordered pair.

    Tying the seed to the pair rather than to call order keeps every
    estimate identical however the scan reaches it.
    """
    return int(np.random.SeedSequence(
        [mc.seed, _day_key(day_a), _day_key(day_b)]).generate_state(1)[0])


class PairCache:
    """Memo of divergence pairs keyed by (baseline day, candidate day)."""

    def __init__(self, mc: McConfig):
        self.mc = mc
        self._pairs = {}

    def __call__(self, catalog, day_a, day_b):
        key = (day_a, day_b)
        if key not in self._pairs:
            cfg = McConfig(n=self.mc.n, seed=pair_seed(self.mc, day_a, day_b))
            self._pairs[key] = kl_pair(catalog.densities[day_a],
                                       catalog.densities[day_b], cfg)
        return self._pairs[key]

    def __len__(self):
        return len(self._pairs)


def discover(catalog: DensityCatalog, th: Thresholds = Thresholds(),
             mc: McConfig = McConfig(), swap_rule: str = "pseudocode",
             cache: PairCache | None = None) -> PatternSet:
    """Cluster the catalog's days into mobility patterns.

    Each round opens a pattern on the earliest unassigned day and scans the
    remaining days in order. With ``swap_rule="pseudocode"`` an accepted day
    becomes the baseline when D(baseline||day) > D(day||baseline); with
    ``"prose"`` the inequality is reversed.

    Parameters
    ----------
    catalog : DensityCatalog
    th : Thresholds
    mc : McConfig
        Sample count and master seed; each ordered day pair gets its own
        seed derived from it.
    swap_rule : {"pseudocode", "prose"}
    cache : PairCache, optional
        Reused across calls that share `mc` (e.g. windowed experiments).
    """
    if not isinstance(th, Thresholds):
        raise TypeError("th must be a Thresholds instance")
    if swap_rule not in SWAP_RULES:
        raise ValueError(f"swap_rule must be one of {SWAP_RULES}")
    if cache is None or cache.mc != mc:
        cache = PairCache(mc)

    remaining = catalog.day_ids
    patterns = []
    while remaining:
        baseline = remaining[0]
        members = [baseline]
        for day in remaining[1:]:
            pair = cache(catalog, baseline, day)
            if not th.accepts(pair):
                continue
            members.append(day)
            fwd, rev = pair.values()
            if (fwd > rev) if swap_rule == "pseudocode" else (fwd < rev):
                baseline = day
        patterns.append(MobilityPattern(len(patterns), tuple(members), baseline))
        taken = set(members)
        remaining = [d for d in remaining if d not in taken]
    return PatternSet(tuple(patterns), th, mc)


@dataclass(frozen=True)
class PatternSummary:
    count: int
    member_counts: tuple
    ecdf_x: tuple
    ecdf_y: tuple
    singleton_fraction: float


def summarize(ps: PatternSet) -> PatternSummary:
    """Pattern count, member counts and their empirical CDF."""
    counts = tuple(len(p.member_day_ids) for p in ps.patterns)
    if not counts:
        return PatternSummary(0, (), (), (), 0.0)
    xs, n_at = np.unique(counts, return_counts=True)
    ys = np.cumsum(n_at) / len(counts)
    return PatternSummary(
        count=len(counts), member_counts=counts,
        ecdf_x=tuple(int(x) for x in xs), ecdf_y=tuple(float(y) for y in ys),
        singleton_fraction=sum(c == 1 for c in counts) / len(counts))


@dataclass(frozen=True)
class LengthCurvePoint:
    length: int
    mean: float
    std: float
    counts: tuple


def varying_length_experiment(catalog: DensityCatalog, lengths, repeats: int = 5,
                              seed: int = 0, th: Thresholds = Thresholds(),
                              mc: McConfig = McConfig(), swap_rule="pseudocode"):
    """Pattern counts on random contiguous windows of each length.

    Returns one :class:`LengthCurvePoint` per entry of `lengths`, with the
    population standard deviation over `repeats` windows.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    D = len(catalog)
    for L in lengths:
        if not 1 <= L <= D:
            raise ValueError(f"window length {L} outside [1, {D}]")
    rng = np.random.default_rng(seed)
    cache = PairCache(mc)
    out = []
    for L in lengths:
        counts = []
        for _ in range(repeats):
            start = int(rng.integers(0, D - L + 1))
            counts.append(len(discover(catalog.window(start, L), th, mc, swap_rule, cache)))
        out.append(LengthCurvePoint(int(L), float(np.mean(counts)),
                                    float(np.std(counts)), tuple(counts)))
    return out


def write_summary_csv(path, ps: PatternSet):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pattern_id", "representative_day", "n_members"])
        for p in ps.patterns:
            w.writerow([p.pattern_id, _day_str(p.representative_day_id),
                        len(p.member_day_ids)])


def write_ecdf_csv(path, summary: PatternSummary):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_members", "ecdf"])
        for x, y in zip(summary.ecdf_x, summary.ecdf_y):
            w.writerow([x, f"{y:.9g}"])


def write_curve_csv(path, curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["length", "mean_patterns", "std_patterns", "repeats"])
        for pt in curve:
            w.writerow([pt.length, f"{pt.mean:.9g}", f"{pt.std:.9g}", len(pt.counts)])
