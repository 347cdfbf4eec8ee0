import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobility_miner.discovery import (DensityCatalog, MobilityPattern, PairCache,
                                      PatternSet, Thresholds, discover, pair_seed,
                                      summarize, varying_length_experiment,
                                      write_curve_csv, write_ecdf_csv, write_summary_csv)
from mobility_miner.gmm import MixtureDensity
from mobility_miner.kl import DivergenceEstimate, DivergencePair, McConfig

from conftest import random_mixture

DAY0 = dt.date(2024, 1, 1)
MC = McConfig(n=2000, seed=0)


def days(n):
    return [DAY0 + dt.timedelta(days=i) for i in range(n)]


def gaussian(x, y, sd=1.0):
    return MixtureDensity.from_arrays([1.0], [[x, y]], [np.eye(2) / sd**2])


def catalog(mixtures):
    return DensityCatalog(dict(zip(days(len(mixtures)), mixtures)))


def pair(fwd, rev):
    return DivergencePair(DivergenceEstimate(fwd, 0, 1), DivergenceEstimate(rev, 0, 1))


# --- thresholds -------------------------------------------------------------

@pytest.mark.parametrize("lo, hi", [(0, 1), (-1, 5), (6, 5)])
def test_threshold_invariants(lo, hi):
    with pytest.raises(ValueError):
        Thresholds(lo, hi)


@pytest.mark.parametrize("fwd, rev, ok", [
    (7.21, 2.82, True), (1.28, 1.83, True),
    (19.07, 1269.47, False), (3.08, 996.17, False), (6.0, 6.0, False)])
def test_threshold_verdicts(fwd, rev, ok):
    assert Thresholds(5, 100).accepts(pair(fwd, rev)) is ok


# --- types --------------------------------------------------------------------

def test_catalog_must_be_ascending():
    d = days(2)
    with pytest.raises(ValueError):
        DensityCatalog({d[1]: gaussian(0, 0), d[0]: gaussian(0, 0)})


def test_pattern_invariants():
    with pytest.raises(ValueError):
        MobilityPattern(0, (), None)
    with pytest.raises(ValueError):
        MobilityPattern(0, (DAY0, DAY0), DAY0)
    with pytest.raises(ValueError):
        MobilityPattern(0, (DAY0,), DAY0 + dt.timedelta(1))


def test_pattern_set_roundtrip():
    ps = discover(catalog([gaussian(0, 0), gaussian(50, 0), gaussian(0, 0)]), mc=MC)
    back = PatternSet.from_dict(ps.to_dict())
    assert back == ps
    assert ps.to_dict()["patterns"][0]["members"] == ["2024-01-01", "2024-01-03"]


# --- discover -----------------------------------------------------------------

def test_identical_densities():
    g = gaussian(1, 2)
    ps = discover(catalog([g, g, g]), mc=MC)
    assert len(ps) == 1 and len(ps.patterns[0].member_day_ids) == 3


def test_empty_catalog():
    assert len(discover(DensityCatalog({}), mc=MC)) == 0


def test_tiny_thresholds_give_singletons(rng):
    mixes = [random_mixture(rng) for _ in range(6)]
    ps = discover(catalog(mixes), Thresholds(1e-9, 1e-9), MC)
    assert len(ps) == 6


def test_bad_threshold_type():
    with pytest.raises(TypeError):
        discover(catalog([gaussian(0, 0)]), (5, 100))


def test_bad_swap_rule():
    with pytest.raises(ValueError):
        discover(catalog([gaussian(0, 0)]), swap_rule="random")


def scripted(monkeypatch, table):
    """Replace the divergence estimator with a lookup on (day_a, day_b) indices."""
    def fake(self, cat, a, b):
        ia, ib = cat.day_ids.index(a), cat.day_ids.index(b)
        return pair(*table[(ia, ib)])
    monkeypatch.setattr(PairCache, "__call__", fake)


def test_baseline_swap_pseudocode(monkeypatch):
    # day 1 joins day 0 with forward > reverse, so it becomes the baseline;
    # day 2 is then judged against day 1 only
    table = {(0, 1): (4.0, 1.0), (1, 2): (1.0, 1.0), (0, 2): (50, 500)}
    scripted(monkeypatch, table)
    ps = discover(catalog([gaussian(0, 0)] * 3))
    assert len(ps) == 1
    # (1, 2) is symmetric, so day 1 stays the baseline and represents
    assert ps.patterns[0].representative_day_id == days(3)[1]


def test_baseline_swap_prose(monkeypatch):
    table = {(0, 1): (4.0, 1.0), (1, 2): (1.0, 1.0), (0, 2): (50, 500)}
    scripted(monkeypatch, table)
    ps = discover(catalog([gaussian(0, 0)] * 3), swap_rule="prose")
    # no swap: day 2 is compared to day 0 and rejected
    assert [len(p.member_day_ids) for p in ps.patterns] == [2, 1]
    assert ps.patterns[0].representative_day_id == DAY0


def test_scan_uses_remaining_days_only(monkeypatch):
    # day 2 is taken by pattern 0; pattern 1 starts at day 1 and never sees day 2
    table = {(0, 1): (50, 500), (0, 2): (1, 1), (0, 3): (50, 500),
             (1, 3): (1, 1)}
    scripted(monkeypatch, table)
    ps = discover(catalog([gaussian(0, 0)] * 4))
    members = [[d.day for d in p.member_day_ids] for p in ps.patterns]
    assert members == [[1, 3], [2, 4]]


def test_reference_day_geometry():
    # subset / similar / disjoint relations to day 1
    ps = discover(reference_day_catalog(), Thresholds(5, 100), McConfig(10000, 0))
    groups = [[d.day for d in p.member_day_ids] for p in ps.patterns]
    assert groups == [[1, 2, 3], [4], [5]]


def reference_day_catalog():
    def mix(ws, ms, sds):
        return MixtureDensity.from_arrays(np.array(ws) / sum(ws), np.array(ms, float),
                                          np.array([np.eye(2) / s**2 for s in sds]))
    return catalog([
        mix([.5, .3, .2], [(0, 0), (10, 0), (5, 6.5)], [1, 1, 1]),
        mix([.6, .4], [(0, 0), (10, 0)], [1, 1]),
        mix([.45, .33, .22], [(0.3, 0.2), (10.2, -0.3), (4.8, 6.7)], [1.1, 1, 0.9]),
        mix([.1, .9], [(0, 0), (30, 30)], [1, 1]),
        mix([.75, .25], [(5, 2), (40, -40)], [6, 1]),
    ])


def random_catalog(seed, n=8):
    rng = np.random.default_rng(seed)
    centres = rng.uniform(-6, 6, size=(3, 2))
    mixes = [gaussian(*(centres[rng.integers(3)] + rng.normal(0, 0.5, 2)),
                      sd=rng.uniform(0.8, 1.5)) for _ in range(n)]
    return catalog(mixes)


@settings(max_examples=30)
@given(seed=st.integers(0, 10_000))
def test_partition_and_representative(seed):
    cat = random_catalog(seed)
    ps = discover(cat, Thresholds(2, 10), MC)
    all_members = [d for p in ps.patterns for d in p.member_day_ids]
    assert sorted(all_members) == cat.day_ids
    for p in ps.patterns:
        assert p.representative_day_id in p.member_day_ids
        assert p.member_day_ids[0] == min(p.member_day_ids)


@settings(max_examples=30)
@given(seed=st.integers(0, 10_000), lo=st.floats(0.1, 5), scale=st.floats(1.0, 4.0))
def test_threshold_monotonicity(seed, lo, scale):
    cat = random_catalog(seed)
    hi = lo * 20
    small = discover(cat, Thresholds(lo, hi), MC)
    large = discover(cat, Thresholds(lo * scale, hi * scale), MC)
    assert len(large) <= len(small)


def test_determinism(rng):
    cat = catalog([random_mixture(rng, spread=3) for _ in range(6)])
    th = Thresholds(3, 30)
    assert discover(cat, th, MC) == discover(cat, th, MC)


def test_pair_seed_depends_on_pair_not_order():
    d = days(3)
    assert pair_seed(MC, d[0], d[1]) == pair_seed(MC, d[0], d[1])
    assert pair_seed(MC, d[0], d[1]) != pair_seed(MC, d[1], d[0])
    assert pair_seed(MC, d[0], d[1]) != pair_seed(McConfig(2000, 1), d[0], d[1])


def test_cache_memoizes(rng):
    cat = catalog([random_mixture(rng) for _ in range(4)])
    cache = PairCache(MC)
    discover(cat, Thresholds(1e-9, 1e-9), MC, cache=cache)
    n = len(cache)
    discover(cat, Thresholds(1e-9, 1e-9), MC, cache=cache)
    assert len(cache) == n


# --- summarize ------------------------------------------------------------------

def test_summarize_empty():
    s = summarize(PatternSet())
    assert s.count == 0 and s.ecdf_x == ()


def test_summarize_counts():
    d = days(5)
    ps = PatternSet((MobilityPattern(0, tuple(d[:3]), d[0]),
                     MobilityPattern(1, (d[3],), d[3]), MobilityPattern(2, (d[4],), d[4])))
    s = summarize(ps)
    assert s.count == 3 and s.member_counts == (3, 1, 1)
    assert s.singleton_fraction == pytest.approx(2 / 3)
    assert s.ecdf_x == (1, 3) and s.ecdf_y == pytest.approx((2 / 3, 1.0))


# --- varying length ---------------------------------------------------------------

def test_full_length_single_repeat():
    cat = random_catalog(1, n=10)
    th = Thresholds(2, 10)
    curve = varying_length_experiment(cat, [10], repeats=1, th=th, mc=MC)
    assert curve[0].mean == len(discover(cat, th, MC)) and curve[0].std == 0


def test_length_one():
    curve = varying_length_experiment(random_catalog(2), [1], repeats=4, mc=MC)
    assert curve[0].mean == 1 and curve[0].std == 0 and curve[0].counts == (1,) * 4


def test_length_errors():
    cat = random_catalog(3, n=5)
    with pytest.raises(ValueError):
        varying_length_experiment(cat, [6], mc=MC)
    with pytest.raises(ValueError):
        varying_length_experiment(cat, [2], repeats=0, mc=MC)


def test_curve_deterministic():
    cat = random_catalog(4, n=12)
    a = varying_length_experiment(cat, [3, 6, 12], repeats=3, seed=5, mc=MC)
    assert a == varying_length_experiment(cat, [3, 6, 12], repeats=3, seed=5, mc=MC)


# --- csv --------------------------------------------------------------------------

def test_csv_writers(tmp_path):
    ps = discover(catalog([gaussian(0, 0), gaussian(0, 0), gaussian(90, 0)]), mc=MC)
    write_summary_csv(tmp_path / "s.csv", ps)
    write_ecdf_csv(tmp_path / "e.csv", summarize(ps))
    write_curve_csv(tmp_path / "c.csv",
                    varying_length_experiment(catalog([gaussian(0, 0)] * 3), [1, 3], mc=MC))
    assert (tmp_path / "s.csv").read_text().splitlines() == [
        "pattern_id,representative_day,n_members", "0,2024-01-01,2", "1,2024-01-03,1"]
    assert (tmp_path / "e.csv").read_text().splitlines() == [
        "n_members,ecdf", "1,0.5", "2,1"]
    assert (tmp_path / "c.csv").read_text().splitlines()[1] == "1,1,0,5"
