"""Command-line pipeline: ingest, fit, divergence, discover, compare-models,
curve and synth.

Every command reads a JSON config (``--config``), applies flag overrides on
top of it, and writes its artifacts to the configured output directory.
Failures print one JSON line ``{"error": ..., "message": ...}`` to stderr
and exit nonzero.
"""

from __future__ import annotations

import argparse
from concurrent.futures import ProcessPoolExecutor
import contextlib
import copy
import csv
import datetime as dt
from dataclasses import dataclass
import io
import json
import os
from pathlib import Path
import sys

import numpy as np

from . import jsonio
from .discovery import (DensityCatalog, PatternSet, Thresholds, discover,
                        pair_seed, summarize, varying_length_experiment,
                        write_curve_csv, write_ecdf_csv, write_summary_csv)
from .dpmm import DEFAULT_COV_SCALE, DpPrior, NumericalError, TruncationConfig
from .experiments import compare_models, fit_catalog, write_comparison_csv
from .gmm import MixtureDensity
from .kl import McConfig, kl_pair, write_divergence_csv
from .synthetic import (GeneratorConfig, RouteTemplate, commuter_templates,
                        generate, score_recovery, write_records_csv)
from .trajectory import (ProjectionConfig, UserDataset, parse_records,
                         segment_by_day, split_by_user)

COMMANDS = ("ingest", "fit", "divergence", "discover", "compare-models", "curve", "synth")
RANDOMIZED = {"fit", "divergence", "discover", "compare-models", "curve", "synth"}

DATASET = "dataset.json"
DAY_COUNTS = "day_counts.csv"
CATALOG = "catalog.json"
DIVERGENCE = "divergence.csv"
PATTERNS = "patterns.json"
PATTERN_SUMMARY = "pattern_summary.csv"
MEMBER_ECDF = "member_ecdf.csv"
COMPARISON = "model_comparison.csv"
CURVE = "curve.csv"
SYNTH_RECORDS = "synth_records.csv"
SYNTH_TRUTH = "synth_truth.json"
RECOVERY = "recovery.json"

DEFAULTS = {
    "input": [],
    "timestamp_format": "unix",
    "user_id": None,
    "projection": {"mode": "raw-degrees", "reference_point": None, "tz_offset_minutes": 0},
    "min_points": 10,
    "dp": {"alpha": 1.0, "beta0": 1e-3, "nu0": 3.0, "cov_scale": DEFAULT_COV_SCALE,
           "T": 20, "tol": 1e-5, "max_iter": 500, "init": "kmeans++",
           "merge_every": 25, "weight_floor": 0.01},
    "gmm": None,
    "em": {"ks": [1, 2, 3, 4, 5], "tol": 1e-4, "max_iter": 200, "reg_covar": 1e-6},
    "mc": {"n": 10000},
    "thresholds": {"lower": 5.0, "upper": 100.0},
    "swap_rule": "pseudocode",
    "pairs": "first",
    "compare": {"test_fraction": 0.3},
    "curve": {"lengths": None, "repeats": 5},
    "synth": {"templates": "commuter", "scale": 1.0, "days_per_template": 25,
              "points_per_day": [50, 500], "schedule": "shuffled",
              "transition_fraction": 0.15, "noise_scale": 0.0,
              "start_date": "2024-01-01", "user_id": "synthetic",
              "reference_point": [46.52, 6.57], "run_pipeline": False},
    "out": "out",
    "seed": None,
    "workers": None,
}


class CliError(Exception):
    """A user-facing failure with a stable error code."""

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# configuration

def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for key, value in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise CliError("config", f"unknown config key {where!r}")
        if isinstance(base[key], dict) and value is not None:
            if not isinstance(value, dict):
                raise CliError("config", f"config key {where!r} must be an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def _set_dotted(tree, dotted, value):
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise CliError("config", f"cannot set {dotted!r}: {k!r} is not an object")
    node[keys[-1]] = value


def _parse_override(text):
    if "=" not in text:
        raise CliError("usage", f"--set expects KEY=VALUE, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


@dataclass(frozen=True)
class PipelineConfig:
    """Merged run configuration (defaults, then file, then flags)."""

    raw: dict

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def out(self):
        return Path(self.raw["out"])

    @property
    def seed(self):
        return self.raw["seed"]

    def projection(self):
        return ProjectionConfig.from_dict(self.raw["projection"])

    def truncation(self, seed=None):
        dp = self.raw["dp"]
        return TruncationConfig(T=int(dp["T"]), tol=float(dp["tol"]),
                                max_iter=int(dp["max_iter"]),
                                seed=self.seed if seed is None else seed,
                                min_points=int(self.raw["min_points"]),
                                init=dp["init"], merge_every=int(dp["merge_every"]))

    def prior_kwargs(self):
        dp = self.raw["dp"]
        return {k: float(dp[k]) for k in ("alpha", "beta0", "nu0", "cov_scale")}

    def mc(self):
        return McConfig(n=int(self.raw["mc"]["n"]), seed=int(self.seed))

    def thresholds(self):
        th = self.raw["thresholds"]
        return Thresholds(float(th["lower"]), float(th["upper"]))

    def generator(self):
        s = self.raw["synth"]
        if s["templates"] == "commuter":
            templates = commuter_templates(float(s["scale"]))
        else:
            templates = tuple(RouteTemplate.from_dict(t) for t in s["templates"])
        return GeneratorConfig(
            templates=templates, days_per_template=int(s["days_per_template"]),
            points_per_day=tuple(int(v) for v in s["points_per_day"]),
            schedule=s["schedule"], transition_fraction=float(s["transition_fraction"]),
            noise_scale=float(s["noise_scale"]), seed=int(self.seed),
            start_date=dt.date.fromisoformat(s["start_date"]), user_id=s["user_id"],
            reference_point=tuple(s["reference_point"]),
            min_points=int(self.raw["min_points"]))

    def validate(self, command):
        if command in RANDOMIZED:
            seed = self.seed
            if seed is None:
                raise CliError("config", f"command {command!r} requires an explicit seed")
            if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
                raise CliError("config", f"seed must be a non-negative integer, got {seed!r}")
        workers = self.raw["workers"]
        if workers is not None and (not isinstance(workers, int) or workers < 1):
            raise CliError("config", f"workers must be a positive integer, got {workers!r}")
        if self.raw["swap_rule"] not in ("pseudocode", "prose"):
            raise CliError("config", f"unknown swap_rule {self.raw['swap_rule']!r}")
        # construct every nested config once so invariant errors surface early
        self.projection()
        self.thresholds()
        if command in RANDOMIZED:
            self.truncation()
            self.mc()
            DpPrior.from_data(np.eye(2), **self.prior_kwargs())
        if command == "synth":
            self.generator()


def load_config(args) -> PipelineConfig:
    tree = copy.deepcopy(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError("io", f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CliError("config", f"config is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise CliError("config", "config document must be a JSON object")
        tree = _merge(tree, doc)
    flags = {}
    for text in args.set or ():
        key, value = _parse_override(text)
        _set_dotted(flags, key, value)
    direct = {
        "out": args.out, "seed": args.seed, "workers": args.workers,
        "input": args.input, "gmm": args.gmm, "pairs": args.pairs,
        "swap_rule": args.swap_rule,
    }
    for key, value in direct.items():
        if value is not None:
            flags[key] = value
    if args.lower is not None:
        _set_dotted(flags, "thresholds.lower", args.lower)
    if args.upper is not None:
        _set_dotted(flags, "thresholds.upper", args.upper)
    if args.mc_samples is not None:
        _set_dotted(flags, "mc.n", args.mc_samples)
    if args.lengths is not None:
        _set_dotted(flags, "curve.lengths", args.lengths)
    if args.repeats is not None:
        _set_dotted(flags, "curve.repeats", args.repeats)
    if args.run_pipeline:
        _set_dotted(flags, "synth.run_pipeline", True)
    tree = _merge(tree, flags)
    if isinstance(tree["input"], str):
        tree["input"] = [tree["input"]]
    cfg = PipelineConfig(tree)
    cfg.validate(args.command)
    return cfg


# --------------------------------------------------------------------------
# workers

@contextlib.contextmanager
def _mapper(workers):
    n = workers or os.cpu_count() or 1
    if n == 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=n) as pool:
        yield lambda fn, jobs: pool.map(fn, jobs, chunksize=1)


def _divergence_job(job):
    day_a, day_b, p, q, mc = job
    return day_a, day_b, kl_pair(p, q, McConfig(n=mc.n, seed=pair_seed(mc, day_a, day_b)))


# --------------------------------------------------------------------------
# artifacts

def _require(path: Path, what):
    if not path.exists():
        raise CliError("io", f"{what} not found: {path}")
    return path


def _write_day_counts(path, dataset: UserDataset, min_points):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day_id", "n_points", "fittable"])
        for t in dataset.trajectories:
            w.writerow([t.day_id.isoformat(), t.point_count,
                        int(t.is_fittable(min_points))])


def _load_dataset(cfg: PipelineConfig) -> UserDataset:
    path = cfg.out / DATASET
    if not path.exists():
        cmd_ingest(cfg)
    return UserDataset.from_dict(jsonio.load(path))


def load_catalog(path) -> DensityCatalog:
    doc = jsonio.load(_require(Path(path), "catalog"))
    densities = {dt.date.fromisoformat(d["day_id"]): MixtureDensity.from_dict(d["mixture"])
                 for d in doc["days"]}
    skipped = tuple((dt.date.fromisoformat(s["day_id"]), s["reason"]) for s in doc["skipped"])
    return DensityCatalog(densities, skipped)


def _catalog(cfg: PipelineConfig) -> DensityCatalog:
    path = cfg.out / CATALOG
    if not path.exists():
        cmd_fit(cfg)
    return load_catalog(path)


# --------------------------------------------------------------------------
# commands

def cmd_ingest(cfg: PipelineConfig):
    inputs = [Path(p) for p in cfg["input"]]
    if not inputs:
        raise CliError("config", "no input CSV given (config key 'input' or --input)")
    records, rejected = [], 0
    for path in inputs:
        _require(path, "input file")
        res = parse_records(path, cfg["timestamp_format"])
        records.extend(res.records)
        rejected += res.n_rejected
    by_user = split_by_user(records)
    user = cfg["user_id"]
    if user is None:
        if len(by_user) > 1:
            raise CliError("config", f"input holds {len(by_user)} users; set 'user_id'")
        user = next(iter(by_user), "")
    if by_user and user not in by_user:
        raise CliError("config", f"user {user!r} not present in input")
    dataset = segment_by_day(by_user.get(user, []), cfg.projection())
    cfg.out.mkdir(parents=True, exist_ok=True)
    jsonio.dump(dataset.to_dict(), cfg.out / DATASET)
    _write_day_counts(cfg.out / DAY_COUNTS, dataset, int(cfg["min_points"]))
    for t in dataset.trajectories:
        print(f"{t.day_id.isoformat()} {t.point_count}")
    print(f"days={len(dataset)} records={len(records)} rejected={rejected}")
    return dataset


def cmd_fit(cfg: PipelineConfig):
    dataset = _load_dataset(cfg)
    gmm_k = cfg["gmm"]
    if gmm_k is not None and (isinstance(gmm_k, bool) or not isinstance(gmm_k, int)
                              or gmm_k < 1):
        raise CliError("config", f"gmm must be a positive integer, got {gmm_k!r}")
    em = cfg["em"]
    em_kw = {"tol": float(em["tol"]), "max_iter": int(em["max_iter"]),
             "reg_covar": float(em["reg_covar"])}
    with _mapper(cfg["workers"]) as mapper:
        catalog, fits = fit_catalog(
            dataset, cfg.seed, cfg.truncation(), cfg.prior_kwargs(),
            float(cfg["dp"]["weight_floor"]), gmm_k, em_kw, map_fn=mapper)
    days = []
    for day_id, mix in catalog.densities.items():
        fit = fits[day_id]
        fit_doc = ({"mean_log_likelihood": fit} if gmm_k
                   else fit.to_dict(include_resp=False))
        days.append({"day_id": day_id.isoformat(), "mixture": mix.to_dict(),
                     "posterior": fit_doc})
    skipped = [{"day_id": d.isoformat(), "reason": r} for d, r in catalog.skipped]
    doc = {"user_id": dataset.user_id,
           "model": f"gmm-{gmm_k}" if gmm_k else "dp",
           "seed": cfg.seed, "days": days, "skipped": skipped}
    cfg.out.mkdir(parents=True, exist_ok=True)
    jsonio.dump(doc, cfg.out / CATALOG)
    print(f"fitted={len(days)} skipped={len(skipped)}")
    return doc


def _requested_pairs(spec, day_ids):
    if spec == "first":
        return [(day_ids[0], d) for d in day_ids[1:]]
    if spec == "all":
        return [(a, b) for i, a in enumerate(day_ids) for b in day_ids[i + 1:]]
    if isinstance(spec, list):
        known = set(day_ids)
        out = []
        for item in spec:
            if not (isinstance(item, list) and len(item) == 2):
                raise CliError("config", "pairs must be 'first', 'all' or a list of [day, day]")
            a, b = (dt.date.fromisoformat(str(v)) for v in item)
            for d in (a, b):
                if d not in known:
                    raise CliError("config", f"day {d.isoformat()} is not in the catalog")
            out.append((a, b))
        return out
    raise CliError("config", "pairs must be 'first', 'all' or a list of [day, day]")


def cmd_divergence(cfg: PipelineConfig):
    catalog = _catalog(cfg)
    mc = cfg.mc()
    pairs = _requested_pairs(cfg["pairs"], catalog.day_ids) if len(catalog) else []
    jobs = [(a, b, catalog.densities[a], catalog.densities[b], mc) for a, b in pairs]
    with _mapper(cfg["workers"]) as mapper:
        rows = list(mapper(_divergence_job, jobs))
    write_divergence_csv(cfg.out / DIVERGENCE,
                         [(a.isoformat(), b.isoformat(), pair) for a, b, pair in rows])
    print(f"pairs={len(rows)}")
    return rows


def _write_patterns(cfg, ps: PatternSet):
    jsonio.dump(ps.to_dict(), cfg.out / PATTERNS)
    summary = summarize(ps)
    write_summary_csv(cfg.out / PATTERN_SUMMARY, ps)
    write_ecdf_csv(cfg.out / MEMBER_ECDF, summary)
    return summary


def cmd_discover(cfg: PipelineConfig):
    catalog = _catalog(cfg)
    ps = discover(catalog, cfg.thresholds(), cfg.mc(), cfg["swap_rule"])
    summary = _write_patterns(cfg, ps)
    print(f"patterns={summary.count} days={len(catalog)} "
          f"singleton_fraction={summary.singleton_fraction:.9g}")
    return ps


def cmd_compare_models(cfg: PipelineConfig):
    dataset = _load_dataset(cfg)
    em = cfg["em"]
    prior = cfg.prior_kwargs()
    with _mapper(cfg["workers"]) as mapper:
        scores = compare_models(
            [t.points for t in dataset.trajectories], ks=tuple(em["ks"]),
            test_fraction=float(cfg["compare"]["test_fraction"]), seed=cfg.seed,
            trunc=cfg.truncation(), alpha=prior["alpha"], cov_scale=prior["cov_scale"],
            weight_floor=float(cfg["dp"]["weight_floor"]), em_tol=float(em["tol"]),
            em_max_iter=int(em["max_iter"]), reg_covar=float(em["reg_covar"]),
            map_fn=mapper)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_comparison_csv(cfg.out / COMPARISON, scores)
    for s in scores:
        print(f"{s.model} {s.mean_log_likelihood:.9g} days={s.n_days}")
    return scores


def cmd_curve(cfg: PipelineConfig):
    catalog = _catalog(cfg)
    D = len(catalog)
    if D == 0:
        raise CliError("data", "catalog has no fitted days")
    lengths = cfg["curve"]["lengths"]
    if lengths is None:
        lengths = sorted({L for L in (10, 25, 50, 75, 100) if L <= D} | {D})
    try:
        curve = varying_length_experiment(
            catalog, [int(L) for L in lengths], repeats=int(cfg["curve"]["repeats"]),
            seed=cfg.seed, th=cfg.thresholds(), mc=cfg.mc(), swap_rule=cfg["swap_rule"])
    except ValueError as exc:
        raise CliError("config", str(exc)) from None
    write_curve_csv(cfg.out / CURVE, curve)
    for pt in curve:
        print(f"{pt.length} {pt.mean:.9g} {pt.std:.9g}")
    return curve


def cmd_synth(cfg: PipelineConfig):
    gen = cfg.generator()
    dataset, truth = generate(gen)
    cfg.out.mkdir(parents=True, exist_ok=True)
    records_path = cfg.out / SYNTH_RECORDS
    write_records_csv(records_path, dataset, gen.projection, seed=cfg.seed)
    jsonio.dump({"user_id": gen.user_id,
                 "projection": gen.projection.to_dict(),
                 "labels": {d.isoformat(): t for d, t in sorted(truth.items())}},
                cfg.out / SYNTH_TRUTH)
    # round-trip through the CSV so downstream commands see ingested data
    ingest_cfg = PipelineConfig({**cfg.raw, "input": [str(records_path)],
                                 "timestamp_format": "unix", "user_id": gen.user_id,
                                 "projection": gen.projection.to_dict()})
    with contextlib.redirect_stdout(io.StringIO()):
        cmd_ingest(ingest_cfg)
    print(f"days={gen.n_days} templates={len(gen.templates)}")
    if cfg["synth"]["run_pipeline"]:
        with contextlib.redirect_stdout(io.StringIO()):
            cmd_fit(cfg)
            ps = cmd_discover(cfg)
        fitted = set(ps.labels())
        score = score_recovery(ps, {d: t for d, t in truth.items() if d in fitted})
        jsonio.dump({"rand_index": score.rand_index, "n_found": score.n_found,
                     "n_true": score.n_true}, cfg.out / RECOVERY)
        print(f"rand_index={score.rand_index:.9g} found={score.n_found} true={score.n_true}")
    return dataset, truth


HANDLERS = {
    "ingest": cmd_ingest, "fit": cmd_fit, "divergence": cmd_divergence,
    "discover": cmd_discover, "compare-models": cmd_compare_models,
    "curve": cmd_curve, "synth": cmd_synth,
}


# --------------------------------------------------------------------------
# entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _lengths(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad length list {text!r}") from None


def _pairs(text):
    if text in ("first", "all"):
        return text
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        raise argparse.ArgumentTypeError("pairs must be first, all or a JSON list") from None


def build_parser():
    p = _Parser(prog="mobility-miner",
                description="Discover recurring daily mobility patterns from GPS records.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="worker processes (default: all cores)")
    p.add_argument("--input", action="append", help="input CSV (repeatable)")
    p.add_argument("--gmm", type=int, metavar="K", help="fit: use EM with K components")
    p.add_argument("--pairs", type=_pairs, help="divergence: first, all or JSON list")
    p.add_argument("--lower", type=float, help="lower divergence threshold")
    p.add_argument("--upper", type=float, help="upper divergence threshold")
    p.add_argument("--mc-samples", type=int, help="Monte-Carlo samples per direction")
    p.add_argument("--swap-rule", choices=("pseudocode", "prose"))
    p.add_argument("--lengths", type=_lengths, help="curve: comma-separated day counts")
    p.add_argument("--repeats", type=int, help="curve: windows per length")
    p.add_argument("--run-pipeline", action="store_true",
                   help="synth: also fit, discover and score recovery")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key, e.g. dp.T=30 (value parsed as JSON)")
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args)
        HANDLERS[args.command](cfg)
    except CliError as exc:
        _fail(exc.code, str(exc))
        return 2 if exc.code == "usage" else 1
    except (ValueError, KeyError, TypeError, OSError, NumericalError) as exc:
        _fail(type(exc).__name__, str(exc))
        return 1
    return 0


def _fail(code, message):
    line = json.dumps({"error": code, "message": " ".join(str(message).split())})
    print(line, file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
