import datetime as dt
import json
import subprocess
import sys

import numpy as np

from mobility_miner import jsonio
from mobility_miner.cli import main
from mobility_miner.gmm import MixtureDensity
from mobility_miner.synthetic import heterogeneous_days
from mobility_miner.trajectory import DailyTrajectory, UserDataset

SMALL_SYNTH = {"synth": {"days_per_template": 2, "points_per_day": [40, 80]},
               "mc": {"n": 2000}}


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def error_of(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


# --- configuration and errors -------------------------------------------------

def test_seed_required(tmp_path, capsys):
    code, _, err = run(["fit", "--out", tmp_path], capsys)
    assert code != 0 and error_of(err)["error"] == "config"
    assert "seed" in error_of(err)["message"]


def test_unknown_command(capsys):
    code, _, err = run(["explode"], capsys)
    assert code == 2 and error_of(err)["error"] == "usage"


def test_unknown_config_key(tmp_path, capsys):
    cfg = write_config(tmp_path, {"sede": 1})
    code, _, err = run(["ingest", "--config", cfg], capsys)
    assert code == 1 and "sede" in error_of(err)["message"]


def test_missing_config_file(tmp_path, capsys):
    code, _, err = run(["ingest", "--config", tmp_path / "nope.json"], capsys)
    assert code == 1 and error_of(err)["error"] == "io"


def test_invalid_nested_config(tmp_path, capsys):
    cfg = write_config(tmp_path, {"seed": 0, "thresholds": {"lower": 10, "upper": 5}})
    code, _, err = run(["discover", "--config", cfg, "--out", tmp_path], capsys)
    assert code == 1 and "lower" in error_of(err)["message"]


def test_missing_input(tmp_path, capsys):
    code, _, err = run(["ingest", "--out", tmp_path, "--input", tmp_path / "x.csv"], capsys)
    assert code == 1 and error_of(err)["error"] == "io"


def test_flag_beats_file_beats_default(tmp_path, capsys):
    cfg = write_config(tmp_path, {"seed": 1, "out": str(tmp_path / "from_file"),
                                  **SMALL_SYNTH})
    assert run(["synth", "--config", cfg], capsys)[0] == 0
    assert (tmp_path / "from_file" / "synth_truth.json").exists()
    assert run(["synth", "--config", cfg, "--out", tmp_path / "from_flag",
                "--set", "synth.days_per_template=1"], capsys)[0] == 0
    truth = jsonio.load(tmp_path / "from_flag" / "synth_truth.json")
    assert len(truth["labels"]) == 4


# --- ingest -------------------------------------------------------------------

def test_ingest(tmp_path, capsys):
    csv = tmp_path / "in.csv"
    csv.write_text("user_id,timestamp,lat,lon\n"
                   "u,1704067200,46.5,6.5\nu,1704067300,46.6,6.6\n"
                   "u,1704153600,46.5,6.5\nu,1,95,0\n")
    code, out, _ = run(["ingest", "--input", csv, "--out", tmp_path / "o"], capsys)
    assert code == 0
    assert "2024-01-01 2" in out and "rejected=1" in out
    ds = jsonio.load(tmp_path / "o" / "dataset.json")
    assert ds["user_id"] == "u" and [d["day_id"] for d in ds["days"]] == [
        "2024-01-01", "2024-01-02"]
    assert (tmp_path / "o" / "day_counts.csv").read_text().splitlines() == [
        "day_id,n_points,fittable", "2024-01-01,2,0", "2024-01-02,1,0"]


def test_ingest_needs_user_choice(tmp_path, capsys):
    csv = tmp_path / "in.csv"
    csv.write_text("user_id,timestamp,lat,lon\na,1,0,0\nb,2,0,0\n")
    code, _, err = run(["ingest", "--input", csv, "--out", tmp_path], capsys)
    assert code == 1 and "user_id" in error_of(err)["message"]
    cfg = write_config(tmp_path, {"user_id": "b", "input": str(csv)})
    assert run(["ingest", "--config", cfg, "--out", tmp_path], capsys)[0] == 0


# --- pipeline -------------------------------------------------------------------

def test_synth_one_template_recovers(tmp_path, capsys):
    cfg = write_config(tmp_path, {
        "seed": 0, "mc": {"n": 2000},
        "synth": {"templates": [{"template_id": "home", "anchors": [
            {"location": [0, 0], "dwell": 0.6, "spread": 100},
            {"location": [3000, 0], "dwell": 0.4, "spread": 100}]}],
            "days_per_template": 5, "points_per_day": [60, 120]}})
    code, out, _ = run(["synth", "--config", cfg, "--out", tmp_path / "o",
                        "--run-pipeline"], capsys)
    assert code == 0
    assert "rand_index=1 " in out
    assert jsonio.load(tmp_path / "o" / "recovery.json")["rand_index"] == 1.0


def cached_catalog(out, mixtures, skipped=()):
    out.mkdir(parents=True, exist_ok=True)
    days = [{"day_id": (dt.date(2024, 1, 1) + dt.timedelta(i)).isoformat(),
             "mixture": m.to_dict(), "posterior": None} for i, m in enumerate(mixtures)]
    jsonio.dump({"user_id": "u", "model": "dp", "seed": 0, "days": days,
                 "skipped": list(skipped)}, out / "catalog.json")


def test_discover_three_identical(tmp_path, capsys):
    g = MixtureDensity.from_arrays([0.3, 0.7], [[0, 0], [4, 1]], [np.eye(2)] * 2)
    cached_catalog(tmp_path, [g, g, g])
    code, out, _ = run(["discover", "--seed", 0, "--out", tmp_path], capsys)
    assert code == 0
    ps = jsonio.load(tmp_path / "patterns.json")
    assert len(ps["patterns"]) == 1 and len(ps["patterns"][0]["members"]) == 3
    assert ps["thresholds"] == {"lower": 5.0, "upper": 100.0}
    assert (tmp_path / "pattern_summary.csv").exists()
    assert (tmp_path / "member_ecdf.csv").read_text().splitlines()[1] == "3,1"


def test_discover_never_refits(tmp_path, capsys, monkeypatch):
    import mobility_miner.cli as cli
    cached_catalog(tmp_path, [MixtureDensity.from_arrays([1.0], [[0, 0]], [np.eye(2)])])

    def boom(cfg):
        raise AssertionError("refit")
    monkeypatch.setattr(cli, "cmd_fit", boom)
    assert run(["discover", "--seed", 0, "--out", tmp_path], capsys)[0] == 0


def test_fit_divergence_curve(tmp_path, capsys):
    cfg = write_config(tmp_path, {"seed": 5, "out": str(tmp_path / "o"), **SMALL_SYNTH})
    assert run(["synth", "--config", cfg], capsys)[0] == 0
    code, out, _ = run(["fit", "--config", cfg], capsys)
    assert code == 0 and "fitted=8 skipped=0" in out
    catalog = jsonio.load(tmp_path / "o" / "catalog.json")
    assert catalog["model"] == "dp" and "elbo_trace" in catalog["days"][0]["posterior"]

    assert run(["divergence", "--config", cfg], capsys)[0] == 0
    rows = (tmp_path / "o" / "divergence.csv").read_text().splitlines()
    assert len(rows) == 1 + 7 and rows[1].startswith("2024-01-01,2024-01-02,")
    assert run(["divergence", "--config", cfg, "--pairs", "all"], capsys)[0] == 0
    assert len((tmp_path / "o" / "divergence.csv").read_text().splitlines()) == 1 + 28
    assert run(["divergence", "--config", cfg, "--pairs",
                '[["2024-01-03", "2024-01-05"]]'], capsys)[0] == 0
    assert (tmp_path / "o" / "divergence.csv").read_text().splitlines()[1].startswith(
        "2024-01-03,2024-01-05,")
    code, _, err = run(["divergence", "--config", cfg, "--pairs",
                        '[["2023-01-01", "2024-01-05"]]'], capsys)
    assert code == 1 and "2023-01-01" in error_of(err)["message"]

    code, out, _ = run(["curve", "--config", cfg, "--lengths", "1,4,8", "--repeats", 2],
                       capsys)
    assert code == 0
    lines = (tmp_path / "o" / "curve.csv").read_text().splitlines()
    assert lines[0] == "length,mean_patterns,std_patterns,repeats"
    assert lines[1] == "1,1,0,2"
    code, _, err = run(["curve", "--config", cfg, "--lengths", "9"], capsys)
    assert code == 1


def test_fit_with_em_and_skips(tmp_path, capsys):
    out = tmp_path / "o"
    out.mkdir()
    rng = np.random.default_rng(0)
    ds = UserDataset("u", [DailyTrajectory(dt.date(2024, 1, 1), rng.normal(size=(50, 2))),
                           DailyTrajectory(dt.date(2024, 1, 2), rng.normal(size=(3, 2)))])
    jsonio.dump(ds.to_dict(), out / "dataset.json")
    code, stdout, _ = run(["fit", "--seed", 0, "--out", out, "--gmm", 2], capsys)
    assert code == 0
    cat = jsonio.load(out / "catalog.json")
    assert cat["model"] == "gmm-2" and len(cat["days"][0]["mixture"]["weights"]) == 2
    assert cat["skipped"] == [{"day_id": "2024-01-02", "reason": "too few points (3 < 10)"}]


def test_compare_models_dp_row_best(tmp_path, capsys):
    days, _ = heterogeneous_days(n_days=10, seed=0)
    ds = UserDataset("u", [DailyTrajectory(dt.date(2024, 1, 1) + dt.timedelta(i), d)
                           for i, d in enumerate(days)])
    (tmp_path / "o").mkdir()
    jsonio.dump(ds.to_dict(), tmp_path / "o" / "dataset.json")
    code, _, _ = run(["compare-models", "--seed", 0, "--out", tmp_path / "o"], capsys)
    assert code == 0
    rows = (tmp_path / "o" / "model_comparison.csv").read_text().splitlines()[1:]
    scores = {r.split(",")[0]: float(r.split(",")[1]) for r in rows}
    assert max(scores, key=scores.get) == "dp"


def test_worker_count_does_not_change_artifacts(tmp_path, capsys):
    for workers in (1, 2):
        cfg = write_config(tmp_path, {"seed": 2, "out": str(tmp_path / f"w{workers}"),
                                      "workers": workers, **SMALL_SYNTH})
        for cmd in ("synth", "fit", "discover"):
            assert run([cmd, "--config", cfg], capsys)[0] == 0
    for name in ("catalog.json", "patterns.json"):
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w2" / name).read_bytes()


def test_console_script_exit_code(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mobility_miner.cli", "fit",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 1
    assert json.loads(proc.stderr)["error"] == "config"
