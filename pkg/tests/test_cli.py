import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from recal import io, metrics
from recal.cli import run
from recal.data import ImageTensorSet, LogitsTable


def parse_kv(text):
    out = {}
    for line in text.strip().splitlines():
        key, _, value = line.partition("=")
        out[key] = value
    return out


@pytest.fixture(scope="module")
def scenario_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scenario")
    assert run(["synth", "scenario", "--n", "1500", "--k", "5", "--seed", "2",
                "--out-dir", str(d)]) == 0
    return d


def test_evaluate_perfect_table(tmp_path, capsys):
    path = tmp_path / "z.csv"
    io.write_logits_csv(LogitsTable([[800.0, 0.0], [0.0, 800.0]], [0, 1]), path)
    assert run(["evaluate", "--logits", str(path)]) == 0
    out = parse_kv(capsys.readouterr().out.replace(" ", "\n"))
    assert float(out["ece"]) == 0.0
    assert float(out["error_rate"]) == 0.0


def test_evaluate_matches_library(tmp_path, capsys, small_table):
    path = tmp_path / "z.csv"
    io.write_logits_csv(small_table, path)
    bins_csv = tmp_path / "bins.csv"
    assert run(["evaluate", "--logits", str(path), "--bins", "10",
                "--bins-csv", str(bins_csv)]) == 0
    out = parse_kv(capsys.readouterr().out.replace(" ", "\n"))
    assert float(out["ece"]) == metrics.ece(small_table, 10)
    assert float(out["nll"]) == metrics.nll(small_table)
    rows = list(csv.reader(bins_csv.open()))
    assert rows[0] == ["bin", "count", "mean_confidence", "mean_accuracy"]
    assert len(rows) == 11
    assert sum(int(r[1]) for r in rows[1:]) == small_table.n_samples


def test_scenario_layout(scenario_dir):
    for name in ("val.csv", "test.csv", "descriptor.json"):
        assert (scenario_dir / name).is_file()
    assert len(list((scenario_dir / "val_t").glob("t_*.csv"))) == 10
    desc = json.loads((scenario_dir / "descriptor.json").read_text())
    assert desc["n"] == 1500


def test_calibrate_apply_evaluate(scenario_dir, tmp_path, capsys):
    d = scenario_dir
    map_a, map_b = tmp_path / "a.json", tmp_path / "b.json"
    common = ["calibrate", "--val", str(d / "val.csv"), "--val-t", str(d / "val_t"),
              "--pool", "s:0.5:0.9:10", "--seed", "2"]
    assert run(common + ["--out", str(map_a)]) == 0
    stats = parse_kv(capsys.readouterr().out)
    assert run(common + ["--out", str(map_b)]) == 0
    capsys.readouterr()
    assert map_a.read_bytes() == map_b.read_bytes()
    cmap = io.load_map(map_a)
    assert int(stats["iterations"]) == cmap.n_iterations
    assert len(stats["ece_trace"].split(",")) == cmap.n_iterations + 1
    assert stats["fingerprint"] == cmap.fingerprint
    assert float(stats["learning_time_seconds"]) >= 0

    out = tmp_path / "cal.csv"
    assert run(["apply", "--map", str(map_a), "--test", str(d / "test.csv"),
                "--test-t", str(d / "test_t"), "--out", str(out),
                "--expect-fingerprint", cmap.fingerprint]) == 0
    capsys.readouterr()
    before = io.read_logits_csv(d / "test.csv")
    after = io.read_logits_csv(out)
    assert metrics.error_rate(after) == metrics.error_rate(before)
    assert run(["evaluate", "--logits", str(out)]) == 0
    assert "ece=" in capsys.readouterr().out


def test_ts_method(scenario_dir, tmp_path, capsys):
    d = scenario_dir
    path = tmp_path / "ts.json"
    assert run(["calibrate", "--method", "ts", "--val", str(d / "val.csv"),
                "--out", str(path)]) == 0
    cmap = io.load_map(path)
    assert cmap.pool is None and cmap.n_iterations == 1
    out = tmp_path / "cal.csv"
    assert run(["apply", "--map", str(path), "--test", str(d / "test.csv"),
                "--out", str(out)]) == 0
    T = cmap.iterations[0].temperatures[0]
    before = io.read_logits_csv(d / "test.csv")
    np.testing.assert_array_equal(io.read_logits_csv(out).logits, before.logits / T)


def test_group_analysis(scenario_dir, tmp_path, capsys):
    d = scenario_dir
    grid, ranks = tmp_path / "grid.csv", tmp_path / "ranks.csv"
    transformed = [str(d / "val_t" / f"t_{i}.csv") for i in range(3)]
    assert run(["group-analysis", "--logits", str(d / "val.csv"), "--transformed",
                *transformed, "--grid-out", str(grid), "--ranks-out", str(ranks)]) == 0
    assert "overall_ece=" in capsys.readouterr().out
    rows = list(csv.reader(grid.open()))
    assert rows[0][:3] == ["transform", "g1_ece", "g1_count"]
    assert len(rows) == 4
    for r in rows[1:]:
        assert sum(int(r[i]) for i in (2, 4, 6, 8)) == 1500
    rank_rows = list(csv.reader(ranks.open()))
    assert rank_rows[0] == ["group", "rank1", "rank2", "rank3", "rank4"]
    for r in rank_rows[1:]:
        assert sum(float(x) for x in r[1:]) == pytest.approx(1.0)


def test_transform(tmp_path, capsys):
    src, dst = tmp_path / "in.rct", tmp_path / "out.rct"
    vals = np.random.default_rng(0).random((2, 3, 8, 8)).astype(np.float32)
    io.write_tensor(ImageTensorSet(vals), src)
    assert run(["transform", "--kind", "zoom", "--param", "1.0", "--in", str(src),
                "--out", str(dst)]) == 0
    np.testing.assert_array_equal(io.read_tensor(dst).values, vals)
    assert run(["transform", "--kind", "brightness", "--param", "0.5", "--in", str(src),
                "--out", str(dst)]) == 0
    np.testing.assert_allclose(io.read_tensor(dst).values, vals * 0.5, rtol=1e-6)
    assert run(["transform", "--kind", "zoom", "--param", "0.5", "--in", str(src),
                "--out", str(dst)]) == 0
    assert capsys.readouterr().out.strip().endswith("dims=2,3,8,8")
    assert run(["transform", "--kind", "zoom", "--param", "1.5", "--in", str(src),
                "--out", str(dst)]) == 1


def test_synth_table_and_lossy(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(["synth", "table", "--n", "100", "--k", "4", "--seed", "1",
                "--out", str(a)]) == 0
    assert run(["synth", "lossy", "--in", str(a), "--lossiness", "1", "--out", str(b)]) == 0
    table = io.read_logits_csv(b)
    assert table.n_samples == 100 and np.all(table.logits == 0.0)
    np.testing.assert_array_equal(table.labels, io.read_logits_csv(a).labels)


def test_usage_errors(tmp_path, capsys):
    assert run(["evaluate", "--nope"]) == 2
    assert run(["evaluate", "--logits", str(tmp_path / "missing.csv")]) == 2
    assert run([]) == 2
    capsys.readouterr()


def test_runtime_errors(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("label,z0,z1\n0,1.0\n")
    assert run(["evaluate", "--logits", str(bad)]) == 1
    assert "line 2" in capsys.readouterr().err
    bad_map = tmp_path / "map.json"
    bad_map.write_text(json.dumps({"format_version": 99}))
    io.write_logits_csv(LogitsTable([[0.0, 1.0]], [1]), tmp_path / "t.csv")
    assert run(["apply", "--map", str(bad_map), "--test", str(tmp_path / "t.csv"),
                "--out", str(tmp_path / "o.csv")]) == 1


def test_module_entry_point(tmp_path):
    path = tmp_path / "z.csv"
    io.write_logits_csv(LogitsTable([[2.0, 0.0]], [0]), path)
    proc = subprocess.run([sys.executable, "-m", "recal", "evaluate", "--logits", str(path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("ece=")
