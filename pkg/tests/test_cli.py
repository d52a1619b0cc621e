import csv
import json
import math

import numpy as np
import pytest

from conftest import make_data, make_tdc_data
from rocsurv import benchmark as bench
from rocsurv.benchmark import BenchmarkConfig, BenchmarkReport, method_label, run_benchmark, run_replicate
from rocsurv.cli import RunConfig, UsageError, external_icon, main
from rocsurv.io import load_model
from rocsurv.kernels import BandwidthPolicy
from rocsurv.survival_data import (
    Dataset,
    read_long_csv,
    read_long_csv_paths,
    transform,
    uncensored_quantile_grid,
    write_long_csv,
)
from rocsurv.tree import predict_survival


@pytest.fixture
def files(tmp_path):
    train = tmp_path / "train.csv"
    new = tmp_path / "new.csv"
    write_long_csv(make_tdc_data(120, seed=31), train)
    write_long_csv(make_tdc_data(6, seed=32), new)
    return tmp_path, train, new


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestFitAndPredict:
    def test_fit_tree_output_and_determinism(self, files, capsys):
        d, train, _ = files
        assert main(["fit-tree", "--data", str(train), "--out", str(d / "a.json"), "--seed", "5",
                     "--report", str(d / "r.json")]) == 0
        text = capsys.readouterr().out
        assert "q=20 n_min=15 folds=10 criterion=delta_icon" in text
        assert "ICON" in text and "leaves" in text and "<- beta*" in text
        assert json.loads((d / "r.json").read_text())["icon"] > 0.5
        assert main(["fit-tree", "--data", str(train), "--out", str(d / "b.json"), "--seed", "5"]) == 0
        assert (d / "a.json").read_bytes() == (d / "b.json").read_bytes()

    def test_predict_matches_in_process(self, files, capsys):
        d, train, new = files
        main(["fit-tree", "--data", str(train), "--out", str(d / "t.json"), "--seed", "1"])
        assert main(["predict", "--model", str(d / "t.json"), "--histories", str(new), "--times", "0,0.5,1,2",
                     "--out", str(d / "p.csv"), "--hazard"]) == 0
        rows = read_rows(d / "p.csv")
        assert list(rows[0]) == ["id", "t", "survival", "hazard"] and len(rows) == 24
        tree = load_model(d / "t.json")
        ref = predict_survival(tree, read_long_csv_paths(new), [0, 0.5, 1, 2])
        got = np.array([float(r["survival"]) for r in rows]).reshape(6, 4)
        assert np.array_equal(got, ref)
        assert np.all(got[:, 0] == 1.0) and np.all(np.diff(got, axis=1) <= 0)

    def test_forest_header_and_single_tree_reduction(self, files, capsys):
        d, train, new = files
        assert main(["fit-forest", "--data", str(train), "--out", str(d / "f.json"), "--seed", "2", "--B", "3"]) == 0
        assert "B=3" in capsys.readouterr().out
        main(["fit-tree", "--data", str(train), "--out", str(d / "t.json"), "--seed", "2", "--n-min", "15"])
        main(["fit-forest", "--data", str(train), "--out", str(d / "f1.json"), "--seed", "2", "--B", "1",
              "--m", "2", "--resample", "none"])
        times = "0,0.3,0.7,1.5"
        main(["predict", "--model", str(d / "f1.json"), "--histories", str(new), "--times", times,
              "--out", str(d / "pf.csv")])
        # the unpruned tree of the full data
        from rocsurv.tree import grow

        td = transform(read_long_csv(train), uncensored_quantile_grid(read_long_csv(train), 20))
        ref = predict_survival(grow(td), read_long_csv_paths(new), [0, 0.3, 0.7, 1.5])
        got = np.array([float(r["survival"]) for r in read_rows(d / "pf.csv")]).reshape(6, 4)
        assert np.allclose(got, ref, rtol=0, atol=1e-12)

    def test_forest_default_b(self, files, capsys, monkeypatch):
        d, train, _ = files
        import rocsurv.cli as cli

        seen = {}

        def fake_fit(tdata, policy, B, m, *a, **k):
            seen["B"], seen["m"] = B, m
            raise RuntimeError("stop here")

        monkeypatch.setattr(cli, "fit_forest", fake_fit)
        assert main(["fit-forest", "--data", str(train), "--out", str(d / "f.json"), "--seed", "2"]) == 3
        assert "B=500" in capsys.readouterr().out and seen == {"B": 500, "m": 2}
        assert not (d / "f.json").exists()

    def test_dimension_mismatch_names_p(self, files, capsys):
        d, train, _ = files
        main(["fit-tree", "--data", str(train), "--out", str(d / "t.json"), "--seed", "1"])
        other = d / "wide.csv"
        write_long_csv(make_data(5, p=3), other)
        assert main(["predict", "--model", str(d / "t.json"), "--histories", str(other), "--times", "1"]) == 2
        assert "p=2" in capsys.readouterr().err

    @pytest.mark.xfail(strict=True, reason="maximizing mean held-out ICON rarely keeps the root on noise; see the "
                                           "decisions ledger")
    def test_noise_input_gives_root(self, tmp_path):
        rng = np.random.default_rng(8)
        write_long_csv(Dataset.from_arrays(rng.exponential(size=100), np.ones(100, int), rng.random((100, 5))),
                       tmp_path / "noise.csv")
        main(["fit-tree", "--data", str(tmp_path / "noise.csv"), "--out", str(tmp_path / "m.json"), "--seed", "0"])
        assert load_model(tmp_path / "m.json").n_leaves == 1


class TestConfigAndErrors:
    def test_missing_seed_is_usage_error(self, files, capsys):
        d, train, _ = files
        assert main(["fit-tree", "--data", str(train), "--out", str(d / "x.json")]) == 1
        assert "seed" in capsys.readouterr().err

    def test_bad_flag(self, capsys):
        assert main(["fit-tree", "--bogus"]) == 1
        assert main([]) == 1

    def test_missing_file_is_data_error(self, tmp_path):
        assert main(["fit-tree", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path / "m.json"),
                     "--seed", "1"]) == 2

    def test_malformed_history_is_data_error(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("id,tstart,tstop,status,z1\n1,0,2,0,1\n1,3,5,1,1\n")
        assert main(["fit-tree", "--data", str(p), "--out", str(tmp_path / "m.json"), "--seed", "1"]) == 2

    def test_config_file_and_override(self, files, capsys):
        d, train, _ = files
        cfg = d / "cfg.json"
        cfg.write_text(json.dumps({"schema": "rocsurv.config/1", "data": str(train), "out": str(d / "m.json"),
                                   "seed": 4, "folds": 3, "n_min": 20}))
        assert main(["fit-tree", "--config", str(cfg), "--folds", "4"]) == 0
        out = capsys.readouterr().out
        assert "folds=4" in out and "n_min=20" in out

    def test_config_unknown_key(self, files, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"sed": 1}))
        assert main(["fit-tree", "--config", str(cfg)]) == 1

    def test_config_schema_checked(self):
        with pytest.raises(UsageError):
            RunConfig(schema="rocsurv.config/0", seed=1).check("benchmark")

    def test_config_ranges(self):
        with pytest.raises(UsageError):
            RunConfig(seed=1, B=0).check("benchmark")
        with pytest.raises(UsageError):
            RunConfig(seed=1, scenario=["IX"]).check("benchmark")
        RunConfig(seed=1).check("benchmark")

    def test_policy(self):
        assert RunConfig(bandwidth="node_adaptive", bandwidth_c=0.5).policy == BandwidthPolicy("node_adaptive", 0.5)


class TestSimulateAndEval:
    def test_simulate_deterministic(self, tmp_path, capsys):
        args = ["simulate", "--scenario", "VI", "--n", "40", "--censoring", "0.25", "--seed", "3"]
        assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
        assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert read_long_csv(tmp_path / "a.csv").p == 20

    def test_simulate_single_cell_only(self, tmp_path):
        assert main(["simulate", "--scenario", "I,II", "--seed", "1", "--out", str(tmp_path / "x.csv")]) == 1

    def test_eval_icon_of_model_predictions(self, files, capsys):
        d, train, _ = files
        main(["fit-tree", "--data", str(train), "--out", str(d / "t.json"), "--seed", "1"])
        g = uncensored_quantile_grid(read_long_csv(train), 20)
        times = ",".join(repr(float(t)) for t in g.times)
        main(["predict", "--model", str(d / "t.json"), "--histories", str(train), "--times", times, "--hazard",
              "--out", str(d / "p.csv")])
        capsys.readouterr()
        assert main(["eval-icon", "--data", str(train), "--predictions", str(d / "p.csv"),
                     "--report", str(d / "e.json")]) == 0
        value = float(capsys.readouterr().out.split()[1])
        assert 0.5 < value <= 1
        assert json.loads((d / "e.json").read_text())["icon"] == pytest.approx(value, abs=1e-6)

    def test_eval_icon_missing_subject(self, files, tmp_path):
        d, train, _ = files
        p = tmp_path / "p.csv"
        p.write_text("id,t,survival\n0,1.0,0.5\n")
        assert main(["eval-icon", "--data", str(train), "--predictions", str(p)]) == 2

    def test_external_icon_constant_marker(self):
        data = make_data(60, seed=4)
        g = uncensored_quantile_grid(data, 10)
        h = BandwidthPolicy().global_bandwidth(data)
        value, con = external_icon(data, g, np.zeros((60, g.q)), h)
        assert value == pytest.approx(0.5, abs=1e-12) and np.allclose(con[~np.isnan(con)], 0.5, atol=1e-12)


class TestBenchmark:
    small = dict(sizes=(60,), replicates=1, B=5, folds=3, n_new=40, n_points=50)

    def test_reproducible_single_value(self):
        cfg = BenchmarkConfig(**self.small)
        a = run_replicate(cfg, "I", 60, 0.0, 0)
        b = run_replicate(cfg, "I", 60, 0.0, 0)
        assert [r.IAE for r in a] == [r.IAE for r in b]
        assert [r.method for r in a] == ["tree", "forest"] and all(r.error is None for r in a)

    def test_both_criteria_labels(self):
        cfg = BenchmarkConfig(methods=("tree",), criteria=("delta_icon", "global_icon"), **self.small)
        recs = run_replicate(cfg, "II", 60, 0.0, 0)
        assert [r.method for r in recs] == ["tree", "tree-global_icon"]
        assert method_label("forest", "global_icon") == "forest-global_icon"

    def test_failures_recorded_and_run_continues(self, monkeypatch):
        def broken(*a, **k):
            raise FloatingPointError("boom")

        monkeypatch.setattr(bench, "fit_forest", broken)
        cfg = BenchmarkConfig(**{**self.small, "replicates": 2})
        report = run_benchmark(cfg)
        assert len(report.records) == 4 and report.failures == 2
        assert np.isnan(report.values("I", 60, 0.0, "forest")).all()
        assert np.isfinite(report.values("I", 60, 0.0, "tree")).all()
        assert report.failure_rate == 0.5

    def test_cli_exit_on_many_failures(self, monkeypatch, tmp_path, capsys):
        monkeypatch.setattr(bench, "fit_forest", lambda *a, **k: (_ for _ in ()).throw(FloatingPointError("x")))
        code = main(["benchmark", "--scenario", "I", "--n", "60", "--replicates", "1", "--B", "3", "--folds", "3",
                     "--seed", "0", "--out", str(tmp_path / "b.csv")])
        assert code == 3
        rows = read_rows(tmp_path / "b.csv")
        assert [r["method"] for r in rows] == ["tree", "forest"] and rows[1]["IAE"] == "nan"

    def test_cli_report(self, tmp_path, capsys):
        assert main(["benchmark", "--scenario", "I", "--n", "60", "--replicates", "1", "--B", "3", "--folds", "3",
                     "--methods", "forest", "--seed", "0", "--out", str(tmp_path / "b.csv")]) == 0
        out = capsys.readouterr().out
        assert "mean IAE x 1000" in out
        rows = read_rows(tmp_path / "b.csv")
        assert list(rows[0]) == ["scenario", "n", "censoring", "method", "replicate", "IAE"]
        assert 0 < float(rows[0]["IAE"]) < 1

    def test_summary(self):
        r = BenchmarkReport([bench.BenchmarkRecord("I", 10, 0.0, "tree", 0, 0.05),
                             bench.BenchmarkRecord("I", 10, 0.0, "tree", 1, math.nan, "err")])
        assert r.summary() == [("I", 10, 0.0, "tree", pytest.approx(50.0), 1)]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            BenchmarkConfig(scenarios=("X",))
        with pytest.raises(ValueError):
            BenchmarkConfig(methods=("svm",))
