import json
import subprocess
import sys

import numpy as np
import pytest

from bmms.cli import main, read_csv, read_vector, write_csv


def _read(path):
    return read_csv(path)[1]


@pytest.fixture
def sim(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--seed", "1", "--out", str(out), "--set", "n_out=20"]) == 0
    return out


def _fit(tmp_path, sim, name="fit", extra=(), config=None):
    out = tmp_path / name
    args = ["fit", "--seed", "3", "--out", str(out),
            "--set", f"x={sim / 'X.csv'}", "--set", f"y={sim / 'y.csv'}"]
    for kv in extra:
        args += ["--set", kv]
    if config:
        args += ["--config", str(config)]
    return main(args), out


class TestSimulate:
    def test_defaults(self, sim):
        assert _read(sim / "X.csv").shape == (60, 128)
        assert _read(sim / "y.csv").shape == (60, 1)
        assert _read(sim / "beta_true.csv").shape == (128, 1)
        assert (sim / "X.csv").read_text().startswith("x1,x2,")

    def test_p1(self, tmp_path):
        assert main(["simulate", "--seed", "0", "--out", str(tmp_path),
                     "--set", "p=1", "--set", "n_out=0"]) == 0
        assert _read(tmp_path / "X.csv").shape == (60, 1)
        assert not (tmp_path / "X_out.csv").exists()

    def test_byte_identical(self, tmp_path, sim):
        again = tmp_path / "again"
        main(["simulate", "--seed", "1", "--out", str(again), "--set", "n_out=20"])
        for f in ["X.csv", "y.csv", "beta_true.csv", "X_out.csv", "y_out.csv"]:
            assert (sim / f).read_bytes() == (again / f).read_bytes()

    def test_seed_required(self, tmp_path, capsys):
        assert main(["simulate", "--out", str(tmp_path)]) == 1
        assert "seed" in capsys.readouterr().err

    def test_probit(self, tmp_path):
        main(["simulate", "--seed", "0", "--out", str(tmp_path), "--probit"])
        assert set(np.unique(_read(tmp_path / "y.csv"))) <= {0.0, 1.0}


class TestFit:
    def test_changepoint_three_scales(self, tmp_path, sim):
        code, out = _fit(tmp_path, sim, extra=["modules=changepoint", "pieces=1,2,4", "T=60",
                                               "burn_in=20", f"beta_true={sim / 'beta_true.csv'}"])
        assert code == 0
        rep = json.loads((out / "summary.json").read_text())
        assert len(rep["scales"]) == 3 and len(rep["totals"]) == 3
        assert all(len(s["mean"]) == 128 for s in rep["scales"])
        svg = (out / "decomposition.svg").read_text()
        for title in ["scale 1", "scale 2", "scale 3", "total"]:
            assert f">{title}<" in svg
        for j in (1, 2, 3):
            assert _read(out / f"draws_scale_{j}.csv").shape == (60, 129)
        assert np.all(np.diff(rep["rss_ladder"]) <= 0)
        assert "beta_mse" in rep

    def test_flat_single_level_is_ols(self, tmp_path):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((30, 5))
        y = X @ rng.standard_normal(5) + rng.standard_normal(30)
        write_csv(tmp_path / "X.csv", [f"x{i}" for i in range(5)], X)
        write_csv(tmp_path / "y.csv", ["y"], y[:, None])
        code, out = _fit(tmp_path, tmp_path, extra=["prior=flat", "T=20", "burn_in=0"])
        assert code == 0
        ols = np.linalg.lstsq(X, y, rcond=None)[0]
        np.testing.assert_allclose(read_vector(out / "coefficients.csv"), ols, atol=1e-8)

    def test_conjugate_ladder_from_config(self, tmp_path, sim):
        cfg = tmp_path / "fit.ini"
        # flat priors need p <= n, so use the first 32 of the 128 columns
        cfg.write_text("modules = conjugate\nsizes = 1, 2, 4, 8, 16, 32\n"
                       "prior = flat  # sequential least squares\nT = 10\nburn_in = 0\n")
        X = _read(sim / "X.csv")[:, :32]
        write_csv(tmp_path / "X32.csv", [f"x{i}" for i in range(32)], X)
        code, out = _fit(tmp_path, sim, extra=[f"x={tmp_path / 'X32.csv'}"], config=cfg)
        assert code == 0
        rep = json.loads((out / "summary.json").read_text())
        assert len(rep["scales"]) == 6
        assert np.all(np.diff(rep["rss_ladder"]) <= 0)

    def test_probit_block(self, tmp_path):
        main(["simulate", "--seed", "4", "--out", str(tmp_path / "s"), "--probit",
              "--set", "p=8", "--set", "n=80"])
        code, out = _fit(tmp_path, tmp_path / "s",
                         extra=["modules=conjugate", "sizes=2,8", "T=50", "burn_in=10"])
        assert code == 0
        rep = json.loads((out / "summary.json").read_text())
        assert "classification" not in rep
        main(["fit", "--seed", "3", "--out", str(out), "--probit", "--no-figures",
              "--set", f"x={tmp_path / 's' / 'X.csv'}", "--set", f"y={tmp_path / 's' / 'y.csv'}",
              "--set", "sizes=2,8", "--set", "T=50", "--set", "burn_in=10"])
        rep = json.loads((out / "summary.json").read_text())
        assert 0.5 < rep["classification"]["accuracy"] <= 1
        assert 0.5 < rep["classification"]["auc"] <= 1
        assert "accuracy" in (out / "summary.txt").read_text()

    def test_reproducible_bytes(self, tmp_path, sim):
        extra = ["modules=changepoint", "pieces=1,2", "T=30", "burn_in=5"]
        _, a = _fit(tmp_path, sim, "a", extra)
        _, b = _fit(tmp_path, sim, "b", extra)
        files = sorted(p.name for p in a.iterdir())
        assert "decomposition.svg" in files
        for f in files:
            assert (a / f).read_bytes() == (b / f).read_bytes(), f

    def test_parallel_chains_match_serial(self, tmp_path, sim, monkeypatch):
        extra = ["modules=changepoint", "pieces=1,2", "T=20", "burn_in=0", "chains=2"]
        monkeypatch.setenv("BMMS_THREADS", "1")
        _, a = _fit(tmp_path, sim, "a", extra)
        monkeypatch.setenv("BMMS_THREADS", "2")
        _, b = _fit(tmp_path, sim, "b", extra)
        assert (a / "sigma2.csv").read_bytes() == (b / "sigma2.csv").read_bytes()
        assert _read(a / "sigma2.csv").shape == (40, 3)

    def test_malformed_csv(self, tmp_path, sim, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("y\n1.0\n2.0\noops\n")
        code, _ = _fit(tmp_path, sim, extra=[f"y={bad}"])
        assert code == 1
        assert "bad.csv:4" in capsys.readouterr().err

    def test_dimension_mismatch(self, tmp_path, sim, capsys):
        short = tmp_path / "short.csv"
        write_csv(short, ["y"], np.ones((5, 1)))
        code, _ = _fit(tmp_path, sim, extra=[f"y={short}"])
        assert code == 1

    def test_missing_input(self, tmp_path, sim, capsys):
        code, _ = _fit(tmp_path, sim, extra=[f"y={tmp_path / 'nope.csv'}"])
        assert code == 2
        assert "nope.csv" in capsys.readouterr().err

    def test_bad_config_value(self, tmp_path, sim):
        code, _ = _fit(tmp_path, sim, extra=["T=many"])
        assert code == 1


class TestPredict:
    def _fake_fit(self, path, beta, probit):
        path.mkdir()
        write_csv(path / "coefficients.csv", ["beta"], np.asarray(beta)[:, None])
        (path / "summary.json").write_text(json.dumps({"probit": probit}))

    def test_zero_chain_probit(self, tmp_path):
        self._fake_fit(tmp_path / "f", np.zeros(3), True)
        write_csv(tmp_path / "X.csv", ["a", "b", "c"], np.random.default_rng(0).standard_normal((7, 3)))
        assert main(["predict", "--out", str(tmp_path / "f"), "--set", f"x={tmp_path / 'X.csv'}"]) == 0
        pred = _read(tmp_path / "f" / "predictions.csv")
        np.testing.assert_array_equal(pred[:, 1], 0.5)
        np.testing.assert_array_equal(pred[:, 2], 0.0)

    def test_separated_auc(self, tmp_path):
        self._fake_fit(tmp_path / "f", np.array([1.0]), True)
        write_csv(tmp_path / "X.csv", ["x"], np.array([[-2.0], [-1.0], [1.0], [3.0]]))
        write_csv(tmp_path / "y.csv", ["y"], np.array([[0.0], [0.0], [1.0], [1.0]]))
        main(["predict", "--out", str(tmp_path / "f"), "--set", f"x={tmp_path / 'X.csv'}",
              "--set", f"y={tmp_path / 'y.csv'}"])
        m = json.loads((tmp_path / "f" / "prediction_metrics.json").read_text())
        assert m["auc"] == 1.0 and m["accuracy"] == 1.0

    def test_linear_exact(self, tmp_path):
        beta = np.array([0.1, -2.5, 1 / 3])
        self._fake_fit(tmp_path / "f", beta, False)
        X = np.random.default_rng(1).standard_normal((9, 3))
        write_csv(tmp_path / "X.csv", ["a", "b", "c"], X)
        main(["predict", "--out", str(tmp_path / "f"), "--set", f"x={tmp_path / 'X.csv'}"])
        np.testing.assert_array_equal(_read(tmp_path / "f" / "predictions.csv")[:, 0], X @ beta)

    def test_column_mismatch(self, tmp_path):
        self._fake_fit(tmp_path / "f", np.zeros(3), False)
        write_csv(tmp_path / "X.csv", ["a", "b"], np.ones((2, 2)))
        assert main(["predict", "--out", str(tmp_path / "f"), "--set", f"x={tmp_path / 'X.csv'}"]) == 1

    def test_missing_fit(self, tmp_path, capsys):
        assert main(["predict", "--out", str(tmp_path / "none"), "--set", "x=X.csv"]) == 2
        assert "summary.json" in capsys.readouterr().err


class TestSummarize:
    def test_perfect_recovery_and_ladder(self, tmp_path):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((40, 4))
        y = X @ np.array([1.0, 1.0, -1.0, -1.0])
        write_csv(tmp_path / "X.csv", list("abcd"), X)
        write_csv(tmp_path / "y.csv", ["y"], y[:, None])
        code, out = _fit(tmp_path, tmp_path, extra=["prior=flat", "sizes=1,2,4", "T=5",
                                                   "burn_in=0", "sigma2=1"])
        assert code == 0
        assert main(["summarize", "--out", str(out),
                     "--set", f"beta_true={out / 'coefficients.csv'}"]) == 0
        rows = dict((r.split(",")[0], float(r.split(",")[1]))
                    for r in (out / "metrics.csv").read_text().splitlines()[1:])
        assert rows["beta_mse"] == 0
        rss = [rows[f"rss_level_{j}"] for j in range(4)]
        assert all(b <= a for a, b in zip(rss, rss[1:]))
        assert "beta_mse" in (out / "metrics.txt").read_text()

    def test_missing_artifact(self, tmp_path, capsys):
        assert main(["summarize", "--out", str(tmp_path)]) == 2
        assert str(tmp_path / "summary.json") in capsys.readouterr().err


def test_csv_round_trip(tmp_path):
    v = np.random.default_rng(0).standard_normal((20, 3)) * 10.0 ** np.arange(-5, 10, 5)
    write_csv(tmp_path / "v.csv", ["a", "b", "c"], v)
    np.testing.assert_array_equal(_read(tmp_path / "v.csv"), v)


def test_usage_error_exit_code(tmp_path):
    r = subprocess.run([sys.executable, "-m", "bmms", "transmogrify"], capture_output=True,
                       text=True)
    assert r.returncode == 1
    r = subprocess.run([sys.executable, "-m", "bmms", "summarize", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 2
