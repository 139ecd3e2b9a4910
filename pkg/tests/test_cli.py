import json
import os

import pytest

from bandplan.cli import main


@pytest.fixture()
def market_file(tmp_path):
    doc = {
        "operators": [
            {"id": 1, "access": "licensed", "mu_theta": 1.0, "sigma_theta": 0.4,
             "revenue_slope": 1.0, "revenue_cv": 0.4, "rho": 0.6, "omega": 0.9,
             "mer_fraction": 0.2},
            {"id": 2, "access": "licensed", "mu_theta": 0.9, "sigma_theta": 0.5,
             "revenue_slope": 1.1, "revenue_cv": 0.3, "rho": 0.5, "omega": 0.85,
             "mer_fraction": 0.3},
            {"id": 3, "access": "unlicensed", "mu_theta": 0.8, "sigma_theta": 0.45,
             "revenue_slope": 0.95, "revenue_cv": 0.5, "rho": 0.7, "omega": 0.9,
             "mer_fraction": 0.1},
        ],
        "market": {"m": 3, "p": 1, "t_slots": 52, "d_total": 2.2, "phi": 1,
                   "alpha_l": 0.8, "alpha_u": 0.9, "osa": "overlay"},
    }
    path = tmp_path / "market.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture()
def spec_file(tmp_path):
    doc = {"n_licensed": 2, "n_unlicensed": 1, "n_markets": 2, "seed": 5}
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(doc))
    return path


FAST = ["--rmin", "1024", "--rmax", "2048"]


def run_twice(argv_builder, tmp_path):
    out1 = tmp_path / "run1.out"
    out2 = tmp_path / "run2.out"
    assert main(argv_builder(out1)) == 0
    assert main(argv_builder(out2)) == 0
    return out1.read_bytes(), out2.read_bytes()


class TestGen:
    def test_writes_markets_and_is_deterministic(self, spec_file, tmp_path):
        a, b = run_twice(
            lambda out: ["gen", "--spec", str(spec_file), "--out", str(out)],
            tmp_path)
        assert a == b
        doc = json.loads(a)
        assert len(doc["markets"]) == 2
        assert doc["spec"]["seed"] == 5

    def test_seed_override(self, spec_file, tmp_path):
        out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
        main(["gen", "--spec", str(spec_file), "--out", str(out1)])
        main(["gen", "--spec", str(spec_file), "--seed", "6", "--out", str(out2)])
        assert out1.read_bytes() != out2.read_bytes()


class TestSolve:
    def test_output_and_thread_independence(self, market_file, tmp_path):
        def build(threads):
            def argv(out):
                return ["solve", "--scenario", str(market_file), "--out", str(out),
                        "--mmax", "3", "--threads", str(threads), *FAST]
            return argv

        a, b = run_twice(build(1), tmp_path)
        assert a == b
        c, _ = run_twice(build(3), tmp_path)
        assert a == c
        doc = json.loads(a)
        assert {"m_star", "p_star", "u_star", "grid"} <= set(doc)


class TestStage2:
    def test_override_and_determinism(self, market_file, tmp_path):
        a, b = run_twice(
            lambda out: ["stage2", "--scenario", str(market_file), "--m", "2",
                         "--p", "1", "--out", str(out), *FAST],
            tmp_path)
        assert a == b
        doc = json.loads(a)
        assert set(doc) == {"s_l", "s_u", "confused_at_convergence", "trace"}


class TestEstimate:
    def test_estimates_document_shape(self, market_file, tmp_path):
        out = tmp_path / "est.json"
        assert main(["estimate", "--scenario", str(market_file), "--sl", "1,2",
                     "--su", "3", "--out", str(out), *FAST]) == 0
        doc = json.loads(out.read_text())
        assert doc["samples_used"] >= 1024
        assert set(doc["u_op"]) == {"1", "2", "3"}
        assert set(doc["r_lc"]) == {"1", "2"}

    def test_defaults_to_all_candidates(self, market_file, tmp_path):
        out = tmp_path / "est.json"
        assert main(["estimate", "--scenario", str(market_file),
                     "--out", str(out), *FAST]) == 0
        doc = json.loads(out.read_text())
        assert set(doc["u_op"]) == {"1", "2", "3"}


class TestBenchmark:
    def test_rows_and_cdf_emitted(self, spec_file, tmp_path):
        out = tmp_path / "bench.csv"
        assert main(["benchmark", "--spec", str(spec_file), "--mode", "fixed-p",
                     "--mmax", "3", "--out", str(out), *FAST]) == 0
        header = out.read_text().splitlines()[0]
        assert header == "market_index,u_opt,u_subopt,delta_u_pct,osa,phi"
        cdf = tmp_path / "bench_cdf.csv"
        lines = cdf.read_text().splitlines()
        assert lines[0] == "value,cumulative_probability"
        assert len(lines) == 3

    def test_markets_file_input(self, spec_file, tmp_path):
        markets = tmp_path / "markets.json"
        assert main(["gen", "--spec", str(spec_file), "--out", str(markets)]) == 0
        out = tmp_path / "bench.csv"
        assert main(["benchmark", "--markets", str(markets), "--mode", "fixed-m",
                     "--mmax", "3", "--out", str(out), *FAST]) == 0
        assert len(out.read_text().splitlines()) == 3


class TestSweep:
    def test_alpha_joint(self, market_file, tmp_path):
        out = tmp_path / "sweep.csv"
        assert main(["sweep", "--scenario", str(market_file), "--kind",
                     "alpha-joint", "--grid", "0.5,0.9", "--mmax", "2",
                     "--out", str(out), *FAST]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "alpha,m_star,p_star,u_star"
        assert len(lines) == 3


class TestErrorsAndEnv:
    def test_missing_file_is_reported(self, tmp_path, capsys):
        rc = main(["solve", "--scenario", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path / "out.json")])
        assert rc == 2
        assert "error" in capsys.readouterr().err

    def test_env_defaults_apply(self, market_file, tmp_path, monkeypatch):
        monkeypatch.setenv("BANDPLAN_RMIN", "1024")
        monkeypatch.setenv("BANDPLAN_RMAX", "2048")
        monkeypatch.setenv("BANDPLAN_SEED", "123")
        out_env = tmp_path / "env.json"
        assert main(["estimate", "--scenario", str(market_file),
                     "--out", str(out_env)]) == 0
        monkeypatch.delenv("BANDPLAN_RMIN")
        monkeypatch.delenv("BANDPLAN_RMAX")
        monkeypatch.delenv("BANDPLAN_SEED")
        out_flag = tmp_path / "flag.json"
        assert main(["estimate", "--scenario", str(market_file), "--seed", "123",
                     "--out", str(out_flag), *FAST]) == 0
        assert out_env.read_bytes() == out_flag.read_bytes()
