import csv
import json
import math

import numpy as np
import pytest

from mfcov import bench, cli
from mfcov.allocation import closed_form_moments_gaussian
from mfcov.exceptions import ConfigError
from mfcov.io import load_samples, read_json, read_results_csv, save_samples
from mfcov.models import APPENDIX_SIGMA, gaussian_preset
from mfcov.spd import spd_pow


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def gaussian_moments():
    return closed_form_moments_gaussian(APPENDIX_SIGMA, [s * np.eye(4) for s in (0.1, 0.5, 1.0)]).to_dict()


# -- config validation and exit codes ----------------------------------------------------


def test_unknown_key_is_config_error(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": {"kind": "gaussian_preset"}, "budgetz": [15]})
    assert run_cli("bench", "--config", cfg) == 2
    assert "budgetz" in capsys.readouterr().err


def test_field_level_messages():
    with pytest.raises(ConfigError, match="trials"):
        bench.ExperimentConfig.from_dict({"trials": 0})
    with pytest.raises(ConfigError, match="estimators"):
        bench.ExperimentConfig.from_dict({"estimators": ["lemf", "magic"]})
    with pytest.raises(ConfigError, match="model"):
        bench.ExperimentConfig.from_dict({"model": {"kind": "heat", "grid": [8]}})
    with pytest.raises(ConfigError, match="t"):
        bench.ExperimentConfig.from_dict({"t": 2.0})
    with pytest.raises(ConfigError, match="seed"):
        bench.ExperimentConfig().with_overrides(seed=-1)


def test_bad_json_and_missing_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run_cli("pilot", "--config", bad) == 2
    assert run_cli("pilot", "--config", tmp_path / "nope.json") == 4
    assert "I/O error" in capsys.readouterr().err


def test_missing_bench_fields(tmp_path):
    cfg = write_config(tmp_path, {"model": {"kind": "gaussian_preset"}})
    assert run_cli("bench", "--config", cfg) == 2
    assert run_cli("plan", "--config", cfg) == 2


# -- pilot ---------------------------------------------------------------------------------


def test_pilot_deterministic_and_accurate(tmp_path):
    cfg = write_config(tmp_path, {"model": {"kind": "gaussian_preset"}, "pilot_size": 100000, "root_seed": 3})
    assert run_cli("pilot", "--config", cfg, "--out", tmp_path / "a.json") == 0
    assert run_cli("pilot", "--config", cfg, "--out", tmp_path / "b.json") == 0
    a = (tmp_path / "a.json").read_bytes()
    assert a == (tmp_path / "b.json").read_bytes()
    data = json.loads(a)
    exact = gaussian_moments()
    np.testing.assert_allclose(data["sigma"], exact["sigma"], rtol=0.05)
    np.testing.assert_allclose(data["rho"][1:-1], exact["rho"][1:-1], rtol=0.05)
    assert data["pilot_cost"] == pytest.approx(100000 * 1.0111)
    assert run_cli("pilot", "--config", cfg, "--seed", 4, "--out", tmp_path / "c.json") == 0
    assert (tmp_path / "c.json").read_bytes() != a


def test_pilot_size_one(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": {"kind": "gaussian_preset"}, "pilot_size": 1})
    assert run_cli("pilot", "--config", cfg) == 2
    assert "fewer than 2 paired events" in capsys.readouterr().err


# -- plan ----------------------------------------------------------------------------------


def test_plan_appendix(tmp_path, capsys):
    cfg = write_config(tmp_path, {"moments": gaussian_moments(), "costs": [1, 1e-2, 1e-3, 1e-4], "budget": 15})
    assert run_cli("plan", "--config", cfg) == 0
    report = json.loads(capsys.readouterr().out)
    assert np.all(np.abs(np.array(report["plan"]["n"]) - [12, 199, 505, 2073]) <= 2)
    assert report["benefit"]["holds"] and report["predicted_speedup"] > 1


def test_plan_zero_correlation(tmp_path, capsys):
    m = {"sigma": [1.0, 1.0], "rho": [1.0, 0.0, 0.0]}
    cfg = write_config(tmp_path, {"moments": m, "costs": [1.0, 0.1], "budget": 10})
    assert run_cli("plan", "--config", cfg) == 0
    assert json.loads(capsys.readouterr().out)["plan"]["n"] == [10, 0]


def test_plan_budget_below_c0(tmp_path, capsys):
    cfg = write_config(tmp_path, {"moments": gaussian_moments(), "costs": [1, 1e-2, 1e-3, 1e-4], "budget": 0.5})
    assert run_cli("plan", "--config", cfg) == 2
    assert "budget cannot afford one high-fidelity sample" in capsys.readouterr().err


# -- estimate ------------------------------------------------------------------------------


@pytest.fixture
def sample_dir(tmp_path):
    model = gaussian_preset()
    save_samples(tmp_path / "s", model.sample_hierarchy([12, 199, 505, 2073], 9), model.costs.costs)
    return tmp_path / "s"


def estimate(tmp_path, capsys, **cfg):
    path = write_config(tmp_path, cfg, name="est.json")
    rc = run_cli("estimate", "--config", path)
    out = capsys.readouterr()
    return rc, (json.loads(out.out) if rc == 0 else out.err)


def test_estimate_emf_zero_alpha_equals_hf(tmp_path, capsys, sample_dir):
    rc, emf = estimate(tmp_path, capsys, samples=str(sample_dir), estimator="emf", alphas=[0, 0, 0])
    assert rc == 0
    rc, hf = estimate(tmp_path, capsys, samples=str(sample_dir), estimator="hf_only")
    assert rc == 0
    assert json.dumps(emf["matrix"]) == json.dumps(hf["matrix"])


def test_estimate_lemf_spd_and_frechet(tmp_path, capsys, sample_dir):
    path = write_config(tmp_path, {"samples": str(sample_dir), "moments": gaussian_moments()}, name="e.json")
    assert run_cli("estimate", "--config", path, "--verify-frechet") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["estimator"] == "lemf" and out["spd"] and out["lambda_min"] > 0
    assert out["frechet_check"]["ok"] and out["frechet_check"]["relative_difference"] <= 1e-10


def test_estimate_lemf_too_few_samples_is_numerical(tmp_path, capsys):
    model = gaussian_preset()
    save_samples(tmp_path / "s", model.sample_hierarchy([3, 50, 100, 200], 1))
    rc, err = estimate(tmp_path, capsys, samples=str(tmp_path / "s"), alphas=[1.0, 0.5, 0.2])
    assert rc == 3
    assert "level" in err


def find_indefinite_emf(tmp_path):
    """Stored samples whose EMF estimate is indefinite."""
    model = gaussian_preset()
    alphas = bench.optimal_coefficients(closed_form_moments_gaussian(model.Sigma, model.Gammas))
    for seed in range(200):
        h = model.sample_hierarchy([5, 20, 60, 200], seed)
        if np.linalg.eigvalsh(bench.emf_estimate(h, alphas))[0] < 0:
            save_samples(tmp_path / "ind", h)
            return tmp_path / "ind", alphas
    raise AssertionError("no indefinite EMF instance found")


def test_estimate_truncated_on_indefinite(tmp_path, capsys):
    where, alphas = find_indefinite_emf(tmp_path)
    rc, emf = estimate(tmp_path, capsys, samples=str(where), estimator="emf", alphas=alphas.tolist())
    assert rc == 0 and not emf["spd"]
    rc, tr = estimate(tmp_path, capsys, samples=str(where), estimator="truncated_emf", alphas=alphas.tolist())
    assert rc == 0 and tr["lambda_min"] == 1e-16 and tr["spd"]
    rc, le = estimate(tmp_path, capsys, samples=str(where), estimator="lemf", alphas=alphas.tolist())
    assert rc == 0 and le["spd"]


def test_estimate_requires_alphas(tmp_path, capsys, sample_dir):
    rc, err = estimate(tmp_path, capsys, samples=str(sample_dir), estimator="emf")
    assert rc == 2 and "alphas" in err


def test_estimate_from_model_and_plan(tmp_path, capsys):
    plan_cfg = write_config(
        tmp_path, {"moments": gaussian_moments(), "costs": [1, 1e-2, 1e-3, 1e-4], "budget": 15}, name="p.json"
    )
    assert run_cli("plan", "--config", plan_cfg, "--out", tmp_path / "plan.json") == 0
    rc, out = estimate(tmp_path, capsys, model={"kind": "gaussian_preset"}, plan=str(tmp_path / "plan.json"))
    assert rc == 0 and out["spd"]
    assert out["counts"] == read_json(tmp_path / "plan.json")["plan"]["n"]


# -- bench ----------------------------------------------------------------------------------


def bench_config(tmp_path, **extra):
    data = {
        "model": {"kind": "gaussian_preset"},
        "moments": "closed_form",
        "budgets": [15, 30],
        "trials": 1,
        "root_seed": 5,
    }
    data.update(extra)
    return write_config(tmp_path, data, name="bench.json")


def test_bench_single_trial_row_count(tmp_path):
    cfg = bench_config(tmp_path)
    assert run_cli("bench", "--config", cfg, "--out", tmp_path / "r.csv") == 0
    rows = read_results_csv(tmp_path / "r.csv")
    assert len(rows) == 2 * 5
    assert [(r["budget"], r["estimator"]) for r in rows[:5]] == [(15.0, e) for e in bench.ESTIMATORS]
    assert all(math.isnan(r["wall_ms"]) for r in rows)
    with open(tmp_path / "r.summary.csv") as fh:
        summary = list(csv.DictReader(fh))
    assert len(summary) == 2 * 5 * 3


def test_bench_deterministic_and_parallel(tmp_path):
    cfg = bench_config(tmp_path, trials=4)
    assert run_cli("bench", "--config", cfg, "--out", tmp_path / "a.csv") == 0
    assert run_cli("bench", "--config", cfg, "--out", tmp_path / "b.csv") == 0
    par = bench_config(tmp_path, trials=4, workers=3)
    assert run_cli("bench", "--config", par, "--out", tmp_path / "c.csv") == 0
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()


def test_bench_equal_cost_and_indefinite_accounting(tmp_path):
    cfg = bench.load_config(bench_config(tmp_path, trials=30, budgets=[15, 40, 100]))
    result = bench.cmd_bench(cfg)
    for r in result.rows:
        assert abs(r.cost - r.budget) <= 1.0
        assert not r.failed
        if r.indefinite:
            assert r.estimator == "emf"
            assert r.d_logE == math.inf and r.d_aff == math.inf
        else:
            assert math.isfinite(r.d_logE)
    assert any(r.indefinite for r in result.rows)
    trunc = [r for r in result.rows if r.estimator == "truncated_emf"]
    assert all(r.lambda_min > 0 for r in trunc)


def test_bench_inf_tokens_in_csv(tmp_path):
    cfg = bench_config(tmp_path, trials=30, estimators=["emf"], budgets=[15])
    assert run_cli("bench", "--config", cfg, "--out", tmp_path / "r.csv") == 0
    lines = (tmp_path / "r.csv").read_text().splitlines()[1:]
    indefinite = [ln for ln in lines if float(ln.split(",")[6]) <= 0]
    assert indefinite and all(ln.split(",")[4:6] == ["inf", "inf"] for ln in indefinite)


def test_bench_heat_without_reference_is_config_error(tmp_path):
    cfg = write_config(tmp_path, {"model": {"kind": "heat", "grids": [64, 16]}, "budgets": [1e4]})
    assert run_cli("bench", "--config", cfg) == 2


def test_bench_heat_reference_cache(tmp_path):
    ref = {"kind": "lemf", "n": [200, 2000], "seed": 1, "cache": "ref.json"}
    data = {
        "model": {"kind": "heat", "grids": [64, 16]},
        "budgets": [2e4],
        "trials": 2,
        "mean_mode": "subset_mean",
        "pilot_size": 100,
        "min_hf_samples": 12,
        "reference": ref,
    }
    cfg = write_config(tmp_path, data)
    assert run_cli("bench", "--config", cfg, "--out", tmp_path / "a.csv") == 0
    cached = read_json(tmp_path / "ref.json")
    assert cached["recipe"]["n"] == [200, 2000]
    assert run_cli("bench", "--config", cfg, "--out", tmp_path / "b.csv") == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


# -- metric ---------------------------------------------------------------------------------


def metric_json_config(tmp_path, t, mu):
    rng = np.random.default_rng(0)
    covs = []
    for _ in range(2):
        A = rng.standard_normal((3, 3))
        covs.append({"matrix": (A @ A.T + np.eye(3)).tolist()})
    return write_config(tmp_path, {"covariances": covs, "mu": mu, "t": t}), covs


def test_metric_json_t_zero(tmp_path, capsys):
    cfg, covs = metric_json_config(tmp_path, 0.0, [1.0, 0.0, 0.0])
    assert run_cli("metric", "--config", cfg) == 0
    out = json.loads(capsys.readouterr().out)
    S = np.asarray(covs[0]["matrix"]) + np.asarray(covs[1]["matrix"])
    A = np.asarray(out["A"])
    assert np.linalg.norm(A - np.linalg.inv(S)) / np.linalg.norm(np.linalg.inv(S)) < 1e-10


def test_metric_json_zero_gap(tmp_path, capsys):
    cfg, covs = metric_json_config(tmp_path, 0.3, [0.0, 0.0, 0.0])
    assert run_cli("metric", "--config", cfg) == 0
    out = json.loads(capsys.readouterr().out)
    S = np.asarray(out["S"])
    np.testing.assert_allclose(out["D"], S)
    np.testing.assert_allclose(out["A"], spd_pow(S, 2 * 0.3 - 1), rtol=1e-10)


def test_metric_json_indefinite_is_numerical(tmp_path):
    covs = [{"matrix": [[1.0, 0.0], [0.0, -0.5]]}, {"matrix": [[1.0, 0.0], [0.0, 1.0]]}]
    cfg = write_config(tmp_path, {"covariances": covs, "mu": [1.0, 0.0]})
    assert run_cli("metric", "--config", cfg) == 3


def test_metric_pipeline(tmp_path):
    data = {"model": {"kind": "two_class"}, "trials": 10, "mean_mode": "subset_mean", "pilot_size": 500, "root_seed": 1}
    cfg = write_config(tmp_path, data)
    assert run_cli("metric", "--config", cfg, "--out", tmp_path / "m.csv") == 0
    with open(tmp_path / "m.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10 * 5
    for r in rows:
        if r["estimator"] != "emf":
            assert r["status"] == "ok"
        if r["status"] == "invalid_metric":
            assert float(r["lambda_min"]) <= 0 and r["mre"] == "nan"
    with open(tmp_path / "m.summary.csv") as fh:
        summary = {r["estimator"]: r for r in csv.DictReader(fh)}
    assert int(summary["lemf"]["valid"]) == 10


def test_metric_needs_two_class_model(tmp_path):
    cfg = write_config(tmp_path, {"model": {"kind": "gaussian_preset"}})
    assert run_cli("metric", "--config", cfg) == 2


def test_cli_requires_config():
    with pytest.raises(SystemExit) as info:
        cli.main(["bench"])
    assert info.value.code == 2
    with pytest.raises(SystemExit):
        cli.main(["fly", "--config", "x.json"])


def test_samples_written_by_cli_round_trip(sample_dir):
    h, costs = load_samples(sample_dir)
    assert h.counts == (12, 199, 505, 2073)
    np.testing.assert_array_equal(costs, [1.0, 1e-2, 1e-3, 1e-4])
