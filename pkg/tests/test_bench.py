import json
import os

import numpy as np
import pytest
from scipy.special import rel_entr

import sdrme.bench as bench
from sdrme.bench import (ExperimentSpec, Metric, TrialStatus, TruthScheme, default_replications, exact_kl_discrete,
                         fitted_log_pmf, run_experiment, scaled_mse, trial_seeds, write_results)
from sdrme.errors import ConfigError, InfiniteKL
from sdrme.estimators import EstimatorSpec
from sdrme.models import PoissonModel

from conftest import LOG2

TRIALS_COLUMNS = ["experiment", "estimator", "n", "replication", "data_digest", "status", "metric", "value",
                  "converged", "iterations", "grad_norm", "loss", "theta_hat", "error"]
SUMMARY_ROW_KEYS = {"estimator", "n", "mean", "std", "ok", "infinite_kl", "failed", "not_converged", "median_time"}


def small_spec(**overrides):
    params = dict(name="small", model="poisson", estimators=[EstimatorSpec.parse("s-kl"), EstimatorSpec.parse("mle")],
                  sample_sizes=[50, 100], replications=3, seed=7, theta_star=[LOG2])
    params.update(overrides)
    return ExperimentSpec(**params)


def test_exact_kl_bernoulli():
    kl = exact_kl_discrete(np.array([0.5, 0.5]), np.log([0.25, 0.75]))
    assert kl == pytest.approx(0.14384, abs=1e-5)
    assert exact_kl_discrete(np.array([0.5, 0.5]), np.log([0.5, 0.5])) == 0.0


def test_exact_kl_support_handling():
    # zero-truth points do not contribute, even where the fit has no mass
    assert exact_kl_discrete(np.array([1.0, 0.0]), np.array([0.0, -np.inf])) == 0.0
    with pytest.raises(InfiniteKL):
        exact_kl_discrete(np.array([0.5, 0.5]), np.array([0.0, -np.inf]))


def test_exact_kl_nonnegative_on_random_pairs():
    rng = np.random.default_rng(14)
    for _ in range(200):
        size = int(rng.integers(2, 40))
        truth = rng.dirichlet(np.full(size, 0.3))
        truth[rng.random(size) < 0.2] = 0.0
        if truth.sum() == 0:
            continue
        truth /= truth.sum()
        fitted = rng.dirichlet(np.ones(size))
        kl = exact_kl_discrete(truth, np.log(fitted))
        assert kl >= 0.0
        assert kl == pytest.approx(np.sum(rel_entr(truth, fitted)), rel=1e-12, abs=1e-12)


def test_scaled_mse():
    assert scaled_mse([1.0, 2.0], [0.0, 0.0], 13) == pytest.approx(65.0)
    with pytest.raises(ConfigError):
        scaled_mse([1.0], [0.0, 0.0], 10)


def test_fitted_log_pmf_is_normalized():
    log_pmf = fitted_log_pmf(PoissonModel(60), np.array([LOG2]))
    assert np.exp(log_pmf).sum() == pytest.approx(1.0, abs=1e-12)


def test_trial_seeds_are_distinct_and_reproducible():
    a = trial_seeds(7, 0, 1)
    b = trial_seeds(7, 0, 1)
    c = trial_seeds(7, 1, 0)
    draw = lambda s: np.random.default_rng(s).integers(0, 2 ** 32, 4).tolist()
    assert draw(a["data"]) == draw(b["data"])
    assert draw(a["data"]) != draw(c["data"])
    assert draw(a["data"]) != draw(a["aux"])


def test_small_experiment_is_reproducible(tmp_path):
    first = run_experiment(small_spec())
    second = run_experiment(small_spec(), jobs=2)
    assert first.trials_frame().equals(second.trials_frame())
    paths_a = write_results(first, str(tmp_path / "a"))
    paths_b = write_results(second, str(tmp_path / "b"))
    with open(paths_a["trials"], "rb") as fa, open(paths_b["trials"], "rb") as fb:
        assert fa.read() == fb.read()


def test_small_experiment_results(tmp_path):
    table = run_experiment(small_spec())
    assert len(table.trials) == 2 * 2 * 3
    assert table.failed_trials == 0
    assert all(t.status is TrialStatus.OK for t in table.trials)
    # every estimator sees the same dataset in a replication
    frame = table.trials_frame()
    assert frame.groupby(["n", "replication"])["data_digest"].nunique().max() == 1
    row = table.row("mle", 100)
    assert row["ok"] == 3 and row["mean"] >= 0

    paths = write_results(table, str(tmp_path), manifest={"name": "small"})
    assert set(os.listdir(tmp_path)) == {"trials.csv", "timings.csv", "summary.json"}
    with open(paths["trials"]) as f:
        assert f.readline().strip().split(",") == TRIALS_COLUMNS
    with open(paths["timings"]) as f:
        assert f.readline().strip().split(",") == ["experiment", "estimator", "n", "replication", "wall_time"]
    with open(paths["summary"]) as f:
        summary = json.load(f)
    assert set(summary) == {"schema_version", "experiment", "manifest", "failed_trials", "summary"}
    assert set(summary["summary"][0]) == SUMMARY_ROW_KEYS
    assert summary["manifest"] == {"name": "small"}
    assert summary["experiment"]["estimators"][0]["name"] == "s-kl"
    assert len(summary["summary"]) == 4


def test_failed_trial_is_recorded(monkeypatch):
    real_fit = bench.fit_estimator

    def flaky(spec, *args, **kwargs):
        if spec.name == "mle":
            raise FloatingPointError("boom")
        return real_fit(spec, *args, **kwargs)

    monkeypatch.setattr(bench, "fit_estimator", flaky)
    table = run_experiment(small_spec(replications=2))
    assert table.failed_trials == 4
    failed = [t for t in table.trials if t.status is TrialStatus.FAILED]
    assert all(t.estimator == "mle" and "FloatingPointError" in t.error for t in failed)
    assert table.row("mle", 50)["failed"] == 2
    assert table.row("s-kl", 50)["ok"] == 2


def test_redraw_and_misspecified_truths():
    rbm = small_spec(model="rbm", model_params={"d_v": 3, "d_h": 1}, truth=TruthScheme.REDRAW, theta_star=None,
                     sample_sizes=[200], replications=2)
    table = run_experiment(rbm)
    assert table.failed_trials == 0

    missp = small_spec(truth=TruthScheme.MISSPECIFIED, theta_star=None, sample_sizes=[300], replications=2)
    table = run_experiment(missp)
    assert all(t.status is TrialStatus.OK for t in table.trials)
    assert all(t.value > 0 for t in table.trials)


def test_gengamma_uses_scaled_mse():
    spec = small_spec(model="gengamma", theta_star=[1.3, 1.3], metric=Metric.SCALED_MSE,
                      estimators=[EstimatorSpec.parse("mle")], sample_sizes=[200], replications=2)
    table = run_experiment(spec)
    assert all(t.metric == "scaled_mse" and t.status is TrialStatus.OK for t in table.trials)


@pytest.mark.parametrize("overrides, field", [
    ({"replications": 1}, "replications"),
    ({"sample_sizes": [100, 50]}, "sample_sizes"),
    ({"sample_sizes": [0]}, "sample_sizes"),
    ({"estimators": []}, "estimators"),
    ({"estimators": [EstimatorSpec.parse("mle"), EstimatorSpec.parse("mle")]}, "estimators"),
    ({"theta_star": None}, "theta_star"),
    ({"model": "gengamma", "theta_star": [1.3, 1.3]}, "metric"),
    ({"model": "rbm", "model_params": {"d_v": 3, "d_h": 1}, "truth": TruthScheme.MISSPECIFIED}, "truth"),
    ({"truth": TruthScheme.REDRAW}, "truth"),
])
def test_spec_validation(overrides, field):
    with pytest.raises(ConfigError) as info:
        small_spec(**overrides)
    assert info.value.field == field


def test_default_replications():
    assert default_replications("poisson", TruthScheme.FIXED) == 100
    assert default_replications("unknown", TruthScheme.FIXED) == 20
