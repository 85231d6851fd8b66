#!/usr/bin/env python3
"""
Benchmark harness - Monte Carlo replications of paired estimator
comparisons with scaled KL / scaled MSE metrics, aggregated into a
summary table and written as CSV + JSON
"""
import json
import logging
import os
import time
from dataclasses import dataclass, field
from enum import Enum, auto
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from .config import DEFAULT_REPLICATIONS, RESULTS_SCHEMA_VERSION
from .core import Dataset, EnumerableModel, UnnormalizedModel
from .errors import ConfigError, InfiniteKL, SdrmeError
from .estimators import EstimatorSpec, build_plugin, fit_estimator
from .models import (MisspecifiedPoissonTruth, PoissonModel, build_model, default_aux,
                     misspecified_truth_pmf, sample_discrete_exact, sample_from_pmf, sample_gengamma)
from .optimize import FitConfig

logger = logging.getLogger("sdrme.bench")


class Metric(Enum):
    SCALED_KL = auto()
    SCALED_MSE = auto()


class TruthScheme(Enum):
    FIXED = auto()          # theta_star from the manifest
    REDRAW = auto()         # new random theta_star every replication
    MISSPECIFIED = auto()   # fixed non-model truth (Poisson only)


class TrialStatus(Enum):
    OK = "ok"
    INFINITE_KL = "infinite_kl"
    FAILED = "failed"


@dataclass
class ExperimentSpec:
    name: str
    model: str
    estimators: List[EstimatorSpec]
    sample_sizes: List[int]
    replications: int
    seed: int = 0
    metric: Metric = Metric.SCALED_KL
    truth: TruthScheme = TruthScheme.FIXED
    theta_star: Optional[List[float]] = None
    model_params: Dict[str, Any] = field(default_factory=dict)
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.replications < 2:
            raise ConfigError(f"replication count must be >= 2, got {self.replications}", field="replications")
        if not self.sample_sizes or any(n < 1 for n in self.sample_sizes):
            raise ConfigError("sample sizes must be positive", field="sample_sizes")
        if list(self.sample_sizes) != sorted(set(self.sample_sizes)):
            raise ConfigError("sample sizes must be strictly ascending", field="sample_sizes")
        if not self.estimators:
            raise ConfigError("at least one estimator is required", field="estimators")
        names = [e.name for e in self.estimators]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate estimator names {names}", field="estimators")
        model = self.build_model()
        if self.truth is TruthScheme.FIXED:
            if self.theta_star is None or len(self.theta_star) != model.n_params:
                raise ConfigError(f"{self.model} needs theta_star with {model.n_params} entries",
                                  field="theta_star")
        if self.truth is TruthScheme.REDRAW and not hasattr(model, "random_theta"):
            raise ConfigError(f"{self.model} has no random truth scheme", field="truth")
        if self.truth is TruthScheme.MISSPECIFIED and not isinstance(model, PoissonModel):
            raise ConfigError("the misspecified truth is defined for the Poisson model only", field="truth")
        if self.metric is Metric.SCALED_KL and not isinstance(model, EnumerableModel):
            raise ConfigError("scaled KL needs an enumerable model; use scaled_mse", field="metric")
        if self.metric is Metric.SCALED_MSE and self.truth is TruthScheme.MISSPECIFIED:
            raise ConfigError("scaled MSE needs a parametric truth", field="metric")

    def build_model(self) -> UnnormalizedModel:
        return build_model(self.model, self.model_params)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "model": self.model,
            "model_params": dict(self.model_params),
            "estimators": [e.to_dict() for e in self.estimators],
            "sample_sizes": list(self.sample_sizes),
            "replications": self.replications,
            "seed": self.seed,
            "metric": self.metric.name.lower(),
            "truth": self.truth.name.lower(),
            "theta_star": self.theta_star,
            "fit": self.fit.to_dict(),
        }


@dataclass
class TrialResult:
    experiment: str
    estimator: str
    n: int
    replication: int
    data_digest: str
    status: TrialStatus
    metric: str
    value: float = float("nan")
    converged: bool = False
    iterations: int = 0
    grad_norm: float = float("nan")
    loss: float = float("nan")
    theta_hat: str = ""
    error: str = ""
    wall_time: float = 0.0

    def to_dict(self, timing: bool = False) -> Dict[str, Any]:
        row = {
            "experiment": self.experiment,
            "estimator": self.estimator,
            "n": self.n,
            "replication": self.replication,
            "data_digest": self.data_digest,
            "status": self.status.value,
            "metric": self.metric,
            "value": self.value,
            "converged": self.converged,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "loss": self.loss,
            "theta_hat": self.theta_hat,
            "error": self.error,
        }
        if timing:
            row["wall_time"] = self.wall_time
        return row


@dataclass
class SummaryTable:
    spec: ExperimentSpec
    trials: List[TrialResult]
    summary: pd.DataFrame

    @property
    def failed_trials(self) -> int:
        return sum(t.status is TrialStatus.FAILED for t in self.trials)

    def trials_frame(self, timing: bool = False) -> pd.DataFrame:
        return pd.DataFrame([t.to_dict(timing) for t in self.trials])

    def row(self, estimator: str, n: int) -> pd.Series:
        match = self.summary[(self.summary["estimator"] == estimator) & (self.summary["n"] == n)]
        return match.iloc[0]


def exact_kl_discrete(truth: np.ndarray, fitted_log_pmf: np.ndarray) -> float:
    """sum_x truth(x) [log truth(x) - log fitted(x)] over the truth's support"""
    truth = np.asarray(truth, dtype=float)
    fitted_log_pmf = np.asarray(fitted_log_pmf, dtype=float)
    support = truth > 0
    if np.any(~np.isfinite(fitted_log_pmf[support])):
        raise InfiniteKL("fitted distribution puts zero mass on a point of the truth's support")
    kl = float(np.sum(truth[support] * (np.log(truth[support]) - fitted_log_pmf[support])))
    return max(kl, 0.0)


def fitted_log_pmf(model: EnumerableModel, theta: np.ndarray) -> np.ndarray:
    """log of the exactly normalized fitted pmf over the enumerated space"""
    return np.concatenate([model.log_p(chunk, theta) for chunk in model.iter_points()]) \
        - model.exact_log_normalizer(theta)


def scaled_mse(theta_hat, theta_star, n: int) -> float:
    """n ||theta_hat - theta_star||^2"""
    theta_hat = np.asarray(theta_hat, dtype=float).reshape(-1)
    theta_star = np.asarray(theta_star, dtype=float).reshape(-1)
    if theta_hat.shape != theta_star.shape:
        raise ConfigError("theta_hat and theta_star differ in dimension")
    diff = theta_hat - theta_star
    return float(n * diff @ diff)


def trial_seeds(seed: int, size_index: int, replication: int) -> Dict[str, np.random.SeedSequence]:
    """Independent child streams for one (sample size, replication) cell"""
    root = np.random.SeedSequence(seed, spawn_key=(size_index, replication))
    truth, data, plugin, aux = root.spawn(4)
    return {"truth": truth, "data": data, "plugin": plugin, "aux": aux}


def _draw(spec: ExperimentSpec, model: UnnormalizedModel, n: int,
          seeds: Dict[str, np.random.SeedSequence]) -> Tuple[Optional[np.ndarray], Optional[np.ndarray], Dataset]:
    """(theta_star, truth pmf over the enumerated space, dataset)"""
    if spec.truth is TruthScheme.MISSPECIFIED:
        truth: MisspecifiedPoissonTruth = misspecified_truth_pmf(model.x_max)
        return None, truth.pmf, sample_from_pmf(truth.points, truth.pmf, n, np.random.default_rng(seeds["data"]))
    if spec.truth is TruthScheme.REDRAW:
        theta_star = model.random_theta(np.random.default_rng(seeds["truth"]))
    else:
        theta_star = np.asarray(spec.theta_star, dtype=float)
    data_rng = np.random.default_rng(seeds["data"])
    if isinstance(model, EnumerableModel):
        return theta_star, model.pmf(theta_star), sample_discrete_exact(model, theta_star, n, data_rng)
    return theta_star, None, sample_gengamma(theta_star[0], theta_star[1], n, data_rng)


def run_trial(spec: ExperimentSpec, size_index: int, replication: int) -> List[TrialResult]:
    """One replication at one sample size: every estimator on the same dataset"""
    n = spec.sample_sizes[size_index]
    seeds = trial_seeds(spec.seed, size_index, replication)
    model = spec.build_model()
    metric = spec.metric.name.lower()
    theta_star, truth_pmf, data = _draw(spec, model, n, seeds)
    digest = data.digest()
    plugins: Dict[Tuple, Any] = {}
    aux = None
    results = []

    for est in spec.estimators:
        start = time.perf_counter()
        try:
            eta = None
            if est.needs_plugin:
                key = (est.density, est.bandwidth, est.kernel_order)
                if key not in plugins:
                    plugins[key] = build_plugin(est, model, data, np.random.default_rng(seeds["plugin"]))
                eta = plugins[key]
            aux_sample = None
            if est.needs_aux:
                aux = aux or default_aux(model, data)
                m = max(1, int(round(est.aux_ratio * n)))
                aux_sample = aux.sample(m, np.random.default_rng(seeds["aux"]))
            fit = fit_estimator(est, model, data, spec.fit, eta=eta, aux=aux, aux_sample=aux_sample)
            wall = time.perf_counter() - start
            if data.digest() != digest:
                raise SdrmeError("dataset changed during a fit")
            if spec.metric is Metric.SCALED_KL:
                value = n * exact_kl_discrete(truth_pmf, fitted_log_pmf(model, fit.theta_hat))
            else:
                value = scaled_mse(fit.theta_hat, theta_star, n)
            results.append(TrialResult(spec.name, est.name, n, replication, digest, TrialStatus.OK, metric,
                                       value, fit.converged, fit.iterations, fit.grad_norm, fit.loss,
                                       json.dumps(fit.theta_hat.tolist()), "", wall))
        except InfiniteKL as e:
            results.append(TrialResult(spec.name, est.name, n, replication, digest, TrialStatus.INFINITE_KL,
                                       metric, error=str(e), wall_time=time.perf_counter() - start))
        except Exception as e:
            logger.warning(f"{spec.name}: {est.name} failed at n={n}, replication {replication}: {e}")
            results.append(TrialResult(spec.name, est.name, n, replication, digest, TrialStatus.FAILED,
                                       metric, error=f"{type(e).__name__}: {e}",
                                       wall_time=time.perf_counter() - start))
    return results


def summarize(spec: ExperimentSpec, trials: List[TrialResult]) -> pd.DataFrame:
    """Monte Carlo mean and SD per (estimator, n) over replications; infinite-KL trials counted apart"""
    frame = pd.DataFrame([t.to_dict(timing=True) for t in trials])
    rows = []
    for est in spec.estimators:
        for n in spec.sample_sizes:
            cell = frame[(frame["estimator"] == est.name) & (frame["n"] == n)]
            ok = cell[cell["status"] == TrialStatus.OK.value]
            values = ok["value"].sort_values().to_numpy()
            rows.append({
                "estimator": est.name,
                "n": n,
                "mean": float(np.mean(values)) if len(values) else float("nan"),
                "std": float(np.std(values, ddof=1)) if len(values) > 1 else float("nan"),
                "ok": int(len(ok)),
                "infinite_kl": int((cell["status"] == TrialStatus.INFINITE_KL.value).sum()),
                "failed": int((cell["status"] == TrialStatus.FAILED.value).sum()),
                "not_converged": int((~ok["converged"].astype(bool)).sum()),
                "median_time": float(cell["wall_time"].median()) if len(cell) else float("nan"),
            })
    return pd.DataFrame(rows)


def run_experiment(spec: ExperimentSpec, jobs: int = 1, progress: bool = False) -> SummaryTable:
    """Run every (sample size, replication) cell; results do not depend on `jobs`"""
    cells = [(i, r) for i in range(len(spec.sample_sizes)) for r in range(spec.replications)]
    logger.info(f"{spec.name}: {len(spec.estimators)} estimators, sizes {spec.sample_sizes}, "
                f"{spec.replications} replications, seed {spec.seed}")
    start = time.perf_counter()
    iterator = tqdm(cells, desc=spec.name, disable=not progress)
    per_cell = Parallel(n_jobs=jobs)(delayed(run_trial)(spec, i, r) for i, r in iterator)
    trials = [t for cell in per_cell for t in cell]
    summary = summarize(spec, trials)
    failed = sum(t.status is TrialStatus.FAILED for t in trials)
    logger.info(f"{spec.name}: finished {len(trials)} trials in {time.perf_counter() - start:.1f}s "
                f"({failed} failed)")
    return SummaryTable(spec, trials, summary)


def default_replications(model: str, truth: TruthScheme) -> int:
    key = "poisson-misspecified" if truth is TruthScheme.MISSPECIFIED else model
    return DEFAULT_REPLICATIONS.get(key, 20)


def _json_safe(value):
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def write_results(table: SummaryTable, output_dir: str, manifest: Optional[Dict[str, Any]] = None) -> Dict[str, str]:
    """trials.csv (no timing, reproducible byte for byte), timings.csv and summary.json"""
    os.makedirs(output_dir, exist_ok=True)
    paths = {
        "trials": os.path.join(output_dir, "trials.csv"),
        "timings": os.path.join(output_dir, "timings.csv"),
        "summary": os.path.join(output_dir, "summary.json"),
    }
    trials = table.trials_frame(timing=True)
    trials.drop(columns=["wall_time"]).to_csv(paths["trials"], index=False, float_format="%.12g")
    trials[["experiment", "estimator", "n", "replication", "wall_time"]].to_csv(paths["timings"], index=False)

    records = [{k: _json_safe(v) for k, v in row.items()} for row in table.summary.to_dict(orient="records")]
    summary = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "experiment": table.spec.to_dict(),
        "manifest": manifest,
        "failed_trials": table.failed_trials,
        "summary": records,
    }
    with open(paths["summary"], "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    logger.info(f"Results written to {output_dir}")
    return paths
