#!/usr/bin/env python3
"""
Command-line interface: run benchmark manifests, fit a single dataset,
and check generators for loss convexity

Exit codes: 0 success, 1 configuration or data error, 2 failed trials,
3 convexity not certified
"""
import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from . import __version__
from .asymptotics import efficient_se, sandwich_misspecified
from .bench import run_experiment, write_results
from .bregman import certify_convexity, generator_by_name
from .config import DEFAULT_JOBS, LOG_FILE, LOG_FORMAT, LOG_LEVEL, POISSON_X_MAX, get_output_dir
from .core import Dataset, ExtendedModel, Tau
from .errors import ConfigError, SdrmeError
from .estimators import EstimatorSpec, build_plugin, fit_estimator
from .manifest import FitJob, Manifest
from .models import build_model
from .optimize import FitConfig

logger = logging.getLogger("sdrme.cli")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAILED_TRIALS = 2
EXIT_NOT_CERTIFIED = 3


def setup_logging(level: str = LOG_LEVEL, log_file: Optional[str] = LOG_FILE):
    """Configure root logging once, for the entry point only"""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


def _write_json(payload: Dict[str, Any], path: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)


# run

def cmd_run(manifest_path: str, overrides: Optional[List[str]] = None, jobs: Optional[int] = None,
            output_dir: Optional[str] = None, progress: bool = True) -> int:
    """Run an experiment manifest (or its single-fit section)"""
    manifest = Manifest.load(manifest_path).with_overrides(overrides or [])
    if manifest.is_fit_job:
        return run_fit_job(manifest.fit_job(), manifest.fit_config())

    spec = manifest.experiment()
    jobs = jobs or int(manifest.raw.get("jobs", DEFAULT_JOBS))
    output_dir = output_dir or manifest.raw.get("output_dir") or os.path.join(get_output_dir(), spec.name)
    table = run_experiment(spec, jobs=jobs, progress=progress)
    write_results(table, output_dir, manifest.raw)
    print(table.summary.to_string(index=False))
    if table.failed_trials:
        logger.warning(f"{table.failed_trials} trial(s) failed; see {output_dir}/trials.csv")
        return EXIT_FAILED_TRIALS
    return EXIT_OK


# certify

def cmd_certify(generator: str) -> int:
    certificate = certify_convexity(generator_by_name(generator))
    print(certificate)
    return EXIT_OK if certificate.convex else EXIT_NOT_CERTIFIED


# fit

def load_data(path: str, point_dim: Optional[int] = None) -> np.ndarray:
    """One sample per line, comma-separated coordinates"""
    if not os.path.exists(path):
        raise ConfigError(f"data file not found: {path}", field="data")
    try:
        frame = pd.read_csv(path, header=None)
    except pd.errors.EmptyDataError:
        raise ConfigError("n >= 1 required", field="data")
    except pd.errors.ParserError as e:
        raise ConfigError(f"cannot parse {path}: {e}", field="data")
    if frame.isna().to_numpy().any():
        raise ConfigError("data file has missing or non-numeric entries", field="data")
    try:
        points = frame.to_numpy(dtype=float)
    except ValueError:
        raise ConfigError("data file has non-numeric entries", field="data")
    if point_dim is not None and points.shape[1] != point_dim:
        raise ConfigError(f"records have {points.shape[1]} columns, the model expects {point_dim}",
                          field="data")
    return points


def _poisson_params(params: Dict[str, Any], points: np.ndarray) -> Dict[str, Any]:
    """Extend the truncation so every observed count lies inside the support"""
    if "x_max" not in params:
        params = dict(params, x_max=max(POISSON_X_MAX, 2 * int(np.max(points)) + 10))
    return params


def _fitted_tau(model, result, data: Dataset, eta) -> Tau:
    """(c, theta) at the fit; c comes from the fit, the exact normalizer or the plug-in average"""
    theta = result.theta_hat
    if result.c_hat is not None:
        return Tau(result.c_hat, theta)
    if model.has_exact_normalizer:
        return Tau(model.exact_log_normalizer(theta), theta)
    log_w = model.log_p(data.points, theta) - eta.log_eval(data.points)
    return Tau(float(logsumexp(log_w) - np.log(data.n)), theta)


def run_fit_job(job: FitJob, cfg: Optional[FitConfig] = None) -> int:
    cfg = cfg or FitConfig(seed=job.seed)
    points = load_data(job.data)
    params = dict(job.model_params)
    if job.model.strip().lower() == "poisson":
        params = _poisson_params(params, points)
    model = build_model(job.model, params)
    if points.shape[1] != model.point_dim:
        raise ConfigError(f"records have {points.shape[1]} columns, {model.name} expects {model.point_dim}",
                          field="data")
    data = Dataset.from_points(points, model.space)

    rng = np.random.default_rng(job.seed)
    eta = build_plugin(job.estimator, model, data, rng) if job.estimator.needs_plugin else None
    result = fit_estimator(job.estimator, model, data, cfg, eta=eta, rng=rng)

    se = None
    if job.se != "none":
        if eta is None:
            eta = build_plugin(EstimatorSpec.parse("s-kl"), model, data, rng)
        tau = _fitted_tau(model, result, data, eta)
        extended = ExtendedModel(model)
        if job.se == "efficient":
            se = efficient_se(extended, tau, data)
        else:
            se = sandwich_misspecified(extended, tau, data, eta).standard_errors

    payload = result.to_dict()
    payload.update(
        standard_errors=None if se is None else se.tolist(),
        se_kind=job.se,
        n=data.n,
        config={"job": dict(job.to_dict(), model_params=params), "optimizer": cfg.to_dict()},
        version=__version__,
    )
    payload["extra"] = dict(result.extra)

    print(f"theta_hat: {np.array2string(result.theta_hat, precision=6)}")
    if se is not None:
        print(f"standard errors ({job.se}): {np.array2string(se, precision=6)}")
    print(f"loss: {result.loss:.8g}  grad norm: {result.grad_norm:.3g}  "
          f"converged: {result.converged}  iterations: {result.iterations}")

    output = job.output or os.path.join(get_output_dir(), f"fit_{job.model}_{job.estimator.name}.json")
    _write_json(payload, output)
    logger.info(f"Fit written to {output}")
    return EXIT_OK


def _fit_job_from_args(args) -> FitJob:
    entry: Dict[str, Any] = {"name": args.estimator}
    for key in ("alpha", "beta", "gamma", "generator", "links", "density", "bandwidth", "aux_ratio"):
        value = getattr(args, key)
        if value is not None:
            entry[key] = value
    params = {}
    for item in args.model_param or []:
        if "=" not in item:
            raise ConfigError(f"'{item}' is not key=value", field="model_params")
        key, text = item.split("=", 1)
        try:
            params[key.strip()] = json.loads(text)
        except ValueError:
            params[key.strip()] = text
    return FitJob(data=args.datafile, model=args.model, estimator=EstimatorSpec.parse(entry, "estimator"),
                  model_params=params, se=args.se, output=args.output, seed=args.seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdrme",
        description="Self density-ratio matching estimators for unnormalized models")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=LOG_LEVEL, help="Logging level (default: %(default)s)")
    parser.add_argument("--log-file", default=LOG_FILE, help="Also log to this file")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run an experiment manifest")
    run.add_argument("--manifest", required=True, help="JSON or TOML manifest")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="Override a manifest key (dotted paths; n, reps and seed are shortcuts)")
    run.add_argument("--jobs", type=int, default=None, help="Parallel workers (default: manifest or cores)")
    run.add_argument("--output-dir", default=None, help="Results directory")
    run.add_argument("--no-progress", action="store_true", help="Hide the progress bar")

    certify = sub.add_parser("certify", help="Check a generator's convexity condition")
    certify.add_argument("generator", help="kl, chi, js, power:<m>")

    fit = sub.add_parser("fit", help="Fit one dataset")
    fit.add_argument("datafile", help="One sample per line, comma-separated coordinates")
    fit.add_argument("--model", required=True, help="poisson, rbm, flid or gengamma")
    fit.add_argument("--model-param", action="append", metavar="KEY=VALUE", help="Model parameter")
    fit.add_argument("--estimator", default="s-kl", help="s-<generator>, s-kl-profiled, ns-gamma, "
                                                         "nce, gnce-<generator>, mc-mle or mle")
    fit.add_argument("--generator", default=None)
    fit.add_argument("--links", default=None, help="one-identity, identity-one or 'a,b' powers")
    fit.add_argument("--alpha", type=float, default=None)
    fit.add_argument("--beta", type=float, default=None)
    fit.add_argument("--gamma", type=float, default=None)
    fit.add_argument("--aux-ratio", type=float, default=None)
    fit.add_argument("--density", default=None, help="auto, empirical, regularized or kde")
    fit.add_argument("--bandwidth", type=float, default=None, help="Fixed KDE bandwidth (default: CV)")
    fit.add_argument("--se", choices=["efficient", "sandwich", "none"], default="efficient")
    fit.add_argument("--output", default=None, help="JSON result path")
    fit.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level, args.log_file)

    try:
        if args.command == "run":
            return cmd_run(args.manifest, args.overrides, args.jobs, args.output_dir,
                           progress=not args.no_progress)
        if args.command == "certify":
            return cmd_certify(args.generator)
        return run_fit_job(_fit_job_from_args(args), FitConfig(seed=args.seed))
    except ConfigError as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SdrmeError, ValueError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
