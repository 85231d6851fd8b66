#!/usr/bin/env python3
"""
Experiment manifests - JSON (or TOML) documents describing a benchmark
experiment or a single fit, with command-line overrides
"""
import copy
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from .bench import ExperimentSpec, Metric, TruthScheme, default_replications
from .errors import ConfigError
from .estimators import EstimatorSpec
from .optimize import FitConfig

logger = logging.getLogger("sdrme.manifest")

EXPERIMENT_KEYS = {
    "name", "model", "model_params", "truth", "theta_star", "metric", "sample_sizes",
    "replications", "seed", "estimators", "optimizer", "output_dir", "jobs", "fit",
}
REQUIRED_EXPERIMENT_KEYS = ("model", "estimators", "sample_sizes")
OPTIMIZER_KEYS = {"gtol", "max_iter", "method", "polish", "initial"}
FIT_KEYS = {"data", "model", "model_params", "estimator", "se", "output", "seed"}

OVERRIDE_ALIASES = {
    "n": "sample_sizes",
    "sizes": "sample_sizes",
    "reps": "replications",
}

SE_KINDS = ("efficient", "sandwich", "none")


def _strip_info(raw: Any) -> Any:
    """Drop '*_info' documentation keys at every level"""
    if isinstance(raw, dict):
        return {k: _strip_info(v) for k, v in raw.items() if not str(k).endswith("_info")}
    if isinstance(raw, list):
        return [_strip_info(v) for v in raw]
    return raw


def _reject_unknown(section: Dict[str, Any], allowed, path: str = ""):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(f"unknown key (allowed: {sorted(allowed)})", field=where)


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except ValueError:
        return text


@dataclass
class FitJob:
    """Single-dataset fit, from the manifest 'fit' section or the fit subcommand"""
    data: str
    model: str
    estimator: EstimatorSpec
    model_params: Dict[str, Any] = field(default_factory=dict)
    se: str = "efficient"
    output: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if self.se not in SE_KINDS:
            raise ConfigError(f"must be one of {SE_KINDS}, got '{self.se}'", field="fit.se")

    def to_dict(self) -> Dict[str, Any]:
        return {"data": self.data, "model": self.model, "model_params": dict(self.model_params),
                "estimator": self.estimator.to_dict(), "se": self.se, "output": self.output,
                "seed": self.seed}


@dataclass
class Manifest:
    raw: Dict[str, Any]
    source: Optional[str] = None

    @classmethod
    def load(cls, path: str) -> "Manifest":
        if not os.path.exists(path):
            raise ConfigError(f"manifest not found: {path}", field="manifest")
        try:
            if path.endswith(".toml"):
                import tomllib
                with open(path, "rb") as f:
                    raw = tomllib.load(f)
            else:
                with open(path) as f:
                    raw = json.load(f)
        except ImportError:
            raise ConfigError("TOML manifests need Python 3.11 or newer", field="manifest")
        except ValueError as e:
            raise ConfigError(f"cannot parse {path}: {e}", field="manifest")
        if not isinstance(raw, dict):
            raise ConfigError("top level must be a table", field="manifest")
        logger.debug(f"Loaded manifest {path}")
        return cls(_strip_info(raw), path)

    def with_overrides(self, overrides: List[str]) -> "Manifest":
        """Apply 'key=value' overrides; keys may be dotted paths or the aliases n/reps/sizes"""
        raw = copy.deepcopy(self.raw)
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"override '{item}' is not key=value", field="set")
            key, text = item.split("=", 1)
            key = key.strip()
            value = _parse_value(text.strip())
            key = OVERRIDE_ALIASES.get(key, key)
            if key == "sample_sizes" and not isinstance(value, list):
                value = [value]
            target = raw
            parts = key.split(".")
            if parts[0] == "fit" and "fit" not in raw:
                raise ConfigError("manifest has no fit section", field=key)
            for part in parts[:-1]:
                target = target.setdefault(part, {})
                if not isinstance(target, dict):
                    raise ConfigError("cannot override inside a non-table value", field=key)
            target[parts[-1]] = value
        return Manifest(raw, self.source)

    @property
    def is_fit_job(self) -> bool:
        return "fit" in self.raw

    @property
    def name(self) -> str:
        if "name" in self.raw:
            return str(self.raw["name"])
        if self.source:
            return os.path.splitext(os.path.basename(self.source))[0]
        return "experiment"

    def fit_config(self) -> FitConfig:
        section = self.raw.get("optimizer", {})
        if not isinstance(section, dict):
            raise ConfigError("must be a table", field="optimizer")
        _reject_unknown(section, OPTIMIZER_KEYS, "optimizer")
        seed = self.raw.get("seed", 0)
        if self.is_fit_job:
            seed = self.raw["fit"].get("seed", seed)
        return FitConfig(initial=section.get("initial"),
                         gtol=float(section.get("gtol", FitConfig.gtol)),
                         max_iter=int(section.get("max_iter", FitConfig.max_iter)),
                         optimizer=section.get("method", "quasi_newton"),
                         seed=int(seed),
                         polish=bool(section.get("polish", True)))

    def experiment(self) -> ExperimentSpec:
        raw = self.raw
        _reject_unknown(raw, EXPERIMENT_KEYS)
        for key in REQUIRED_EXPERIMENT_KEYS:
            if key not in raw:
                raise ConfigError("required key is missing", field=key)
        estimators = raw["estimators"]
        if not isinstance(estimators, list):
            raise ConfigError("must be a list", field="estimators")
        specs = [EstimatorSpec.parse(e, f"estimators[{i}]") for i, e in enumerate(estimators)]
        truth = self._enum(TruthScheme, raw.get("truth", "fixed"), "truth")
        metric = self._enum(Metric, raw.get("metric", "scaled_kl"), "metric")
        sizes = raw["sample_sizes"]
        if not isinstance(sizes, list) or not all(isinstance(n, int) for n in sizes):
            raise ConfigError("must be a list of integers", field="sample_sizes")
        replications = raw.get("replications", default_replications(str(raw["model"]), truth))
        return ExperimentSpec(
            name=self.name,
            model=str(raw["model"]),
            estimators=specs,
            sample_sizes=sizes,
            replications=int(replications),
            seed=int(raw.get("seed", 0)),
            metric=metric,
            truth=truth,
            theta_star=raw.get("theta_star"),
            model_params=dict(raw.get("model_params", {})),
            fit=self.fit_config(),
        )

    def fit_job(self) -> FitJob:
        section = self.raw.get("fit")
        if not isinstance(section, dict):
            raise ConfigError("must be a table", field="fit")
        _reject_unknown(self.raw, {"name", "fit", "optimizer", "output_dir", "jobs", "seed"})
        _reject_unknown(section, FIT_KEYS, "fit")
        for key in ("data", "model", "estimator"):
            if key not in section:
                raise ConfigError("required key is missing", field=f"fit.{key}")
        data = str(section["data"])
        if self.source and not os.path.isabs(data):
            data = os.path.join(os.path.dirname(os.path.abspath(self.source)), data)
        return FitJob(data=data, model=str(section["model"]),
                      estimator=EstimatorSpec.parse(section["estimator"], "fit.estimator"),
                      model_params=dict(section.get("model_params", {})),
                      se=str(section.get("se", "efficient")), output=section.get("output"),
                      seed=int(section.get("seed", self.raw.get("seed", 0))))

    @staticmethod
    def _enum(enum_cls, value: Any, path: str):
        try:
            return enum_cls[str(value).upper().replace("-", "_")]
        except KeyError:
            choices = [m.name.lower() for m in enum_cls]
            raise ConfigError(f"'{value}' is not one of {choices}", field=path)
