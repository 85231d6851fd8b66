#!/usr/bin/env python3
"""
Estimators - self density-ratio matching (separable and ns-gamma), noise
contrastive estimation, Monte Carlo MLE and exact MLE, plus the registry
that maps estimator names to fitters
"""
import logging
from dataclasses import dataclass, fields
from enum import Enum, auto
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from .bregman import (GammaConfig, Generator, LinkPair, generator_by_name, ns_gamma_objective,
                      sdrme_separable_hessian, separable_objective, skl_objective,
                      skl_profiled_objective)
from .core import (Dataset, DensityEstimate, ExtendedModel, UnnormalizedModel, as_points,
                   tau_vector)
from .errors import ConfigError, NormalizerUnavailable, SupportViolation
from .models import AuxiliaryDistribution, default_aux
from .nonparam import EmpiricalPmf, KdeEstimate, RegularizedPmf
from .optimize import FitConfig, FitResult, Objective, minimize

logger = logging.getLogger("sdrme.estimators")


def _fit_config(cfg: Optional[FitConfig]) -> FitConfig:
    return FitConfig() if cfg is None else cfg


def initial_tau(model: ExtendedModel, data: Dataset, eta: DensityEstimate,
                cfg: FitConfig) -> np.ndarray:
    """theta_0 from the model default, c_0 = log (1/n) sum p(x_i; theta_0) / eta(x_i)"""
    if cfg.initial is not None:
        if len(cfg.initial) == model.n_params:
            return cfg.initial.copy()
        theta0 = cfg.initial
    else:
        theta0 = np.asarray(model.base.default_theta(cfg.rng()), dtype=float)
    log_w = model.base.log_p(data.points, theta0) - eta.log_eval(data.points)
    c0 = float(logsumexp(log_w) - np.log(data.n))
    return np.concatenate(([c0], theta0))


def initial_theta(model: UnnormalizedModel, cfg: FitConfig) -> np.ndarray:
    if cfg.initial is not None:
        return cfg.initial.copy()
    return np.asarray(model.default_theta(cfg.rng()), dtype=float)


def fit_sdrme_separable(model: ExtendedModel, data: Dataset, eta: DensityEstimate, f: Generator,
                        links: LinkPair, cfg: Optional[FitConfig] = None) -> FitResult:
    """tau_s = argmin (1/n) sum B_f{h1(w_i), h2(w_i)}"""
    cfg = _fit_config(cfg)
    f.validate()
    links.validate()
    objective = separable_objective(model, data, eta, f, links)
    hessian = lambda vec: sdrme_separable_hessian(model, vec, data, eta, f, links)
    return minimize(objective, initial_tau(model, data, eta, cfg), cfg, bounds=model.tau_bounds,
                    estimator=f"s-{f.name}", has_c=True, hessian=hessian)


def fit_skl(model: ExtendedModel, data: Dataset, eta: DensityEstimate,
            cfg: Optional[FitConfig] = None) -> FitResult:
    """s-KL in its -log q + w form; same minimizer as the separable KL loss"""
    cfg = _fit_config(cfg)
    f, links = Generator.kl(), LinkPair.one_identity()
    hessian = lambda vec: sdrme_separable_hessian(model, vec, data, eta, f, links)
    return minimize(skl_objective(model, data, eta), initial_tau(model, data, eta, cfg), cfg,
                    bounds=model.tau_bounds, estimator="s-kl", has_c=True, hessian=hessian)


def fit_skl_profiled(model: UnnormalizedModel, data: Dataset, eta: DensityEstimate,
                     cfg: Optional[FitConfig] = None) -> FitResult:
    """s-KL with c profiled out; c_hat = log mean p / eta is reported in `extra`"""
    cfg = _fit_config(cfg)
    result = minimize(skl_profiled_objective(model, data, eta), initial_theta(model, cfg), cfg,
                      bounds=model.theta_bounds, estimator="s-kl-profiled")
    log_w = model.log_p(data.points, result.params) - eta.log_eval(data.points)
    result.extra["c_hat"] = float(logsumexp(log_w) - np.log(data.n))
    return result


def fit_sdrme_gamma(model: UnnormalizedModel, data: Dataset, eta: DensityEstimate, cfg: GammaConfig,
                    fit: Optional[FitConfig] = None) -> FitResult:
    """theta_ns-gamma = argmin of the gamma-divergence loss; no c parameter"""
    fit = _fit_config(fit)
    result = minimize(ns_gamma_objective(model, data, eta, cfg), initial_theta(model, fit), fit,
                      bounds=model.theta_bounds, estimator="ns-gamma")
    result.extra["gamma_config"] = cfg.to_dict()
    return result


def _aux_sample(aux: AuxiliaryDistribution, n: int, aux_ratio: float, cfg: FitConfig,
                aux_sample: Optional[np.ndarray]) -> np.ndarray:
    if aux_sample is not None:
        return as_points(aux_sample)
    if not aux_ratio > 0:
        raise ConfigError(f"auxiliary ratio must be positive, got {aux_ratio}", field="aux_ratio")
    m = max(1, int(round(aux_ratio * n)))
    return as_points(aux.sample(m, cfg.rng()))


def _check_support(aux: AuxiliaryDistribution, data: Dataset) -> np.ndarray:
    log_a = aux.log_density(data.points)
    if not np.all(np.isfinite(log_a)):
        bad = int(np.flatnonzero(~np.isfinite(log_a))[0])
        raise SupportViolation(f"auxiliary density vanishes at data point {data.points[bad].tolist()}")
    return log_a


def nce_objective(model: ExtendedModel, data: Dataset, aux: AuxiliaryDistribution,
                  y: np.ndarray, aux_ratio: Optional[float] = 1.0) -> Objective:
    """
    -(1/n) sum log[r/(r + k)](x_i) - (1/n) sum log[k/(r + k)](y_j), r = q/a, k = m/n.
    With k = 1 this is the logistic loss between data and noise.
    """
    X = data.points
    log_a_x = _check_support(aux, data)
    log_a_y = aux.log_density(y)
    log_k = np.log(len(y) / data.n) if aux_ratio is None else np.log(aux_ratio)

    def objective(tau: np.ndarray) -> Tuple[float, np.ndarray]:
        zx = model.log_q(X, tau) - log_a_x - log_k
        zy = model.log_q(y, tau) - log_a_y - log_k
        value = (np.sum(np.logaddexp(0.0, -zx)) + np.sum(np.logaddexp(0.0, zy))) / data.n
        grad = (-(1.0 - _sigmoid(zx)) @ model.grad_tau_log_q(X, tau)
                + _sigmoid(zy) @ model.grad_tau_log_q(y, tau)) / data.n
        return float(value), grad

    return objective


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -z))


def nce_loss(model: ExtendedModel, tau, data: Dataset, aux: AuxiliaryDistribution, y: np.ndarray,
             aux_ratio: float = 1.0) -> float:
    return nce_objective(model, data, aux, as_points(y), aux_ratio)(tau_vector(tau))[0]


def fit_nce(model: ExtendedModel, data: Dataset, aux: AuxiliaryDistribution, aux_ratio: float = 1.0,
            cfg: Optional[FitConfig] = None, aux_sample: Optional[np.ndarray] = None) -> FitResult:
    """Noise contrastive estimation with round(aux_ratio * n) auxiliary draws"""
    cfg = _fit_config(cfg)
    y = _aux_sample(aux, data.n, aux_ratio, cfg, aux_sample)
    objective = nce_objective(model, data, aux, y, aux_ratio if aux_sample is None else None)
    x0 = initial_tau(model, data, _AuxDensity(aux), cfg)
    result = minimize(objective, x0, cfg, bounds=model.tau_bounds, estimator="nce", has_c=True)
    result.extra["aux_size"] = len(y)
    return result


class _AuxDensity(DensityEstimate):
    """Auxiliary density as a plug-in, for initializing c"""

    def __init__(self, aux: AuxiliaryDistribution):
        self.aux = aux

    def raw(self, X):
        return np.exp(self.aux.log_density(X))


def generalized_nce_objective(model: ExtendedModel, data: Dataset, aux: AuxiliaryDistribution,
                              y: np.ndarray, f: Generator) -> Objective:
    """(1/m) sum [r f'(r) - f(r)](y_j) - (1/n) sum f'(r(x_i)), r = q/a"""
    X = data.points
    log_a_x = _check_support(aux, data)
    log_a_y = aux.log_density(y)

    def objective(tau: np.ndarray) -> Tuple[float, np.ndarray]:
        rx = np.exp(model.log_q(X, tau) - log_a_x)
        ry = np.exp(model.log_q(y, tau) - log_a_y)
        value = np.mean(ry * f.d1(ry) - f.f(ry)) - np.mean(f.d1(rx))
        grad = ((ry * ry * f.d2(ry)) @ model.grad_tau_log_q(y, tau) / len(ry)
                - (rx * f.d2(rx)) @ model.grad_tau_log_q(X, tau) / len(rx))
        return float(value), grad

    return objective


def generalized_nce_loss(model: ExtendedModel, tau, data: Dataset, aux: AuxiliaryDistribution,
                         y: np.ndarray, f: Generator) -> float:
    return generalized_nce_objective(model, data, aux, as_points(y), f)(tau_vector(tau))[0]


def fit_generalized_nce(model: ExtendedModel, data: Dataset, aux: AuxiliaryDistribution, f: Generator,
                        aux_ratio: float = 1.0, cfg: Optional[FitConfig] = None,
                        aux_sample: Optional[np.ndarray] = None) -> FitResult:
    cfg = _fit_config(cfg)
    y = _aux_sample(aux, data.n, aux_ratio, cfg, aux_sample)
    x0 = initial_tau(model, data, _AuxDensity(aux), cfg)
    result = minimize(generalized_nce_objective(model, data, aux, y, f), x0, cfg,
                      bounds=model.tau_bounds, estimator=f"gnce-{f.name}", has_c=True)
    result.extra["aux_size"] = len(y)
    return result


def mc_mle_objective(model: UnnormalizedModel, data: Dataset, aux: AuxiliaryDistribution,
                     y: np.ndarray) -> Objective:
    """-(1/n) sum log p(x_i) + log (1/m) sum p(y_j) / a(y_j)"""
    X = data.points
    log_a_y = aux.log_density(y)
    log_m = np.log(len(y))

    def objective(theta: np.ndarray) -> Tuple[float, np.ndarray]:
        log_r = model.log_p(y, theta) - log_a_y
        grad_x = model.grad_theta_log_p(X, theta)
        value = -np.mean(model.log_p(X, theta)) + logsumexp(log_r) - log_m
        grad = -grad_x.mean(axis=0) + softmax(log_r) @ model.grad_theta_log_p(y, theta)
        return float(value), grad

    return objective


def mc_mle_loss(model: UnnormalizedModel, theta, data: Dataset, aux: AuxiliaryDistribution,
                y: np.ndarray) -> float:
    return mc_mle_objective(model, data, aux, as_points(y))(np.asarray(theta, dtype=float))[0]


def fit_mc_mle(model: UnnormalizedModel, data: Dataset, aux: AuxiliaryDistribution,
               cfg: Optional[FitConfig] = None, aux_ratio: float = 1.0,
               aux_sample: Optional[np.ndarray] = None) -> FitResult:
    """Monte Carlo MLE with c profiled out; importance-sampled normalizer under a"""
    cfg = _fit_config(cfg)
    _check_support(aux, data)
    y = _aux_sample(aux, data.n, aux_ratio, cfg, aux_sample)
    result = minimize(mc_mle_objective(model, data, aux, y), initial_theta(model, cfg), cfg,
                      bounds=model.theta_bounds, estimator="mc-mle")
    log_r = model.log_p(y, result.params) - aux.log_density(y)
    result.extra["c_hat"] = float(logsumexp(log_r) - np.log(len(y)))
    result.extra["aux_size"] = len(y)
    return result


def mc_mle_extended_objective(model: ExtendedModel, data: Dataset, aux: AuxiliaryDistribution,
                              y: np.ndarray) -> Objective:
    """-(1/n) sum log r(x_i) + (1/m) sum r(y_j) over tau"""
    X = data.points
    log_a_x = _check_support(aux, data)
    log_a_y = aux.log_density(y)

    def objective(tau: np.ndarray) -> Tuple[float, np.ndarray]:
        ry = np.exp(model.log_q(y, tau) - log_a_y)
        value = -np.mean(model.log_q(X, tau) - log_a_x) + np.mean(ry)
        grad = -model.grad_tau_log_q(X, tau).mean(axis=0) + ry @ model.grad_tau_log_q(y, tau) / len(ry)
        return float(value), grad

    return objective


def mc_mle_extended_loss(model: ExtendedModel, tau, data: Dataset, aux: AuxiliaryDistribution,
                         y: np.ndarray) -> float:
    return mc_mle_extended_objective(model, data, aux, as_points(y))(tau_vector(tau))[0]


def fit_mc_mle_extended(model: ExtendedModel, data: Dataset, aux: AuxiliaryDistribution,
                        cfg: Optional[FitConfig] = None, aux_ratio: float = 1.0,
                        aux_sample: Optional[np.ndarray] = None) -> FitResult:
    cfg = _fit_config(cfg)
    y = _aux_sample(aux, data.n, aux_ratio, cfg, aux_sample)
    x0 = initial_tau(model, data, _AuxDensity(aux), cfg)
    return minimize(mc_mle_extended_objective(model, data, aux, y), x0, cfg,
                    bounds=model.tau_bounds, estimator="mc-mle-extended", has_c=True)


def exact_mle_objective(model: UnnormalizedModel, data: Dataset) -> Objective:
    X = data.points

    def objective(theta: np.ndarray) -> Tuple[float, np.ndarray]:
        value = -np.mean(model.log_p(X, theta)) + model.exact_log_normalizer(theta)
        grad = -model.grad_theta_log_p(X, theta).mean(axis=0) + model.grad_exact_log_normalizer(theta)
        return float(value), grad

    return objective


def fit_exact_mle(model: UnnormalizedModel, data: Dataset, cfg: Optional[FitConfig] = None) -> FitResult:
    """argmin -(1/n) sum [log p(x_i; theta) - log Z(theta)]"""
    if not model.has_exact_normalizer:
        raise NormalizerUnavailable(f"{model.name} has no exact normalizer; MLE is unavailable")
    cfg = _fit_config(cfg)
    return minimize(exact_mle_objective(model, data), initial_theta(model, cfg), cfg,
                    bounds=model.theta_bounds, estimator="mle")


# Estimator registry

class EstimatorKind(Enum):
    SEPARABLE = auto()
    SKL_PROFILED = auto()
    NS_GAMMA = auto()
    NCE = auto()
    GENERALIZED_NCE = auto()
    MC_MLE = auto()
    MLE = auto()


class Density(Enum):
    AUTO = auto()          # empirical pmf on enumerable spaces, KDE otherwise
    EMPIRICAL = auto()
    REGULARIZED = auto()
    KDE = auto()


@dataclass
class EstimatorSpec:
    """One estimator of an experiment, parsed from a manifest entry or CLI flags"""
    name: str
    kind: EstimatorKind
    generator: str = "kl"
    links: str = "one-identity"
    alpha: float = 0.01
    beta: float = -1.0
    gamma: float = 1.01
    aux_ratio: float = 1.0
    density: Density = Density.AUTO
    bandwidth: Optional[float] = None
    kernel_order: int = 6

    @classmethod
    def parse(cls, entry: Any, path: str = "estimators") -> "EstimatorSpec":
        """Accepts a bare name ('s-kl', 's-power:3', 'ns-gamma', 'nce', 'gnce-js', 'mc-mle', 'mle') or a dict"""
        if isinstance(entry, str):
            entry = {"name": entry}
        if not isinstance(entry, dict) or "name" not in entry:
            raise ConfigError("estimator entry needs a 'name'", field=path)
        known = {f.name for f in fields(cls)} - {"kind"}
        unknown = sorted(set(entry) - known)
        if unknown:
            raise ConfigError(f"unknown key(s) {unknown}", field=f"{path}.{unknown[0]}")
        params = dict(entry)
        name = str(params.pop("name")).strip().lower()
        if name.startswith("s-") and name != "s-kl-profiled":
            params.setdefault("generator", name[2:])
            kind = EstimatorKind.SEPARABLE
        elif name.startswith("gnce-"):
            params.setdefault("generator", name[5:])
            kind = EstimatorKind.GENERALIZED_NCE
        else:
            kinds = {"s-kl-profiled": EstimatorKind.SKL_PROFILED, "ns-gamma": EstimatorKind.NS_GAMMA,
                     "nce": EstimatorKind.NCE, "mc-mle": EstimatorKind.MC_MLE, "mle": EstimatorKind.MLE}
            if name not in kinds:
                raise ConfigError(f"unknown estimator '{name}'", field=f"{path}.name")
            kind = kinds[name]
        if isinstance(params.get("density"), str):
            try:
                params["density"] = Density[params["density"].upper()]
            except KeyError:
                raise ConfigError(f"unknown density '{params['density']}'", field=f"{path}.density")
        spec = cls(name=name, kind=kind, **params)
        spec.validate(path)
        return spec

    def validate(self, path: str = "estimators"):
        if self.kind in (EstimatorKind.SEPARABLE, EstimatorKind.GENERALIZED_NCE):
            self.generator_obj()
            LinkPair.parse(self.links)
        if self.kind is EstimatorKind.NS_GAMMA:
            try:
                self.gamma_config()
            except ConfigError as e:
                raise ConfigError(str(e).split(": ", 1)[-1], field=f"{path}.{e.field}")

    def generator_obj(self) -> Generator:
        return generator_by_name(self.generator)

    def gamma_config(self) -> GammaConfig:
        return GammaConfig(self.alpha, self.beta, self.gamma)

    @property
    def needs_plugin(self) -> bool:
        return self.kind in (EstimatorKind.SEPARABLE, EstimatorKind.SKL_PROFILED, EstimatorKind.NS_GAMMA)

    @property
    def needs_aux(self) -> bool:
        return self.kind in (EstimatorKind.NCE, EstimatorKind.GENERALIZED_NCE, EstimatorKind.MC_MLE)

    def to_dict(self) -> Dict[str, Any]:
        out = {"name": self.name}
        if self.kind in (EstimatorKind.SEPARABLE, EstimatorKind.GENERALIZED_NCE):
            out.update(generator=self.generator, links=self.links)
        if self.kind is EstimatorKind.NS_GAMMA:
            out.update(alpha=self.alpha, beta=self.beta, gamma=self.gamma)
        if self.needs_aux:
            out["aux_ratio"] = self.aux_ratio
        if self.needs_plugin:
            out.update(density=self.density.name.lower(), bandwidth=self.bandwidth,
                       kernel_order=self.kernel_order)
        return out


def build_plugin(spec: EstimatorSpec, model: UnnormalizedModel, data: Dataset,
                 rng: Optional[np.random.Generator] = None, n_jobs: int = 1) -> DensityEstimate:
    """Plug-in estimate eta_n requested by the estimator spec"""
    density = spec.density
    if density is Density.AUTO:
        density = Density.EMPIRICAL if model.space.is_enumerable else Density.KDE
    if density is Density.EMPIRICAL:
        return EmpiricalPmf(data)
    if density is Density.REGULARIZED:
        return RegularizedPmf.from_space(data, model.space, rng)
    return KdeEstimate(bandwidth=spec.bandwidth, kernel_order=spec.kernel_order, n_jobs=n_jobs).fit(data)


def fit_estimator(spec: EstimatorSpec, model: UnnormalizedModel, data: Dataset,
                  cfg: Optional[FitConfig] = None, eta: Optional[DensityEstimate] = None,
                  aux: Optional[AuxiliaryDistribution] = None, aux_sample: Optional[np.ndarray] = None,
                  rng: Optional[np.random.Generator] = None, n_jobs: int = 1) -> FitResult:
    """Dispatch one estimator by kind; plug-in and auxiliary pieces are built when not supplied"""
    cfg = _fit_config(cfg)
    if spec.needs_plugin and eta is None:
        eta = build_plugin(spec, model, data, rng, n_jobs)
    if spec.needs_aux and aux is None:
        aux = default_aux(model, data)
    extended = ExtendedModel(model)

    if spec.kind is EstimatorKind.SEPARABLE:
        f, links = spec.generator_obj(), LinkPair.parse(spec.links)
        result = fit_sdrme_separable(extended, data, eta, f, links, cfg)
    elif spec.kind is EstimatorKind.SKL_PROFILED:
        result = fit_skl_profiled(model, data, eta, cfg)
    elif spec.kind is EstimatorKind.NS_GAMMA:
        result = fit_sdrme_gamma(model, data, eta, spec.gamma_config(), cfg)
    elif spec.kind is EstimatorKind.NCE:
        result = fit_nce(extended, data, aux, spec.aux_ratio, cfg, aux_sample)
    elif spec.kind is EstimatorKind.GENERALIZED_NCE:
        result = fit_generalized_nce(extended, data, aux, spec.generator_obj(), spec.aux_ratio, cfg, aux_sample)
    elif spec.kind is EstimatorKind.MC_MLE:
        result = fit_mc_mle(model, data, aux, cfg, spec.aux_ratio, aux_sample)
    else:
        result = fit_exact_mle(model, data, cfg)
    result.estimator = spec.name
    if eta is not None:
        result.extra["plugin"] = type(eta).__name__
        if isinstance(eta, KdeEstimate):
            result.extra["bandwidth"] = eta.bandwidth_
    return result
