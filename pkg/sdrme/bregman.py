#!/usr/bin/env python3
"""
Bregman module - convex generators, link functions, separable and
non-separable density-ratio matching losses, and the convexity certifier
"""
import logging
from dataclasses import dataclass, field
from enum import Enum, auto
from typing import Any, Callable, Dict, Optional, Tuple, Union

import numpy as np
from scipy.special import logsumexp, softmax, xlogy

from .config import CONVEXITY_GRID, CONVEXITY_SLACK, DELTA_SNAP
from .core import Dataset, DensityEstimate, ExtendedModel, Tau, UnnormalizedModel, tau_vector
from .errors import ConfigError, DomainError

logger = logging.getLogger("sdrme.bregman")

Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]


class GeneratorKind(Enum):
    KL = auto()
    CHI = auto()
    JS = auto()
    POWER = auto()
    CUSTOM = auto()


@dataclass(frozen=True)
class Generator:
    """Strictly convex f with f''(1) = 1 and its first three derivatives"""
    kind: GeneratorKind
    name: str
    f: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    d1: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    d2: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    d3: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    extends_to_zero: bool = False   # f(0) defined by continuity
    exponent: Optional[float] = None

    @classmethod
    def kl(cls) -> "Generator":
        return cls(GeneratorKind.KL, "kl",
                   f=lambda x: xlogy(x, x),
                   d1=lambda x: np.log(x) + 1.0,
                   d2=lambda x: 1.0 / x,
                   d3=lambda x: -1.0 / x ** 2,
                   extends_to_zero=True)

    @classmethod
    def chi(cls) -> "Generator":
        return cls(GeneratorKind.CHI, "chi",
                   f=lambda x: 0.5 * x ** 2,
                   d1=lambda x: np.asarray(x, dtype=float) * 1.0,
                   d2=lambda x: np.ones_like(np.asarray(x, dtype=float)),
                   d3=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                   extends_to_zero=True)

    @classmethod
    def js(cls) -> "Generator":
        return cls(GeneratorKind.JS, "js",
                   f=lambda x: 2.0 * xlogy(x, x) - 2.0 * xlogy(1.0 + x, 1.0 + x),
                   d1=lambda x: 2.0 * (np.log(x) - np.log1p(x)),
                   d2=lambda x: 2.0 / (x * (1.0 + x)),
                   d3=lambda x: -2.0 / x ** 2 + 2.0 / (1.0 + x) ** 2,
                   extends_to_zero=True)

    @classmethod
    def power(cls, m: float) -> "Generator":
        """beta-divergence generator x^m / (m (m - 1)), m > 1"""
        if not m > 1:
            raise ConfigError(f"power generator needs m > 1, got {m}", field="generator")
        return cls(GeneratorKind.POWER, f"power:{m:g}",
                   f=lambda x: x ** m / (m * (m - 1.0)),
                   d1=lambda x: x ** (m - 1.0) / (m - 1.0),
                   d2=lambda x: x ** (m - 2.0),
                   d3=lambda x: (m - 2.0) * x ** (m - 3.0),
                   extends_to_zero=True,
                   exponent=m)

    @classmethod
    def custom(cls, name: str, f, d1, d2, d3, extends_to_zero: bool = False) -> "Generator":
        return cls(GeneratorKind.CUSTOM, name, f, d1, d2, d3, extends_to_zero)

    def derivative(self, order: int) -> Callable[[np.ndarray], np.ndarray]:
        try:
            return (self.f, self.d1, self.d2, self.d3)[order]
        except (IndexError, TypeError):
            raise DomainError(f"derivative order must be 0..3, got {order}")

    def validate(self, grid: Optional[np.ndarray] = None, rtol: float = 1e-8) -> None:
        """Check strict convexity on a grid and the f''(1) = 1 normalization"""
        grid = np.logspace(-2, 2, 201) if grid is None else np.asarray(grid, dtype=float)
        if np.any(self.d2(grid) <= 0):
            raise DomainError(f"generator {self.name} is not strictly convex on the test grid")
        if abs(float(self.d2(np.array(1.0))) - 1.0) > rtol:
            raise DomainError(f"generator {self.name} violates f''(1) = 1")

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.name, "name": self.name, "exponent": self.exponent}


GENERATORS: Dict[str, Callable[[], Generator]] = {
    "kl": Generator.kl,
    "chi": Generator.chi,
    "js": Generator.js,
}


def generator_by_name(name: str) -> Generator:
    """Registry lookup; 'power:<m>' selects the beta-divergence generator"""
    key = name.strip().lower()
    if key in GENERATORS:
        return GENERATORS[key]()
    if key.startswith("power:"):
        try:
            return Generator.power(float(key.split(":", 1)[1]))
        except ValueError:
            pass
    raise ConfigError(f"unknown generator '{name}' (known: {sorted(GENERATORS)} or power:<m>)",
                      field="generator")


def generator_value(f: Generator, x: Union[float, np.ndarray], order: int = 0):
    """f, f', f'' or f''' at x > 0"""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError(f"generator {f.name} evaluated outside x > 0")
    out = f.derivative(order)(arr)
    return float(out) if np.ndim(out) == 0 else out


def separable_bregman_pointwise(f: Generator, u, v):
    """B_f(u, v) = f(u) - f(v) - f'(v)(u - v), elementwise"""
    u_arr = np.asarray(u, dtype=float)
    v_arr = np.asarray(v, dtype=float)
    if np.any(~(v_arr > 0)):
        raise DomainError(f"B_{f.name}(u, v) needs v > 0")
    if np.any(u_arr < 0) or np.any(np.isnan(u_arr)) or (not f.extends_to_zero and np.any(u_arr == 0)):
        raise DomainError(f"B_{f.name}(u, v) needs u {'>=' if f.extends_to_zero else '>'} 0")
    out = f.f(u_arr) - f.f(v_arr) - f.d1(v_arr) * (u_arr - v_arr)
    return float(out) if np.ndim(out) == 0 else out


class LinkKind(Enum):
    IDENTITY = auto()
    ONE = auto()
    POWER = auto()


@dataclass(frozen=True)
class Link:
    """Link h applied to the density ratio w"""
    kind: LinkKind
    exponent: float = 1.0

    @classmethod
    def identity(cls) -> "Link":
        return cls(LinkKind.IDENTITY, 1.0)

    @classmethod
    def one(cls) -> "Link":
        return cls(LinkKind.ONE, 0.0)

    @classmethod
    def power(cls, exponent: float) -> "Link":
        return cls(LinkKind.POWER, float(exponent))

    @classmethod
    def parse(cls, text: str) -> "Link":
        key = text.strip().lower()
        if key in ("identity", "w"):
            return cls.identity()
        if key in ("one", "1"):
            return cls.one()
        if key.startswith("w^") or key.startswith("power:"):
            return cls.power(float(key.split("^" if "^" in key else ":", 1)[1]))
        raise ConfigError(f"unknown link '{text}' (identity, one, w^<a>)", field="links")

    def value(self, w: np.ndarray) -> np.ndarray:
        if self.kind is LinkKind.ONE:
            return np.ones_like(w)
        if self.kind is LinkKind.IDENTITY:
            return w
        return w ** self.exponent

    def d1(self, w: np.ndarray) -> np.ndarray:
        if self.kind is LinkKind.ONE:
            return np.zeros_like(w)
        if self.kind is LinkKind.IDENTITY:
            return np.ones_like(w)
        a = self.exponent
        return a * w ** (a - 1.0)

    def d2(self, w: np.ndarray) -> np.ndarray:
        if self.kind is not LinkKind.POWER:
            return np.zeros_like(w)
        a = self.exponent
        return a * (a - 1.0) * w ** (a - 2.0)

    @property
    def label(self) -> str:
        if self.kind is LinkKind.POWER:
            return f"w^{self.exponent:g}"
        return self.kind.name.lower()


@dataclass(frozen=True)
class LinkPair:
    h1: Link
    h2: Link

    @classmethod
    def one_identity(cls) -> "LinkPair":
        """h1(w) = 1, h2(w) = w; the loss reduces to -f'(w) + w f'(w) - f(w)"""
        return cls(Link.one(), Link.identity())

    @classmethod
    def ratio_to_one(cls) -> "LinkPair":
        """h1(w) = w, h2(w) = 1; the reversed ordering"""
        return cls(Link.identity(), Link.one())

    @classmethod
    def power(cls, alpha: float, beta: float) -> "LinkPair":
        return cls(Link.power(alpha), Link.power(beta))

    @classmethod
    def parse(cls, text: str) -> "LinkPair":
        key = text.strip().lower()
        if key in ("one-identity", "1,w"):
            return cls.one_identity()
        if key in ("identity-one", "w,1"):
            return cls.ratio_to_one()
        parts = [p for p in key.replace(";", ",").split(",") if p]
        if len(parts) == 2:
            return cls(Link.parse(parts[0]), Link.parse(parts[1]))
        raise ConfigError(f"cannot parse link pair '{text}'", field="links")

    def validate(self, grid: Optional[np.ndarray] = None) -> None:
        """h1(w) = h2(w) only at w = 1, and h1'(1) != h2'(1)"""
        grid = np.logspace(-3, 3, 601) if grid is None else np.asarray(grid, dtype=float)
        off_one = grid[grid != 1.0]
        if np.any(self.h1.value(off_one) == self.h2.value(off_one)):
            raise DomainError(f"links {self.label} coincide away from w = 1")
        one = np.array([1.0])
        if self.h1.value(one)[0] != self.h2.value(one)[0]:
            raise DomainError(f"links {self.label} differ at w = 1")
        if self.h1.d1(one)[0] == self.h2.d1(one)[0]:
            raise DomainError(f"links {self.label} have equal slopes at w = 1")

    @property
    def label(self) -> str:
        return f"{self.h1.label},{self.h2.label}"

    def to_dict(self) -> Dict[str, Any]:
        return {"h1": self.h1.label, "h2": self.h2.label}


@dataclass(frozen=True)
class GammaConfig:
    """(alpha, beta, gamma) of the non-separable estimators; delta is derived"""
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if self.alpha == self.beta:
            raise ConfigError("alpha must differ from beta (alpha != beta is required for identification)",
                              field="alpha")
        if not self.gamma > 1:
            raise ConfigError(f"gamma must exceed 1, got {self.gamma}", field="gamma")

    @property
    def delta(self) -> float:
        """(alpha + beta (gamma - 1)) / gamma, snapped to exactly 0 at round-off level"""
        delta = (self.alpha + self.beta * (self.gamma - 1.0)) / self.gamma
        scale = max(abs(self.alpha), abs(self.beta) * (self.gamma - 1.0))
        if abs(delta) <= DELTA_SNAP * scale:
            return 0.0
        return delta

    @property
    def scale_free(self) -> bool:
        return self.delta == 0.0

    def to_dict(self) -> Dict[str, float]:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma, "delta": self.delta}


# Per-sample pieces of the separable loss as functions of w

def _separable_pieces(f: Generator, links: LinkPair, w: np.ndarray):
    """Returns (B, L'(w), L''(w)) for L(w) = B_f(h1(w), h2(w))"""
    h1, h2 = links.h1, links.h2
    u, v = h1.value(w), h2.value(w)
    value = separable_bregman_pointwise(f, u, v)
    du, dv = h1.d1(w), h2.d1(w)
    ddu, ddv = h1.d2(w), h2.d2(w)
    fu1 = np.where(du != 0, f.d1(np.where(u > 0, u, 1.0)), 0.0)
    fv1, fv2, fv3 = f.d1(v), f.d2(v), f.d3(v)
    fu2 = np.where(du != 0, f.d2(np.where(u > 0, u, 1.0)), 0.0)
    gap = u - v
    a = fu1 - fv1
    slope = a * du - fv2 * dv * gap
    curvature = ((fu2 * du - fv2 * dv) * du + a * ddu
                 - fv3 * dv ** 2 * gap - fv2 * ddv * gap - fv2 * dv * (du - dv))
    return np.atleast_1d(value), slope, curvature


def separable_objective(model: ExtendedModel, data: Dataset, eta: DensityEstimate,
                        f: Generator, links: LinkPair) -> Objective:
    """tau vector -> (loss, gradient) with eta evaluated once"""
    X = data.points
    log_eta = eta.log_eval(X)

    def objective(tau: np.ndarray) -> Tuple[float, np.ndarray]:
        w = np.exp(model.log_q(X, tau) - log_eta)
        value, slope, _ = _separable_pieces(f, links, w)
        grad = (slope * w) @ model.grad_tau_log_q(X, tau) / len(w)
        return float(np.mean(value)), grad

    return objective


def sdrme_separable_loss(model: ExtendedModel, tau: Union[Tau, np.ndarray], data: Dataset,
                         eta: DensityEstimate, f: Generator, links: LinkPair) -> float:
    """(1/n) sum_i B_f{h1(w_i), h2(w_i)} with w_i = q(x_i; tau) / eta(x_i)"""
    return separable_objective(model, data, eta, f, links)(tau_vector(tau))[0]


def sdrme_separable_grad(model, tau, data, eta, f, links) -> np.ndarray:
    return separable_objective(model, data, eta, f, links)(tau_vector(tau))[1]


def sdrme_separable_hessian(model: ExtendedModel, tau, data: Dataset, eta: DensityEstimate,
                            f: Generator, links: LinkPair) -> np.ndarray:
    """Analytic Hessian in tau: mean of (L'' w^2 + L' w) s s^T + L' w H_q"""
    X = data.points
    vec = tau_vector(tau)
    w = np.exp(model.log_q(X, vec) - eta.log_eval(X))
    _, slope, curvature = _separable_pieces(f, links, w)
    score = model.grad_tau_log_q(X, vec)
    outer_weight = curvature * w ** 2 + slope * w
    hess = np.einsum("i,ij,ik->jk", outer_weight, score, score)
    hess += np.einsum("i,ijk->jk", slope * w, model.hess_tau_log_q(X, vec))
    return hess / len(w)


def skl_objective(model: ExtendedModel, data: Dataset, eta: DensityEstimate) -> Objective:
    X = data.points
    log_eta = eta.log_eval(X)

    def objective(tau: np.ndarray) -> Tuple[float, np.ndarray]:
        log_q = model.log_q(X, tau)
        w = np.exp(log_q - log_eta)
        grad = (w - 1.0) @ model.grad_tau_log_q(X, tau) / len(w)
        return float(-np.mean(log_q) + np.mean(w)), grad

    return objective


def skl_loss(model: ExtendedModel, tau, data: Dataset, eta: DensityEstimate) -> float:
    """-(1/n) sum log q(x_i; tau) + (1/n) sum q(x_i; tau) / eta(x_i)"""
    return skl_objective(model, data, eta)(tau_vector(tau))[0]


def skl_profiled_objective(model: UnnormalizedModel, data: Dataset, eta: DensityEstimate) -> Objective:
    X = data.points
    log_eta = eta.log_eval(X)
    log_n = np.log(len(X))

    def objective(theta: np.ndarray) -> Tuple[float, np.ndarray]:
        log_p = model.log_p(X, theta)
        log_w = log_p - log_eta
        grad_lp = model.grad_theta_log_p(X, theta)
        value = -np.mean(log_p) + logsumexp(log_w) - log_n
        grad = -grad_lp.mean(axis=0) + softmax(log_w) @ grad_lp
        return float(value), grad

    return objective


def skl_profiled_loss(model: UnnormalizedModel, theta, data: Dataset, eta: DensityEstimate) -> float:
    """s-KL with c profiled out: -(1/n) sum log p + log (1/n) sum p / eta"""
    return skl_profiled_objective(model, data, eta)(np.asarray(theta, dtype=float))[0]


def _log_power_sum(log_w: np.ndarray, power: float) -> float:
    if power == 0.0:
        return float(np.log(len(log_w)))
    return float(logsumexp(power * log_w))


def ns_gamma_objective(model: UnnormalizedModel, data: Dataset, eta: DensityEstimate,
                       cfg: GammaConfig) -> Objective:
    """theta -> (gamma-divergence loss, gradient); power sums in log space"""
    X = data.points
    log_eta = eta.log_eval(X)
    a, b, g, d = cfg.alpha, cfg.beta, cfg.gamma, cfg.delta

    def objective(theta: np.ndarray) -> Tuple[float, np.ndarray]:
        log_w = model.log_p(X, theta) - log_eta
        grad_lp = model.grad_theta_log_p(X, theta)
        value = (_log_power_sum(log_w, a) / g + (g - 1.0) / g * _log_power_sum(log_w, b)
                 - _log_power_sum(log_w, d))
        weights = (a / g) * softmax(a * log_w) + ((g - 1.0) * b / g) * softmax(b * log_w)
        if d != 0.0:
            weights = weights - d * softmax(d * log_w)
        return float(value), weights @ grad_lp

    return objective


def ns_gamma_loss(model: UnnormalizedModel, theta, data: Dataset, eta: DensityEstimate,
                  cfg: GammaConfig) -> float:
    """(1/g) log sum w^a + ((g-1)/g) log sum w^b - log sum w^d with w = p / eta"""
    return ns_gamma_objective(model, data, eta, cfg)(np.asarray(theta, dtype=float))[0]


def ns_ps_terms(model: UnnormalizedModel, theta, data: Dataset, eta: DensityEstimate,
                cfg: GammaConfig) -> Tuple[float, float]:
    """The two terms of the pseudo-spherical loss, before subtraction"""
    X = data.points
    log_w = model.log_p(X, np.asarray(theta, dtype=float)) - eta.log_eval(X)
    g = cfg.gamma
    first = np.exp(_log_power_sum(log_w, cfg.alpha) / g)
    second = np.exp((1.0 - g) / g * _log_power_sum(log_w, cfg.beta) + _log_power_sum(log_w, cfg.delta))
    return float(first), float(second)


def ns_ps_loss(model: UnnormalizedModel, theta, data: Dataset, eta: DensityEstimate,
               cfg: GammaConfig) -> float:
    """(sum w^a)^(1/g) - (sum w^b)^((1-g)/g) sum w^d"""
    first, second = ns_ps_terms(model, theta, data, eta, cfg)
    return first - second


class CertificateStatus(Enum):
    CONVEX = auto()
    NOT_CERTIFIED = auto()


@dataclass(frozen=True)
class ConvexityCertificate:
    generator: str
    status: CertificateStatus
    witness: Optional[float]
    min_value: float

    @property
    def convex(self) -> bool:
        return self.status is CertificateStatus.CONVEX

    def to_dict(self) -> Dict[str, Any]:
        return {"generator": self.generator, "status": self.status.name,
                "witness": self.witness, "min_value": self.min_value}

    def __str__(self) -> str:
        if self.convex:
            return f"{self.generator}: Convex"
        return f"{self.generator}: NotCertified (witness z={self.witness:.6g}, value={self.min_value:.6g})"


def convexity_expression(f: Generator, z: np.ndarray) -> np.ndarray:
    """(2z - 1) f''(z) + z (z - 1) f'''(z)"""
    return (2.0 * z - 1.0) * f.d2(z) + z * (z - 1.0) * f.d3(z)


def certify_convexity(f: Generator, grid: Optional[np.ndarray] = None) -> ConvexityCertificate:
    """Grid check of the sufficient condition for convexity in tau of the one-identity separable loss"""
    z = CONVEXITY_GRID if grid is None else np.asarray(grid, dtype=float)
    if np.any(z <= 0):
        raise DomainError("convexity grid must lie in (0, inf)")
    values = convexity_expression(f, z)
    failing = np.flatnonzero(values < -CONVEXITY_SLACK)
    min_value = float(np.min(values))
    if len(failing) == 0:
        return ConvexityCertificate(f.name, CertificateStatus.CONVEX, None, min_value)
    witness = float(z[failing[0]])
    logger.debug(f"{f.name}: convexity condition fails at z={witness:g}")
    return ConvexityCertificate(f.name, CertificateStatus.NOT_CERTIFIED, witness, min_value)
