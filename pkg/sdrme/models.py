#!/usr/bin/env python3
"""
Model zoo - Poisson, RBM, FLID and generalized gamma unnormalized models,
their exact normalizers and samplers, the misspecified Poisson truth and
the auxiliary distributions used by the contrastive baselines
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Union

import numpy as np
from scipy.special import digamma, gammaln

from .config import ENUMERATION_LIMIT, POISSON_X_MAX
from .core import (ArrayLike, Dataset, EnumerableModel, SampleSpace, TabulatedDensity,
                   UnnormalizedModel, as_points, row_keys)
from .errors import ConfigError, DomainError

logger = logging.getLogger("sdrme.models")

Seed = Union[None, int, np.random.SeedSequence, np.random.Generator]


def make_rng(seed: Seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _bits(start: int, stop: int, width: int) -> np.ndarray:
    """Binary expansion of the integers in [start, stop), least significant bit first"""
    idx = np.arange(start, stop, dtype=np.int64)
    return ((idx[:, None] >> np.arange(width, dtype=np.int64)) & 1).astype(float)


class PoissonModel(EnumerableModel):
    """p(x; theta) = exp(theta x) / x! on {0..x_max}; normalizer over the naturals is exp(e^theta)"""

    name = "poisson"

    def __init__(self, x_max: int = POISSON_X_MAX):
        if x_max < 1:
            raise DomainError(f"x_max must be at least 1, got {x_max}")
        self.x_max = int(x_max)

    @property
    def n_params(self) -> int:
        return 1

    @property
    def point_dim(self) -> int:
        return 1

    @property
    def enumeration_size(self) -> int:
        return self.x_max + 1

    def enumeration_chunk(self, start, stop):
        return np.arange(start, stop, dtype=float).reshape(-1, 1)

    def log_p(self, X, theta):
        x = as_points(X)[:, 0]
        return theta[0] * x - gammaln(x + 1.0)

    def grad_theta_log_p(self, X, theta):
        return as_points(X)[:, :1].copy()

    def hess_theta_log_p(self, X, theta):
        return np.zeros((len(as_points(X)), 1, 1))

    def exact_log_normalizer(self, theta):
        return float(np.exp(theta[0]))

    def grad_exact_log_normalizer(self, theta):
        return np.array([np.exp(theta[0])])

    def describe(self):
        return {"model": self.name, "n_params": 1, "x_max": self.x_max}


class RbmModel(EnumerableModel):
    """
    Marginal of a +-1 restricted Boltzmann machine without biases:
    log p(v; W) = sum_k log cosh((v W)_k), theta = W flattened row-major.
    """

    name = "rbm"
    enumeration_limit = ENUMERATION_LIMIT

    def __init__(self, d_v: int, d_h: int):
        if d_v < 1 or d_h < 1:
            raise DomainError(f"RBM needs d_v, d_h >= 1, got ({d_v}, {d_h})")
        self.d_v = int(d_v)
        self.d_h = int(d_h)

    @property
    def n_params(self) -> int:
        return self.d_v * self.d_h

    @property
    def point_dim(self) -> int:
        return self.d_v

    @property
    def enumeration_size(self) -> int:
        return 1 << self.d_v

    def enumeration_chunk(self, start, stop):
        return 2.0 * _bits(start, stop, self.d_v) - 1.0

    def weights(self, theta) -> np.ndarray:
        return np.asarray(theta, dtype=float).reshape(self.d_v, self.d_h)

    def log_p(self, X, theta):
        a = as_points(X, self.d_v) @ self.weights(theta)
        abs_a = np.abs(a)
        # log cosh(a) = |a| + log(1 + e^{-2|a|}) - log 2
        return np.sum(abs_a + np.log1p(np.exp(-2.0 * abs_a)) - np.log(2.0), axis=1)

    def grad_theta_log_p(self, X, theta):
        V = as_points(X, self.d_v)
        t = np.tanh(V @ self.weights(theta))
        return np.einsum("nj,nk->njk", V, t).reshape(len(V), -1)

    def hess_theta_log_p(self, X, theta):
        V = as_points(X, self.d_v)
        sech2 = 1.0 - np.tanh(V @ self.weights(theta)) ** 2
        hess = np.einsum("nj,nl,nk,km->njklm", V, V, sech2, np.eye(self.d_h))
        return hess.reshape(len(V), self.n_params, self.n_params)

    def default_theta(self, rng=None):
        # W = 0 is a stationary point of every loss, start just off it
        return make_rng(0 if rng is None else rng).normal(0.0, 0.01, self.n_params)

    def random_theta(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, self.n_params)

    def describe(self):
        return {"model": self.name, "n_params": self.n_params, "d_v": self.d_v, "d_h": self.d_h}


def rbm_exact_normalizer(model: RbmModel, W: ArrayLike) -> float:
    """log of the sum over all 2^d_v spin vectors of prod_k cosh((v W)_k)"""
    return model.exact_log_normalizer(np.asarray(W, dtype=float).reshape(-1))


class FlidModel(EnumerableModel):
    """
    Facility location diversity model over subsets of {0..V-1} encoded as 0/1 rows.
    theta = (u, w) with u the V item qualities and w the V x L nonnegative embeddings.
    """

    name = "flid"
    enumeration_limit = ENUMERATION_LIMIT

    def __init__(self, V: int, L: int):
        if V < 1 or L < 1:
            raise DomainError(f"FLID needs V, L >= 1, got ({V}, {L})")
        self.V = int(V)
        self.L = int(L)
        self.theta_bounds = [(None, None)] * self.V + [(0.0, None)] * (self.V * self.L)

    @property
    def n_params(self) -> int:
        return self.V * (1 + self.L)

    @property
    def point_dim(self) -> int:
        return self.V

    @property
    def enumeration_size(self) -> int:
        return 1 << self.V

    def enumeration_chunk(self, start, stop):
        return _bits(start, stop, self.V)

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        return theta[:self.V], theta[self.V:].reshape(self.V, self.L)

    def _max_terms(self, S, w):
        """Per-dimension max over the subset (0 for the empty set) and its argmax item"""
        masked = np.where(S[:, :, None] > 0, w[None, :, :], -np.inf)
        arg = np.argmax(masked, axis=1)   # first maximizer, i.e. the smallest index
        nonempty = S.any(axis=1)
        best = np.where(nonempty[:, None], np.take_along_axis(masked, arg[:, None, :], axis=1)[:, 0, :], 0.0)
        return best, arg, nonempty

    def log_p(self, X, theta):
        S = as_points(X, self.V)
        u, w = self.split(theta)
        best, _, _ = self._max_terms(S, w)
        return S @ u + np.sum(best - S @ w, axis=1)

    def grad_theta_log_p(self, X, theta):
        S = as_points(X, self.V)
        _, w = self.split(theta)
        _, arg, nonempty = self._max_terms(S, w)
        hit = (arg[:, None, :] == np.arange(self.V)[None, :, None]) & nonempty[:, None, None]
        grad_w = hit.astype(float) - S[:, :, None]
        return np.hstack([S, grad_w.reshape(len(S), -1)])

    def hess_theta_log_p(self, X, theta):
        # piecewise linear in theta
        return np.zeros((len(as_points(X, self.V)), self.n_params, self.n_params))

    def default_theta(self, rng=None):
        gen = make_rng(0 if rng is None else rng)
        return np.concatenate([np.zeros(self.V), gen.uniform(0.01, 0.1, self.V * self.L)])

    def random_theta(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(0.0, 1.0, self.n_params)

    def describe(self):
        return {"model": self.name, "n_params": self.n_params, "V": self.V, "L": self.L}


class GenGammaModel(UnnormalizedModel):
    """p(x; theta) = exp(-theta1 x^2) x^theta2 on x > 0"""

    name = "gengamma"

    def __init__(self):
        self.theta_bounds = [(1e-8, None), (-1.0 + 1e-8, None)]
        self._space = SampleSpace.continuous(1, (0.0, np.inf))

    @property
    def space(self) -> SampleSpace:
        return self._space

    @property
    def n_params(self) -> int:
        return 2

    def log_p(self, X, theta):
        x = as_points(X)[:, 0]
        return -theta[0] * x * x + theta[1] * np.log(x)

    def grad_theta_log_p(self, X, theta):
        x = as_points(X)[:, 0]
        return np.column_stack([-x * x, np.log(x)])

    def hess_theta_log_p(self, X, theta):
        return np.zeros((len(as_points(X)), 2, 2))

    @property
    def has_exact_normalizer(self) -> bool:
        return True

    @staticmethod
    def _check(theta):
        if not (theta[0] > 0 and theta[1] > -1):
            raise DomainError(f"generalized gamma needs theta1 > 0 and theta2 > -1, got {list(theta)}")

    def exact_log_normalizer(self, theta):
        """log of Gamma((theta2 + 1) / 2) / (2 theta1^((theta2 + 1) / 2))"""
        self._check(theta)
        half = 0.5 * (theta[1] + 1.0)
        return float(gammaln(half) - np.log(2.0) - half * np.log(theta[0]))

    def grad_exact_log_normalizer(self, theta):
        self._check(theta)
        half = 0.5 * (theta[1] + 1.0)
        return np.array([-half / theta[0], 0.5 * digamma(half) - 0.5 * np.log(theta[0])])

    def default_theta(self, rng=None):
        return np.array([1.0, 0.0])

    def describe(self):
        return {"model": self.name, "n_params": 2}


def sample_gengamma(theta1: float, theta2: float, n: int, seed: Seed = None) -> Dataset:
    """X = sqrt(G) with G ~ Gamma(shape (theta2 + 1) / 2, rate theta1)"""
    if not (theta1 > 0 and theta2 > -1):
        raise DomainError(f"generalized gamma needs theta1 > 0 and theta2 > -1, got ({theta1}, {theta2})")
    rng = make_rng(seed)
    g = rng.gamma(shape=0.5 * (theta2 + 1.0), scale=1.0 / theta1, size=n)
    return Dataset(np.sqrt(np.maximum(g, np.finfo(float).tiny)).reshape(-1, 1))


def sample_from_pmf(points: np.ndarray, pmf: np.ndarray, n: int, seed: Seed = None) -> Dataset:
    """Inverse-CDF draws from a pmf tabulated over `points`"""
    rng = make_rng(seed)
    cdf = np.cumsum(pmf)
    idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    return Dataset(points[np.minimum(idx, len(points) - 1)])


def sample_discrete_exact(model: EnumerableModel, theta: ArrayLike, n: int, seed: Seed = None) -> Dataset:
    """n i.i.d. draws by inverse CDF over the exactly normalized enumerated pmf"""
    pmf = model.pmf(np.asarray(theta, dtype=float))
    return sample_from_pmf(model.space.points, pmf, n, seed)


@dataclass(frozen=True, eq=False)
class MisspecifiedPoissonTruth:
    """Tabulated non-Poisson pmf over {0..x_max}"""
    points: np.ndarray
    pmf: np.ndarray

    def density(self) -> TabulatedDensity:
        return TabulatedDensity(self.points, self.pmf)

    def sample(self, n: int, seed: Seed = None) -> Dataset:
        return sample_from_pmf(self.points, self.pmf, n, seed)


def misspecified_truth_pmf(x_max: int = POISSON_X_MAX) -> MisspecifiedPoissonTruth:
    """
    0.5 e^-2 2^(x-0.2) / Gamma(x + 0.8) + 0.5 e^-1 / Gamma(x - 0.2), renormalized.

    A term whose Gamma argument is <= 0 (the second at x = 0) is taken as 0.
    """
    if x_max < 30:
        raise DomainError(f"x_max must be at least 30, got {x_max}")
    x = np.arange(x_max + 1, dtype=float)
    first = np.exp(np.log(0.5) - 2.0 + (x - 0.2) * np.log(2.0) - gammaln(x + 0.8))
    arg = x - 0.2
    second = np.zeros_like(x)
    ok = arg > 0
    second[ok] = np.exp(np.log(0.5) - 1.0 - gammaln(arg[ok]))
    pmf = np.maximum(first, 0.0) + np.maximum(second, 0.0)
    return MisspecifiedPoissonTruth(x.reshape(-1, 1), pmf / pmf.sum())


# Auxiliary distributions for the contrastive baselines

class AuxiliaryDistribution(ABC):
    """Noise distribution a(x): sample(m, rng) and log_density(X)"""

    name = "aux"

    @abstractmethod
    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        ...

    @abstractmethod
    def log_density(self, X: ArrayLike) -> np.ndarray:
        """log a(x); -inf off support"""

    def describe(self) -> Dict[str, Any]:
        return {"aux": self.name}


class DiscreteAux(AuxiliaryDistribution):
    """Tabulated pmf over a finite set of points"""

    name = "discrete"

    def __init__(self, points: ArrayLike, probs: ArrayLike):
        self.points = as_points(points)
        probs = np.asarray(probs, dtype=float).reshape(-1)
        if len(probs) != len(self.points) or np.any(probs < 0) or not probs.sum() > 0:
            raise DomainError("auxiliary pmf must be nonnegative, nonzero and match its points")
        self.probs = probs / probs.sum()
        with np.errstate(divide="ignore"):
            self._log = dict(zip(row_keys(self.points), np.log(self.probs)))

    def sample(self, m, rng):
        idx = rng.choice(len(self.points), size=m, p=self.probs)
        return self.points[idx]

    def log_density(self, X):
        keys = row_keys(as_points(X, self.points.shape[1]))
        return np.array([self._log.get(key, -np.inf) for key in keys])


class UniformDiscreteAux(DiscreteAux):
    name = "uniform"

    def __init__(self, points: ArrayLike):
        pts = as_points(points)
        super().__init__(pts, np.ones(len(pts)))

    def sample(self, m, rng):
        return self.points[rng.integers(0, len(self.points), size=m)]


class ProductBernoulliAux(AuxiliaryDistribution):
    """Independent inclusion of each item with probability p_i"""

    name = "product"

    def __init__(self, probs: ArrayLike, clip: float = 1e-3):
        self.probs = np.clip(np.asarray(probs, dtype=float).reshape(-1), clip, 1.0 - clip)

    def sample(self, m, rng):
        return (rng.random((m, len(self.probs))) < self.probs).astype(float)

    def log_density(self, X):
        S = as_points(X, len(self.probs))
        binary = np.all((S == 0) | (S == 1), axis=1)
        values = S @ np.log(self.probs) + (1.0 - S) @ np.log1p(-self.probs)
        return np.where(binary, values, -np.inf)


class HalfNormalAux(AuxiliaryDistribution):
    """|N(0, sigma^2)| on x >= 0"""

    name = "half-normal"

    def __init__(self, sigma: float):
        if not sigma > 0:
            raise DomainError(f"half-normal scale must be positive, got {sigma}")
        self.sigma = float(sigma)

    def sample(self, m, rng):
        draws = np.abs(rng.normal(0.0, self.sigma, size=m))
        return np.maximum(draws, np.finfo(float).tiny).reshape(-1, 1)

    def log_density(self, X):
        x = as_points(X)[:, 0]
        values = 0.5 * np.log(2.0 / np.pi) - np.log(self.sigma) - 0.5 * (x / self.sigma) ** 2
        return np.where(x >= 0, values, -np.inf)

    def describe(self):
        return {"aux": self.name, "sigma": self.sigma}


def product_aux_from_data(data: Dataset, clip: float = 1e-3) -> ProductBernoulliAux:
    """Product distribution with marginals matched to the item frequencies"""
    return ProductBernoulliAux(data.points.mean(axis=0), clip)


def half_normal_aux_from_data(data: Dataset) -> HalfNormalAux:
    """Half-normal with the sample second moment"""
    return HalfNormalAux(float(np.sqrt(np.mean(data.points[:, 0] ** 2))))


MODELS: Dict[str, Callable[..., UnnormalizedModel]] = {
    "poisson": PoissonModel,
    "rbm": RbmModel,
    "flid": FlidModel,
    "gengamma": GenGammaModel,
}


def build_model(name: str, params: Optional[Dict[str, Any]] = None) -> UnnormalizedModel:
    """Instantiate a registered model from its manifest parameters"""
    key = name.strip().lower()
    if key not in MODELS:
        raise ConfigError(f"unknown model '{name}' (known: {sorted(MODELS)})", field="model")
    try:
        return MODELS[key](**(params or {}))
    except TypeError as e:
        raise ConfigError(f"bad parameters for {key}: {e}", field="model_params")


def default_aux(model: UnnormalizedModel, data: Dataset) -> AuxiliaryDistribution:
    """Noise distribution used by the contrastive baselines for each model"""
    if isinstance(model, PoissonModel):
        top = max(30, int(data.points.max()))
        return UniformDiscreteAux(np.arange(top + 1, dtype=float))
    if isinstance(model, RbmModel):
        return UniformDiscreteAux(model.space.points)
    if isinstance(model, FlidModel):
        return product_aux_from_data(data)
    if isinstance(model, GenGammaModel):
        return half_normal_aux_from_data(data)
    raise ConfigError(f"no default auxiliary distribution for {model.name}", field="aux")
