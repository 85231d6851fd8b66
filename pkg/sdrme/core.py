#!/usr/bin/env python3
"""
Core domain types - extended parameters, sample spaces, datasets,
unnormalized models and plug-in density estimates
"""
import hashlib
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum, auto
from functools import cached_property
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from .config import ETA_FLOOR, FD_RELATIVE_STEP
from .errors import DomainError, NonpositiveDensity, NormalizerUnavailable, SpaceTooLarge

logger = logging.getLogger("sdrme.core")

ArrayLike = Union[np.ndarray, Sequence[float], float]
Bounds = Sequence[Tuple[Optional[float], Optional[float]]]

ENUMERATION_CHUNK = 1 << 16


def as_points(X: ArrayLike, dim: Optional[int] = None) -> np.ndarray:
    """Coerce X to a float (n, d) array of sample points"""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        if dim is not None and dim > 1:
            return arr.reshape(1, -1)
        return arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DomainError(f"sample points must be at most 2-D, got shape {arr.shape}")
    return arr


def row_keys(X: np.ndarray) -> List[bytes]:
    """Hashable keys for the rows of X (-0.0 and 0.0 share a key)"""
    rows = np.ascontiguousarray(np.asarray(X, dtype=float) + 0.0)
    return [row.tobytes() for row in rows]


@dataclass(frozen=True, eq=False)
class Tau:
    """Extended parameter (c, theta) of q(x; tau) = exp(-c) p(x; theta)"""
    c: float
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        theta.setflags(write=False)
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "theta", theta)
        if not np.isfinite(self.c) or not np.all(np.isfinite(theta)):
            raise DomainError(f"tau entries must be finite: c={self.c}, theta={theta}")

    @property
    def dim(self) -> int:
        return self.theta.size + 1

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate(([self.c], self.theta))

    @classmethod
    def from_vector(cls, vector: ArrayLike) -> "Tau":
        vec = np.asarray(vector, dtype=float).reshape(-1)
        return cls(c=vec[0], theta=vec[1:])

    def shifted(self, delta_c: float) -> "Tau":
        return Tau(self.c + delta_c, self.theta)

    def to_dict(self):
        return {"c": self.c, "theta": self.theta.tolist()}


def tau_vector(tau: Union[Tau, ArrayLike]) -> np.ndarray:
    if isinstance(tau, Tau):
        return tau.vector
    return np.asarray(tau, dtype=float).reshape(-1)


class SpaceKind(Enum):
    """Baseline measure of a sample space"""
    DISCRETE_ENUMERABLE = auto()   # counting measure
    CONTINUOUS = auto()            # Lebesgue measure


@dataclass(frozen=True, eq=False)
class SampleSpace:
    kind: SpaceKind
    dim: int
    points: Optional[np.ndarray] = None
    support: Tuple[float, float] = (-np.inf, np.inf)

    def __post_init__(self):
        if self.kind is SpaceKind.DISCRETE_ENUMERABLE:
            if self.points is None or len(self.points) == 0:
                raise DomainError("an enumerable space needs at least one point")
            pts = as_points(self.points, self.dim)
            if len(set(row_keys(pts))) != len(pts):
                raise DomainError("enumerable space points must be duplicate-free")
            pts.setflags(write=False)
            object.__setattr__(self, "points", pts)
        elif self.dim < 1:
            raise DomainError(f"continuous space needs dim >= 1, got {self.dim}")

    @classmethod
    def discrete(cls, points: ArrayLike) -> "SampleSpace":
        pts = np.asarray(points, dtype=float)
        dim = 1 if pts.ndim <= 1 else pts.shape[1]
        return cls(SpaceKind.DISCRETE_ENUMERABLE, dim, as_points(pts, dim))

    @classmethod
    def continuous(cls, dim: int, support: Tuple[float, float] = (-np.inf, np.inf)) -> "SampleSpace":
        return cls(SpaceKind.CONTINUOUS, dim, None, support)

    @property
    def is_enumerable(self) -> bool:
        return self.kind is SpaceKind.DISCRETE_ENUMERABLE

    @property
    def size(self) -> Optional[int]:
        return len(self.points) if self.is_enumerable else None

    def contains(self, X: ArrayLike) -> np.ndarray:
        """Boolean mask of which rows of X lie in the space"""
        pts = as_points(X, self.dim)
        if pts.shape[1] != self.dim:
            return np.zeros(len(pts), dtype=bool)
        if self.is_enumerable:
            members = set(row_keys(self.points))
            return np.array([key in members for key in row_keys(pts)], dtype=bool)
        lo, hi = self.support
        return np.all((pts > lo) & (pts < hi), axis=1)


@dataclass(frozen=True, eq=False)
class Dataset:
    """i.i.d. sample x_1..x_n stored as an (n, d) array"""
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        pts = as_points(pts)
        if len(pts) < 1:
            raise DomainError("n >= 1 required")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_points(cls, points: ArrayLike, space: Optional[SampleSpace] = None) -> "Dataset":
        pts = np.asarray(points, dtype=float)
        if pts.size == 0:
            raise DomainError("n >= 1 required")
        pts = as_points(pts, space.dim if space is not None else None)
        if space is not None:
            inside = space.contains(pts)
            if not np.all(inside):
                bad = int(np.flatnonzero(~inside)[0])
                raise DomainError(f"data point {pts[bad].tolist()} (row {bad}) lies outside the sample space")
        return cls(pts)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def digest(self) -> str:
        """Content hash, used to check that paired estimators saw identical data"""
        return hashlib.sha256(np.ascontiguousarray(self.points).tobytes()).hexdigest()[:16]


def _fd_step(theta: np.ndarray) -> np.ndarray:
    return FD_RELATIVE_STEP * (1.0 + np.abs(theta))


class UnnormalizedModel(ABC):
    """Parametric nonnegative function p(x; theta) evaluated on (n, d) point arrays"""

    name = "model"
    theta_bounds: Optional[Bounds] = None

    @property
    @abstractmethod
    def space(self) -> SampleSpace:
        ...

    @property
    @abstractmethod
    def n_params(self) -> int:
        ...

    @property
    def point_dim(self) -> int:
        return self.space.dim

    @abstractmethod
    def log_p(self, X: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """log p(x; theta) for each row, shape (n,)"""

    @abstractmethod
    def grad_theta_log_p(self, X: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Gradient in theta for each row, shape (n, d_theta)"""

    def hess_theta_log_p(self, X: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Hessian in theta for each row, shape (n, d, d); central differences of the gradient"""
        theta = np.asarray(theta, dtype=float)
        steps = _fd_step(theta)
        cols = []
        for j, h in enumerate(steps):
            e = np.zeros_like(theta)
            e[j] = h
            cols.append((self.grad_theta_log_p(X, theta + e) - self.grad_theta_log_p(X, theta - e)) / (2 * h))
        hess = np.stack(cols, axis=2)
        return 0.5 * (hess + np.transpose(hess, (0, 2, 1)))

    @property
    def has_exact_normalizer(self) -> bool:
        return False

    def exact_log_normalizer(self, theta: np.ndarray) -> float:
        raise NormalizerUnavailable(f"{self.name} has no exact normalizer")

    def grad_exact_log_normalizer(self, theta: np.ndarray) -> np.ndarray:
        raise NormalizerUnavailable(f"{self.name} has no exact normalizer")

    def log_pmf(self, X: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Normalized log density/mass"""
        return self.log_p(X, theta) - self.exact_log_normalizer(theta)

    def default_theta(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        return np.zeros(self.n_params)

    def describe(self) -> dict:
        return {"model": self.name, "n_params": self.n_params}


class EnumerableModel(UnnormalizedModel):
    """Model on a finite space whose normalizer is computed by enumeration"""

    enumeration_limit: Optional[int] = None   # log2 of the largest space enumerated

    @property
    @abstractmethod
    def enumeration_size(self) -> int:
        ...

    @abstractmethod
    def enumeration_chunk(self, start: int, stop: int) -> np.ndarray:
        """Points with enumeration index in [start, stop)"""

    def _check_enumerable(self):
        if self.enumeration_limit is not None and self.enumeration_size > (1 << self.enumeration_limit):
            raise SpaceTooLarge(
                f"{self.name}: {self.enumeration_size} points exceed the enumeration bound 2^{self.enumeration_limit}")

    def iter_points(self, chunk: int = ENUMERATION_CHUNK) -> Iterator[np.ndarray]:
        self._check_enumerable()
        size = self.enumeration_size
        for start in range(0, size, chunk):
            yield self.enumeration_chunk(start, min(start + chunk, size))

    @cached_property
    def space(self) -> SampleSpace:
        self._check_enumerable()
        return SampleSpace.discrete(self.enumeration_chunk(0, self.enumeration_size))

    @property
    def has_exact_normalizer(self) -> bool:
        return True

    def all_log_p(self, theta: np.ndarray) -> np.ndarray:
        return np.concatenate([self.log_p(chunk, theta) for chunk in self.iter_points()])

    def exact_log_normalizer(self, theta: np.ndarray) -> float:
        return float(logsumexp(self.all_log_p(theta)))

    def grad_exact_log_normalizer(self, theta: np.ndarray) -> np.ndarray:
        log_z = self.exact_log_normalizer(theta)
        total = np.zeros(self.n_params)
        for chunk in self.iter_points():
            weights = np.exp(self.log_p(chunk, theta) - log_z)
            total += weights @ self.grad_theta_log_p(chunk, theta)
        return total

    def pmf(self, theta: np.ndarray) -> np.ndarray:
        """Exact pmf over the enumeration order of `space.points`"""
        log_p = self.all_log_p(theta)
        return np.exp(log_p - logsumexp(log_p))


class ScaledModel(UnnormalizedModel):
    """p(x; theta) multiplied by a positive constant"""

    def __init__(self, base: UnnormalizedModel, scale: float):
        if not scale > 0:
            raise DomainError(f"scale must be positive, got {scale}")
        self.base = base
        self.scale = float(scale)
        self.log_scale = float(np.log(scale))
        self.name = f"{base.name}*{scale:g}"
        self.theta_bounds = base.theta_bounds

    @property
    def space(self) -> SampleSpace:
        return self.base.space

    @property
    def n_params(self) -> int:
        return self.base.n_params

    def log_p(self, X, theta):
        return self.base.log_p(X, theta) + self.log_scale

    def grad_theta_log_p(self, X, theta):
        return self.base.grad_theta_log_p(X, theta)

    def hess_theta_log_p(self, X, theta):
        return self.base.hess_theta_log_p(X, theta)

    @property
    def has_exact_normalizer(self) -> bool:
        return self.base.has_exact_normalizer

    def exact_log_normalizer(self, theta):
        return self.base.exact_log_normalizer(theta) + self.log_scale

    def grad_exact_log_normalizer(self, theta):
        return self.base.grad_exact_log_normalizer(theta)

    def default_theta(self, rng=None):
        return self.base.default_theta(rng)


class ExtendedModel:
    """One-parameter extended model q(x; tau) = exp(-c) p(x; theta)"""

    def __init__(self, base: UnnormalizedModel):
        self.base = base
        self.name = base.name

    @property
    def n_params(self) -> int:
        return self.base.n_params + 1

    @property
    def space(self) -> SampleSpace:
        return self.base.space

    @property
    def point_dim(self) -> int:
        return self.base.point_dim

    @property
    def tau_bounds(self) -> Optional[Bounds]:
        if self.base.theta_bounds is None:
            return None
        return [(None, None)] + list(self.base.theta_bounds)

    def log_q(self, X: np.ndarray, tau: Union[Tau, ArrayLike]) -> np.ndarray:
        vec = tau_vector(tau)
        return self.base.log_p(X, vec[1:]) - vec[0]

    def grad_tau_log_q(self, X: np.ndarray, tau: Union[Tau, ArrayLike]) -> np.ndarray:
        vec = tau_vector(tau)
        grad = self.base.grad_theta_log_p(X, vec[1:])
        return np.hstack([-np.ones((grad.shape[0], 1)), grad])

    def hess_tau_log_q(self, X: np.ndarray, tau: Union[Tau, ArrayLike]) -> np.ndarray:
        vec = tau_vector(tau)
        inner = self.base.hess_theta_log_p(X, vec[1:])
        n, d, _ = inner.shape
        hess = np.zeros((n, d + 1, d + 1))
        hess[:, 1:, 1:] = inner
        return hess


class DensityEstimate(ABC):
    """Plug-in estimate eta_n evaluable at any point; eval() is floored"""

    floor: float = ETA_FLOOR

    @abstractmethod
    def raw(self, X: np.ndarray) -> np.ndarray:
        """Unfloored estimate (may be zero or negative)"""

    @property
    def point_dim(self) -> Optional[int]:
        """Dimension of the points the estimate lives on; a 1-D input of this length is one point"""
        return None

    def _points(self, X: ArrayLike) -> np.ndarray:
        return as_points(X, self.point_dim)

    def eval(self, X: ArrayLike) -> np.ndarray:
        return np.maximum(self.raw(self._points(X)), self.floor)

    def log_eval(self, X: ArrayLike) -> np.ndarray:
        values = self.eval(X)
        if np.any(~(values > 0)) or np.any(~np.isfinite(values)):
            raise NonpositiveDensity(
                f"plug-in density is nonpositive after flooring (floor={self.floor}); check the floor setting")
        return np.log(values)


class TabulatedDensity(DensityEstimate):
    """Density given by a table over an enumerable set of points, zero elsewhere"""

    def __init__(self, points: ArrayLike, values: ArrayLike, floor: float = ETA_FLOOR):
        self.points = as_points(points)
        self.values = np.asarray(values, dtype=float).reshape(-1)
        if len(self.values) != len(self.points):
            raise DomainError("table points and values differ in length")
        self.floor = floor
        self._lookup = dict(zip(row_keys(self.points), self.values))

    @property
    def point_dim(self):
        return self.points.shape[1]

    def raw(self, X):
        return np.array([self._lookup.get(key, 0.0) for key in row_keys(self._points(X))])


class FunctionDensity(DensityEstimate):
    """Density given by a vectorized callable"""

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], floor: float = ETA_FLOOR,
                 dim: Optional[int] = None):
        self.func = func
        self.floor = floor
        self.dim = dim

    @property
    def point_dim(self):
        return self.dim

    def raw(self, X):
        return np.asarray(self.func(self._points(X)), dtype=float).reshape(-1)


class ModelDensity(DensityEstimate):
    """The extended model itself, q(.; tau), used as a plug-in"""

    def __init__(self, model: ExtendedModel, tau: Union[Tau, ArrayLike], floor: float = ETA_FLOOR):
        self.model = model
        self.tau = tau_vector(tau)
        self.floor = floor

    @property
    def point_dim(self):
        return self.model.point_dim

    def raw(self, X):
        return np.exp(self.model.log_q(self._points(X), self.tau))

    def log_eval(self, X):
        return np.maximum(self.model.log_q(self._points(X), self.tau), np.log(self.floor))


def log_density_ratio(model: ExtendedModel, tau: Union[Tau, ArrayLike], eta: DensityEstimate,
                      X: ArrayLike) -> np.ndarray:
    """log w(x) = log q(x; tau) - log eta(x)"""
    pts = as_points(X, model.point_dim)
    return model.log_q(pts, tau) - eta.log_eval(pts)


def density_ratio(model: ExtendedModel, tau: Union[Tau, ArrayLike], eta: DensityEstimate,
                  X: ArrayLike) -> np.ndarray:
    """w(x) = q(x; tau) / eta(x), strictly positive and finite"""
    w = np.exp(log_density_ratio(model, tau, eta, X))
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise NonpositiveDensity("density ratio is not positive and finite")
    return w
