#!/usr/bin/env python3
"""
Nonparametric plug-in density estimates: empirical pmf, uniform-regularized
pmf and a Gaussian-based high-order kernel density estimator whose
bandwidth is chosen by leave-one-out likelihood cross validation
"""
import logging
from collections import Counter
from typing import Optional, Sequence, Union

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import BANDWIDTH_GRID_SIZE, CV_MIN_SAMPLES, ETA_FLOOR, KERNEL_ORDER
from .core import ArrayLike, Dataset, DensityEstimate, SampleSpace, as_points, row_keys
from .errors import ConfigError, DegenerateData, DomainError

logger = logging.getLogger("sdrme.nonparam")

KERNEL_ORDERS = (2, 4, 6)
_ROW_CHUNK = 512
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class EmpiricalPmf(DensityEstimate):
    """Relative frequencies n_x / n of the observed points"""

    def __init__(self, data: Union[Dataset, ArrayLike], floor: float = ETA_FLOOR):
        points = data.points if isinstance(data, Dataset) else as_points(data)
        if len(points) == 0:
            raise DomainError("n >= 1 required")
        self.n = len(points)
        self.dim = points.shape[1]
        self.floor = floor
        self.counts = Counter(row_keys(points))
        first_rows = {}
        for key, row in zip(row_keys(points), points):
            first_rows.setdefault(key, row)
        self.support = np.array([first_rows[key] for key in self.counts])

    @property
    def point_dim(self):
        return self.dim

    def raw(self, X):
        keys = row_keys(self._points(X))
        return np.array([self.counts.get(key, 0) for key in keys], dtype=float) / self.n

    def masses(self) -> np.ndarray:
        """Mass of each support point, in `support` order"""
        return np.array(list(self.counts.values()), dtype=float) / self.n


class RegularizedPmf(DensityEstimate):
    """(1 - 1/n) p_n + (1/n) u_n with u_n the empirical pmf of n uniform draws"""

    def __init__(self, data: Union[Dataset, ArrayLike], uniform_draws: ArrayLike,
                 floor: float = ETA_FLOOR):
        self.base = EmpiricalPmf(data, floor)
        self.uniform_part = EmpiricalPmf(uniform_draws, floor)
        self.n = self.base.n
        self.floor = floor

    @property
    def point_dim(self):
        return self.base.dim

    @classmethod
    def from_space(cls, data: Dataset, space: SampleSpace, rng=None,
                   floor: float = ETA_FLOOR) -> "RegularizedPmf":
        """Draw the n uniform points over an enumerable space"""
        if not space.is_enumerable:
            raise DomainError("uniform regularization needs an enumerable space")
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        idx = rng.integers(0, space.size, size=data.n)
        return cls(data, space.points[idx], floor)

    def raw(self, X):
        weight = 1.0 / self.n
        return (1.0 - weight) * self.base.raw(X) + weight * self.uniform_part.raw(X)


def empirical_pmf_eval(pmf: Union[EmpiricalPmf, RegularizedPmf], x: ArrayLike):
    """Relative frequency (or regularized mixture) at x; 0 off-support for the plain pmf"""
    values = pmf.raw(x)
    return float(values[0]) if np.ndim(x) <= 1 and len(values) == 1 else values


def gaussian_kernel(u: np.ndarray, order: int = KERNEL_ORDER) -> np.ndarray:
    """Gaussian-based polynomial kernel of order 2, 4 or 6"""
    phi = _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    if order == 2:
        return phi
    u2 = u * u
    if order == 4:
        return 0.5 * (3.0 - u2) * phi
    if order == 6:
        return 0.125 * (15.0 - 10.0 * u2 + u2 * u2) * phi
    raise ConfigError(f"kernel order must be one of {KERNEL_ORDERS}, got {order}", field="kernel_order")


def _kernel_sums(X: np.ndarray, centers: np.ndarray, bandwidth: float, order: int) -> np.ndarray:
    """For each row of X, sum over centers of the product kernel at (center - x) / bandwidth"""
    out = np.empty(len(X))
    for start in range(0, len(X), _ROW_CHUNK):
        block = X[start:start + _ROW_CHUNK]
        u = (centers[None, :, :] - block[:, None, :]) / bandwidth
        out[start:start + _ROW_CHUNK] = np.prod(gaussian_kernel(u, order), axis=2).sum(axis=1)
    return out


class KdeEstimate(BaseEstimator, DensityEstimate):
    """
    Product-kernel density estimate (1 / (n h^d)) sum_i prod_j K((x_ij - x_j) / h).

    With bandwidth=None, fit() selects it by leave-one-out likelihood CV.
    High-order kernels go negative in the tails; eval() floors.
    """

    def __init__(self, bandwidth: Optional[float] = None, kernel_order: int = KERNEL_ORDER,
                 floor: float = ETA_FLOOR, candidates: Optional[Sequence[float]] = None,
                 n_jobs: int = 1):
        self.bandwidth = bandwidth
        self.kernel_order = kernel_order
        self.floor = floor
        self.candidates = candidates
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        data = X if isinstance(X, Dataset) else Dataset.from_points(X)
        if self.kernel_order not in KERNEL_ORDERS:
            raise ConfigError(f"kernel order must be one of {KERNEL_ORDERS}", field="kernel_order")
        if self.bandwidth is None:
            self.bandwidth_ = select_bandwidth_cv(data, self.kernel_order, self.candidates,
                                                  n_jobs=self.n_jobs, floor=self.floor)
        else:
            if not self.bandwidth > 0:
                raise DomainError(f"bandwidth must be positive, got {self.bandwidth}")
            self.bandwidth_ = float(self.bandwidth)
        self.data_ = data.points
        self.dim_ = data.dim
        return self

    @property
    def n(self) -> int:
        check_is_fitted(self, "data_")
        return len(self.data_)

    @property
    def point_dim(self):
        return getattr(self, "dim_", None)

    def raw(self, X):
        check_is_fitted(self, "data_")
        pts = self._points(X)
        sums = _kernel_sums(pts, self.data_, self.bandwidth_, self.kernel_order)
        return sums / (len(self.data_) * self.bandwidth_ ** self.dim_)

    def score_samples(self, X):
        return self.log_eval(X)


def kde_eval(kde: KdeEstimate, x: ArrayLike):
    """Floored KDE value at x"""
    values = kde.eval(x)
    return float(values[0]) if len(values) == 1 else values


def bandwidth_grid(data: Union[Dataset, ArrayLike], size: int = BANDWIDTH_GRID_SIZE) -> np.ndarray:
    """Log-spaced candidates on [0.05 s n^(-1/5), 5 s] with s the sample standard deviation"""
    pts = data.points if isinstance(data, Dataset) else as_points(data)
    n = len(pts)
    if n < 2:
        raise DegenerateData("bandwidth selection needs n >= 2")
    sigma = float(np.mean(np.std(pts, axis=0, ddof=1)))
    if not sigma > 0:
        raise DegenerateData("all data points are identical")
    return np.geomspace(0.05 * sigma * n ** -0.2, 5.0 * sigma, size)


def loo_log_likelihood(points: np.ndarray, bandwidth: float, kernel_order: int = KERNEL_ORDER,
                       floor: float = ETA_FLOOR) -> float:
    """sum_i log max(eta_{-i}(x_i), floor)"""
    n, d = points.shape
    self_term = gaussian_kernel(np.zeros(1), kernel_order)[0] ** d
    sums = _kernel_sums(points, points, bandwidth, kernel_order) - self_term
    values = sums / ((n - 1) * bandwidth ** d)
    return float(np.sum(np.log(np.maximum(values, floor))))


def select_bandwidth_cv(data: Union[Dataset, ArrayLike], kernel_order: int = KERNEL_ORDER,
                        candidates: Optional[Sequence[float]] = None, n_jobs: int = 1,
                        floor: float = ETA_FLOOR) -> float:
    """Candidate maximizing the leave-one-out log-likelihood; ties go to the larger bandwidth"""
    pts = data.points if isinstance(data, Dataset) else as_points(data)
    if len(pts) < 2:
        raise DegenerateData("bandwidth selection needs n >= 2")
    if np.all(pts == pts[0]):
        raise DegenerateData("all data points are identical")
    if len(pts) < CV_MIN_SAMPLES:
        logger.warning(f"bandwidth CV on only {len(pts)} points; the selection will be noisy")

    grid = bandwidth_grid(pts) if candidates is None else np.asarray(candidates, dtype=float)
    if np.any(~(grid > 0)):
        raise DomainError("bandwidth candidates must be positive")
    grid = np.sort(grid)

    scores = Parallel(n_jobs=n_jobs)(
        delayed(loo_log_likelihood)(pts, h, kernel_order, floor) for h in grid)

    best = 0
    for i, score in enumerate(scores):
        if score >= scores[best]:
            best = i
    logger.debug(f"selected bandwidth {grid[best]:.4g} (LOO log-likelihood {scores[best]:.4f})")
    return float(grid[best])
