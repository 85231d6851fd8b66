#!/usr/bin/env python3
"""
Deterministic optimizer shared by every fitter: quasi-Newton (BFGS, or
L-BFGS-B under box bounds) followed by a short Newton polish, or plain
gradient descent with backtracking
"""
import logging
from dataclasses import dataclass, field
from enum import Enum, auto
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize as scipy_minimize

from .config import FD_RELATIVE_STEP, GRADIENT_TOLERANCE, MAX_ITERATIONS, MAX_POLISH_STEPS
from .core import Bounds, Tau
from .errors import ConfigError

logger = logging.getLogger("sdrme.optimize")

Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]

ARMIJO = 1e-4
MAX_HALVINGS = 40


class Optimizer(Enum):
    QUASI_NEWTON = auto()
    GRADIENT_DESCENT = auto()   # with backtracking

    @classmethod
    def parse(cls, text: str) -> "Optimizer":
        key = text.strip().upper().replace("-", "_")
        aliases = {"BFGS": "QUASI_NEWTON", "QN": "QUASI_NEWTON", "GD": "GRADIENT_DESCENT"}
        try:
            return cls[aliases.get(key, key)]
        except KeyError:
            raise ConfigError(f"unknown optimizer '{text}'", field="optimizer")


@dataclass
class FitConfig:
    initial: Optional[np.ndarray] = None
    gtol: float = GRADIENT_TOLERANCE
    max_iter: int = MAX_ITERATIONS
    optimizer: Optimizer = Optimizer.QUASI_NEWTON
    seed: int = 0
    polish: bool = True

    def __post_init__(self):
        if not self.gtol > 0:
            raise ConfigError(f"gradient tolerance must be positive, got {self.gtol}", field="gtol")
        if self.max_iter < 1:
            raise ConfigError(f"max iterations must be >= 1, got {self.max_iter}", field="max_iter")
        if isinstance(self.optimizer, str):
            self.optimizer = Optimizer.parse(self.optimizer)
        if self.initial is not None:
            self.initial = np.asarray(self.initial, dtype=float).reshape(-1)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "initial": None if self.initial is None else self.initial.tolist(),
            "gtol": self.gtol,
            "max_iter": self.max_iter,
            "optimizer": self.optimizer.name,
            "seed": self.seed,
            "polish": self.polish,
        }


@dataclass
class FitResult:
    """Outcome of one fit; `params` is tau = (c, theta) when has_c, else theta"""
    estimator: str
    params: np.ndarray
    loss: float
    grad_norm: float
    iterations: int
    converged: bool
    has_c: bool = False
    message: str = ""
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def theta_hat(self) -> np.ndarray:
        return self.params[1:] if self.has_c else self.params

    @property
    def tau_hat(self) -> Optional[Tau]:
        return Tau.from_vector(self.params) if self.has_c else None

    @property
    def c_hat(self) -> Optional[float]:
        if self.has_c:
            return float(self.params[0])
        return self.extra.get("c_hat")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "estimator": self.estimator,
            "theta_hat": self.theta_hat.tolist(),
            "c_hat": self.c_hat,
            "loss": self.loss,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "message": self.message,
        }


def _project(x: np.ndarray, bounds: Optional[Bounds]) -> np.ndarray:
    if bounds is None:
        return x
    lo = np.array([-np.inf if b[0] is None else b[0] for b in bounds])
    hi = np.array([np.inf if b[1] is None else b[1] for b in bounds])
    return np.clip(x, lo, hi)


def projected_gradient(x: np.ndarray, g: np.ndarray, bounds: Optional[Bounds]) -> np.ndarray:
    """Gradient with components that push against an active bound zeroed"""
    if bounds is None:
        return g
    pg = g.copy()
    for i, (lo, hi) in enumerate(bounds):
        if lo is not None and x[i] <= lo and g[i] > 0:
            pg[i] = 0.0
        if hi is not None and x[i] >= hi and g[i] < 0:
            pg[i] = 0.0
    return pg


def fd_hessian(objective: Objective, x: np.ndarray) -> np.ndarray:
    """Central differences of the analytic gradient, symmetrized"""
    steps = FD_RELATIVE_STEP * (1.0 + np.abs(x))
    cols = []
    for j, h in enumerate(steps):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((objective(x + e)[1] - objective(x - e)[1]) / (2.0 * h))
    hess = np.column_stack(cols)
    return 0.5 * (hess + hess.T)


class _Tracker:
    """Wraps an objective, guards non-finite values and remembers the best iterate"""

    def __init__(self, objective: Objective):
        self.objective = objective
        self.best_x: Optional[np.ndarray] = None
        self.best_f = np.inf
        self.best_g: Optional[np.ndarray] = None

    def __call__(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            f, g = self.objective(x)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return np.inf, np.zeros_like(x)
        if f < self.best_f:
            self.best_x, self.best_f, self.best_g = x.copy(), float(f), np.array(g, dtype=float)
        return float(f), np.asarray(g, dtype=float)


def _backtrack(fun: _Tracker, x, f, g, direction, bounds, step: float = 1.0):
    """Sufficient-decrease line search; a step that only lowers the gradient norm is also taken"""
    slope = float(g @ direction)
    g_norm = np.linalg.norm(projected_gradient(x, g, bounds))
    for _ in range(MAX_HALVINGS):
        x_new = _project(x + step * direction, bounds)
        f_new, g_new = fun(x_new)
        if np.isfinite(f_new):
            if f_new <= f + ARMIJO * step * slope:
                return x_new, f_new, g_new, step
            if f_new <= f + 1e-12 * (1.0 + abs(f)) and \
                    np.linalg.norm(projected_gradient(x_new, g_new, bounds)) < g_norm:
                return x_new, f_new, g_new, step
        step *= 0.5
    return None


def _newton_polish(fun: _Tracker, x, f, g, cfg: FitConfig, bounds, hessian):
    steps = 0
    for _ in range(MAX_POLISH_STEPS):
        if np.linalg.norm(projected_gradient(x, g, bounds)) <= cfg.gtol:
            break
        H = hessian(x) if hessian is not None else fd_hessian(fun.objective, x)
        scale = max(1.0, float(np.max(np.abs(np.diag(H)))))
        ridge = 0.0
        direction = None
        while ridge <= 1e8 * scale:
            try:
                direction = -cho_solve(cho_factor(H + ridge * np.eye(len(x))), g)
                break
            except (LinAlgError, ValueError):
                ridge = 1e-10 * scale if ridge == 0.0 else ridge * 10.0
        if direction is None or not np.all(np.isfinite(direction)):
            break
        taken = _backtrack(fun, x, f, g, direction, bounds)
        if taken is None:
            break
        x, f, g, _ = taken
        steps += 1
    return x, f, g, steps


def _gradient_descent(fun: _Tracker, x, cfg: FitConfig, bounds):
    f, g = fun(x)
    step = 1.0
    iterations = 0
    for iterations in range(1, cfg.max_iter + 1):
        if np.linalg.norm(projected_gradient(x, g, bounds)) <= cfg.gtol:
            iterations -= 1
            break
        taken = _backtrack(fun, x, f, g, -g, bounds, step=min(1.0, 2.0 * step))
        if taken is None:
            break
        x, f, g, step = taken
    return x, f, g, iterations


def minimize(objective: Objective, x0: np.ndarray, cfg: FitConfig, bounds: Optional[Bounds] = None,
             estimator: str = "fit", has_c: bool = False,
             hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> FitResult:
    """
    Minimize a smooth objective returning (value, gradient).

    Never raises on non-convergence: the best iterate is returned with
    converged=False. converged means the (projected) gradient norm is
    within cfg.gtol.
    """
    fun = _Tracker(objective)
    x = _project(np.asarray(x0, dtype=float).copy(), bounds)
    message = ""

    if cfg.optimizer is Optimizer.QUASI_NEWTON:
        method = "L-BFGS-B" if bounds is not None else "BFGS"
        options = {"gtol": cfg.gtol, "maxiter": cfg.max_iter}
        if method == "L-BFGS-B":
            options["ftol"] = 1e-15
        res = scipy_minimize(fun, x, jac=True, method=method, bounds=bounds, options=options)
        x = _project(res.x, bounds)
        f, g = fun(x)
        iterations = int(res.nit)
        message = str(res.message)
        if cfg.polish and np.isfinite(f):
            x, f, g, polished = _newton_polish(fun, x, f, g, cfg, bounds, hessian)
            iterations += polished
    else:
        x, f, g, iterations = _gradient_descent(fun, x, cfg, bounds)

    if not np.isfinite(f) and fun.best_x is not None:
        x, f, g = fun.best_x, fun.best_f, fun.best_g
    grad_norm = float(np.linalg.norm(projected_gradient(x, g, bounds)))
    converged = bool(np.isfinite(f) and grad_norm <= cfg.gtol)

    logger.debug(f"{estimator}: loss={f:.10g} |grad|={grad_norm:.3g} iterations={iterations}")
    if not converged:
        logger.warning(f"{estimator}: not converged after {iterations} iterations "
                       f"(|grad|={grad_norm:.3g}, tolerance {cfg.gtol:g}) {message}".rstrip())
    return FitResult(estimator, np.asarray(x, dtype=float), float(f), grad_norm, iterations,
                     converged, has_c=has_c, message=message)
