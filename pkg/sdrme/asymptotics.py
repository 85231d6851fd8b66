#!/usr/bin/env python3
"""
Plug-in variance estimates for the fitted extended parameter: the efficient
(well-specified) form, the misspecified sandwich, its theta-only reduction,
and the estimating-equation diagnostics of the ns-gamma estimator
"""
import logging
from dataclasses import dataclass
from enum import Enum, auto
from typing import Any, Dict, Tuple

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.special import logsumexp, softmax

from .bregman import GammaConfig
from .config import CONDITION_LIMIT
from .core import Dataset, DensityEstimate, ExtendedModel, UnnormalizedModel, tau_vector
from .errors import SingularOmega

logger = logging.getLogger("sdrme.asymptotics")


class VarianceKind(Enum):
    WELL_SPECIFIED = auto()
    SANDWICH = auto()
    SANDWICH_THETA_ONLY = auto()


@dataclass(eq=False)
class VarianceReport:
    omega_hat: np.ndarray             # Omega, or Omega_1m for the sandwich kinds
    theta_block_inverse: np.ndarray   # asymptotic covariance of sqrt(n)(theta_hat - theta*)
    standard_errors: np.ndarray
    kind: VarianceKind
    n: int
    covariance: np.ndarray = None     # full (c, theta) asymptotic covariance when available

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.name,
            "n": self.n,
            "omega_hat": self.omega_hat.tolist(),
            "theta_block_inverse": self.theta_block_inverse.tolist(),
            "standard_errors": self.standard_errors.tolist(),
        }


def guarded_inverse(M: np.ndarray, what: str = "Omega") -> np.ndarray:
    """Inverse by pivoted LU; SingularOmega when the condition number exceeds the limit"""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise SingularOmega(f"{what} has non-finite entries")
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularOmega(f"{what} is singular or ill-conditioned (condition number {cond:.3g})")
    return lu_solve(lu_factor(M), np.eye(len(M)))


def _symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _covariance_scores(scores: np.ndarray) -> np.ndarray:
    dev = scores - scores.mean(axis=0)
    return dev.T @ dev / len(scores)


def omega_plug_in(model: ExtendedModel, tau_hat, data: Dataset) -> np.ndarray:
    """(1/n) sum of outer products of the tau-score at tau_hat"""
    scores = model.grad_tau_log_q(data.points, tau_vector(tau_hat))
    omega = _symmetrize(scores.T @ scores / data.n)
    guarded_inverse(omega)
    return omega


def schur_theta_block(M: np.ndarray) -> np.ndarray:
    """M_tt - M_tc M_cc^-1 M_ct, with c the first coordinate"""
    return M[1:, 1:] - np.outer(M[1:, 0], M[0, 1:]) / M[0, 0]


def fisher_from_omega(omega: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """theta-block of Omega^-1 by block (Schur complement) inversion and by full inversion"""
    if not omega[0, 0] > 0:
        raise SingularOmega("Omega has a zero c-c entry")
    by_schur = guarded_inverse(schur_theta_block(omega), "Schur complement of Omega")
    by_full = guarded_inverse(omega)[1:, 1:]
    return by_schur, by_full


def well_specified_report(model: ExtendedModel, tau_hat, data: Dataset) -> VarianceReport:
    omega = omega_plug_in(model, tau_hat, data)
    covariance = guarded_inverse(omega)
    theta_block = _symmetrize(covariance[1:, 1:])
    se = np.sqrt(np.diag(theta_block) / data.n)
    return VarianceReport(omega, theta_block, se, VarianceKind.WELL_SPECIFIED, data.n, covariance)


def efficient_se(model: ExtendedModel, tau_hat, data: Dataset) -> np.ndarray:
    """sqrt(diag of the theta-block of Omega^-1) / sqrt(n)"""
    return well_specified_report(model, tau_hat, data).standard_errors


def _sandwich_pieces(model: ExtendedModel, tau_hat, data: Dataset, eta: DensityEstimate):
    """Omega_1m = -mean[(1 - w) hess log q] + mean[w s s^T] and Omega_2m = Cov(s)"""
    vec = tau_vector(tau_hat)
    X = data.points
    w = np.exp(model.log_q(X, vec) - eta.log_eval(X))
    scores = model.grad_tau_log_q(X, vec)
    hess = model.hess_tau_log_q(X, vec)
    bread = (-np.einsum("i,ijk->jk", 1.0 - w, hess) + np.einsum("i,ij,ik->jk", w, scores, scores)) / data.n
    return _symmetrize(bread), _covariance_scores(scores)


def sandwich_misspecified(model: ExtendedModel, tau_hat, data: Dataset,
                          eta: DensityEstimate) -> VarianceReport:
    """
    Omega_1m^-1 Omega_2m Omega_1m^-1 for the s-KL estimator, valid under misspecification.

    With eta equal to q(.; tau_hat) this collapses to Omega^-1 - e1 e1^T, so its
    theta-block is the efficient one.
    """
    bread, butter = _sandwich_pieces(model, tau_hat, data, eta)
    bread_inv = guarded_inverse(bread, "Omega_1m")
    covariance = _symmetrize(bread_inv @ butter @ bread_inv)
    theta_block = covariance[1:, 1:]
    se = np.sqrt(np.maximum(np.diag(theta_block), 0.0) / data.n)
    return VarianceReport(bread, theta_block, se, VarianceKind.SANDWICH, data.n, covariance)


def sandwich_theta_only(model: ExtendedModel, tau_hat, data: Dataset,
                        eta: DensityEstimate) -> VarianceReport:
    """Sandwich with c profiled out: Schur complement of Omega_1m and Var of the theta-score"""
    bread, butter = _sandwich_pieces(model, tau_hat, data, eta)
    if not bread[0, 0] > 0:
        raise SingularOmega("Omega_1m has a nonpositive c-c entry")
    bread_theta_inv = guarded_inverse(schur_theta_block(bread), "Schur complement of Omega_1m")
    theta_block = _symmetrize(bread_theta_inv @ butter[1:, 1:] @ bread_theta_inv)
    se = np.sqrt(np.maximum(np.diag(theta_block), 0.0) / data.n)
    return VarianceReport(schur_theta_block(bread), theta_block, se, VarianceKind.SANDWICH_THETA_ONLY, data.n)


def _log_ratio(model: UnnormalizedModel, theta, data: Dataset, eta: DensityEstimate) -> np.ndarray:
    return model.log_p(data.points, np.asarray(theta, dtype=float)) - eta.log_eval(data.points)


def profile_constants(model: UnnormalizedModel, theta, data: Dataset, eta: DensityEstimate,
                      cfg: GammaConfig) -> Tuple[float, float]:
    """(c1, c2) = (log mean w^beta, log mean w^alpha)"""
    log_w = _log_ratio(model, theta, data, eta)
    log_n = np.log(data.n)
    return float(logsumexp(cfg.beta * log_w) - log_n), float(logsumexp(cfg.alpha * log_w) - log_n)


def ns_gamma_score(model: UnnormalizedModel, theta, data: Dataset, eta: DensityEstimate,
                   cfg: GammaConfig) -> np.ndarray:
    """w^beta-weighted mean of the theta-score minus its w^alpha-weighted mean"""
    log_w = _log_ratio(model, theta, data, eta)
    scores = model.grad_theta_log_p(data.points, np.asarray(theta, dtype=float))
    return (softmax(cfg.beta * log_w) - softmax(cfg.alpha * log_w)) @ scores


def ns_gamma_moment_check(model: UnnormalizedModel, theta_hat, c1: float, c2: float, data: Dataset,
                          eta: DensityEstimate, cfg: GammaConfig) -> np.ndarray:
    """
    Sample mean of the estimating function
    (s (w^beta e^-c1 - w^alpha e^-c2), e^c1 - w^beta, e^c2 - w^alpha).
    """
    log_w = _log_ratio(model, theta_hat, data, eta)
    scores = model.grad_theta_log_p(data.points, np.asarray(theta_hat, dtype=float))
    weights = np.exp(cfg.beta * log_w - c1) - np.exp(cfg.alpha * log_w - c2)
    theta_part = weights @ scores / data.n
    first = np.exp(c1) - np.mean(np.exp(cfg.beta * log_w))
    second = np.exp(c2) - np.mean(np.exp(cfg.alpha * log_w))
    return np.concatenate([theta_part, [first, second]])
