import numpy as np
import pytest

from sdrme.errors import ConfigError
from sdrme.optimize import FitConfig, Optimizer, fd_hessian, minimize, projected_gradient


def rosenbrock(x):
    value = (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
    grad = np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])
    return value, grad


def quadratic(x):
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -1.0])
    return 0.5 * x @ A @ x - b @ x, A @ x - b


def test_quasi_newton_reaches_tolerance():
    result = minimize(rosenbrock, np.array([-1.2, 1.0]), FitConfig(), estimator="rosenbrock")
    assert result.converged
    assert result.grad_norm <= 1e-8
    np.testing.assert_allclose(result.params, [1.0, 1.0], atol=1e-6)


def test_gradient_descent_on_quadratic():
    cfg = FitConfig(optimizer="gd", max_iter=2000)
    result = minimize(quadratic, np.zeros(2), cfg)
    assert result.converged
    np.testing.assert_allclose(result.params, np.linalg.solve([[3.0, 1.0], [1.0, 2.0]], [1.0, -1.0]), atol=1e-7)


def test_bounds_are_respected():
    cfg = FitConfig()
    result = minimize(quadratic, np.array([1.0, 1.0]), cfg, bounds=[(None, None), (0.0, None)])
    assert result.params[1] >= 0.0
    # the unconstrained optimum has x1 < 0, so the bound is active
    assert result.params[1] == pytest.approx(0.0, abs=1e-10)
    assert result.params[0] == pytest.approx(1.0 / 3.0, abs=1e-7)
    assert result.converged


def test_projected_gradient_zeroes_blocked_components():
    pg = projected_gradient(np.array([0.0, 1.0]), np.array([2.0, 3.0]), [(0.0, None), (None, None)])
    np.testing.assert_array_equal(pg, [0.0, 3.0])


def test_non_convergence_is_reported_not_raised(caplog):
    result = minimize(rosenbrock, np.array([-1.2, 1.0]), FitConfig(max_iter=2, polish=False))
    assert not result.converged
    assert np.all(np.isfinite(result.params))
    assert "not converged" in caplog.text


def test_non_finite_region_keeps_best_iterate():
    def objective(x):
        if x[0] > 2.0:
            return np.nan, np.full_like(x, np.nan)
        return (x[0] - 3.0) ** 2, np.array([2 * (x[0] - 3.0)])

    result = minimize(objective, np.array([0.0]), FitConfig(max_iter=50))
    assert np.isfinite(result.loss)
    assert result.params[0] <= 2.0
    assert not result.converged


def test_fd_hessian():
    np.testing.assert_allclose(fd_hessian(quadratic, np.array([0.3, -0.2])), [[3.0, 1.0], [1.0, 2.0]], atol=1e-8)


def test_deterministic():
    a = minimize(rosenbrock, np.array([-1.2, 1.0]), FitConfig())
    b = minimize(rosenbrock, np.array([-1.2, 1.0]), FitConfig())
    np.testing.assert_array_equal(a.params, b.params)
    assert a.iterations == b.iterations


def test_fit_config_validation():
    with pytest.raises(ConfigError, match="gtol"):
        FitConfig(gtol=0.0)
    with pytest.raises(ConfigError, match="max_iter"):
        FitConfig(max_iter=0)
    with pytest.raises(ConfigError, match="optimizer"):
        FitConfig(optimizer="newton-raphson")
    assert FitConfig(optimizer="bfgs").optimizer is Optimizer.QUASI_NEWTON
    assert FitConfig(initial=[1, 2]).initial.tolist() == [1.0, 2.0]


def test_fit_result_views():
    result = minimize(quadratic, np.zeros(2), FitConfig(), has_c=True)
    assert result.c_hat == result.params[0]
    np.testing.assert_array_equal(result.theta_hat, result.params[1:])
    assert result.tau_hat.c == result.params[0]
    assert set(result.to_dict()) >= {"estimator", "theta_hat", "c_hat", "loss", "grad_norm", "converged"}
