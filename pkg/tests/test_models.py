import itertools

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import gammaln, rel_entr

from sdrme.core import Dataset
from sdrme.errors import ConfigError, DomainError
from sdrme.models import (FlidModel, GenGammaModel, HalfNormalAux, PoissonModel, ProductBernoulliAux, RbmModel,
                          UniformDiscreteAux, build_model, default_aux, misspecified_truth_pmf,
                          rbm_exact_normalizer, sample_discrete_exact, sample_from_pmf, sample_gengamma)
from sdrme.nonparam import EmpiricalPmf

from conftest import fd_gradient


def test_poisson_log_p_and_normalizer(poisson):
    x = np.arange(5.0)
    np.testing.assert_allclose(poisson.log_p(x, [0.5]), 0.5 * x - gammaln(x + 1))
    assert poisson.exact_log_normalizer([np.log(2.0)]) == pytest.approx(2.0)
    # truncation at 60 leaves a negligible tail
    assert np.log(np.exp(poisson.all_log_p([np.log(2.0)])).sum()) == pytest.approx(2.0, abs=1e-12)


def test_rbm_normalizer_at_zero_weights():
    model = RbmModel(d_v=5, d_h=3)
    assert np.exp(rbm_exact_normalizer(model, np.zeros((5, 3)))) == pytest.approx(2.0 ** 5)


def test_rbm_normalizer_by_hand():
    model = RbmModel(d_v=2, d_h=1)
    w1, w2 = 0.3, -0.8
    total = sum(np.cosh(s1 * w1 + s2 * w2) for s1, s2 in itertools.product([-1, 1], repeat=2))
    assert rbm_exact_normalizer(model, [w1, w2]) == pytest.approx(np.log(total))


def test_rbm_hidden_unit_symmetries():
    model = RbmModel(d_v=4, d_h=3)
    W = np.random.default_rng(7).uniform(-1.0, 1.0, (4, 3))
    V = model.space.points
    permuted = W[:, [2, 0, 1]]
    np.testing.assert_allclose(model.log_p(V, permuted.ravel()), model.log_p(V, W.ravel()), rtol=0, atol=1e-13)
    flipped = W.copy()
    flipped[:, 1] *= -1.0
    np.testing.assert_allclose(model.log_p(V, flipped.ravel()), model.log_p(V, W.ravel()), rtol=0, atol=1e-13)
    assert rbm_exact_normalizer(model, flipped) == pytest.approx(rbm_exact_normalizer(model, W), abs=1e-13)


def test_rbm_log_p_is_stable_for_large_weights():
    model = RbmModel(d_v=3, d_h=1)
    values = model.log_p(model.space.points, np.array([400.0, 300.0, 200.0]))
    assert np.all(np.isfinite(values))
    assert values.max() == pytest.approx(900.0 - np.log(2.0))


@pytest.mark.parametrize("model_factory", [lambda: PoissonModel(10), lambda: RbmModel(3, 2), lambda: FlidModel(4, 2),
                                           GenGammaModel])
def test_model_gradients_match_differences(model_factory):
    model = model_factory()
    rng = np.random.default_rng(0)
    if isinstance(model, GenGammaModel):
        X = sample_gengamma(1.3, 1.3, 20, seed=1).points
    else:
        X = model.space.points
    for _ in range(20):
        if isinstance(model, FlidModel):
            theta = rng.uniform(0.0, 1.0, model.n_params)
        elif isinstance(model, GenGammaModel):
            theta = np.array([rng.uniform(0.5, 2.0), rng.uniform(-0.5, 2.0)])
        else:
            theta = rng.uniform(-1.0, 1.0, model.n_params)
        analytic = model.grad_theta_log_p(X, theta)
        for i in range(len(X)):
            fd = fd_gradient(lambda t: model.log_p(X[i:i + 1], t)[0], theta)
            np.testing.assert_allclose(analytic[i], fd, rtol=1e-6, atol=1e-7)
        if model.has_exact_normalizer:
            fd = fd_gradient(model.exact_log_normalizer, theta)
            np.testing.assert_allclose(model.grad_exact_log_normalizer(theta), fd, rtol=1e-6, atol=1e-7)


def test_rbm_hessian_matches_differences(rbm):
    X = rbm.space.points
    theta = np.random.default_rng(1).normal(size=rbm.n_params)
    for i in range(len(X)):
        fd = np.stack([fd_gradient(lambda t: rbm.grad_theta_log_p(X[i:i + 1], t)[0, j], theta)
                       for j in range(rbm.n_params)])
        np.testing.assert_allclose(rbm.hess_theta_log_p(X[i:i + 1], theta)[0], fd, atol=1e-7)


def test_flid_empty_set_and_ties():
    model = FlidModel(V=3, L=1)
    theta = np.array([0.5, 0.2, -0.1, 0.4, 0.4, 0.1])
    empty = np.zeros((1, 3))
    assert model.log_p(empty, theta)[0] == 0.0
    np.testing.assert_array_equal(model.grad_theta_log_p(empty, theta), 0.0)
    # items 0 and 1 tie in the only dimension; the smaller index takes the max
    both = np.array([[1.0, 1.0, 0.0]])
    grad = model.grad_theta_log_p(both, theta)[0]
    np.testing.assert_array_equal(grad[3:], [0.0, -1.0, 0.0])
    assert model.log_p(both, theta)[0] == pytest.approx(0.5 + 0.2 + 0.4 - 0.8)


def test_flid_bounds_keep_embeddings_nonnegative(flid):
    assert flid.theta_bounds[:flid.V] == [(None, None)] * flid.V
    assert all(lo == 0.0 for lo, _ in flid.theta_bounds[flid.V:])


def test_gengamma_normalizer_against_quadrature(gengamma):
    for theta in ([1.3, 1.3], [0.7, 0.0], [2.0, 3.5]):
        value, _ = integrate.quad(lambda x: np.exp(-theta[0] * x * x) * x ** theta[1], 0, np.inf)
        assert gengamma.exact_log_normalizer(np.array(theta)) == pytest.approx(np.log(value), abs=1e-8)
    with pytest.raises(DomainError):
        gengamma.exact_log_normalizer(np.array([-1.0, 0.0]))


def test_gengamma_sampler_second_moment():
    data = sample_gengamma(1.3, 1.3, 100_000, seed=0)
    assert np.mean(data.points[:, 0] ** 2) == pytest.approx(2.3 / 2.6, abs=0.01)
    assert np.all(data.points > 0)


def test_samplers_are_deterministic(poisson):
    a = sample_discrete_exact(poisson, [np.log(2.0)], 100, seed=4)
    b = sample_discrete_exact(poisson, [np.log(2.0)], 100, seed=4)
    assert a.digest() == b.digest()
    assert sample_gengamma(1.3, 1.3, 10, seed=2).digest() == sample_gengamma(1.3, 1.3, 10, seed=2).digest()


def _within_four_sigma(counts, pmf, n):
    sigma = np.sqrt(n * pmf * (1.0 - pmf))
    return np.all(np.abs(counts - n * pmf) <= 4.0 * sigma + 1e-9)


def test_rbm_sampler_frequencies():
    model = RbmModel(d_v=4, d_h=2)
    theta = np.random.default_rng(8).uniform(-1.0, 1.0, model.n_params)
    n = 100_000
    data = sample_discrete_exact(model, theta, n, seed=9)
    counts = EmpiricalPmf(data).raw(model.space.points) * n
    assert _within_four_sigma(counts, model.pmf(theta), n)


def test_flid_sampler_hits_the_empty_set_at_its_exact_rate():
    model = FlidModel(V=12, L=2)
    assert model.enumeration_size == 4096
    rng = np.random.default_rng(10)
    theta = np.concatenate([rng.uniform(-1.5, -0.5, 12), rng.uniform(0.0, 1.0, 24)])
    pmf = model.pmf(theta)
    empty = int(np.flatnonzero(~model.space.points.any(axis=1))[0])
    n = 100_000
    data = sample_discrete_exact(model, theta, n, seed=11)
    hits = np.sum(~data.points.any(axis=1))
    assert _within_four_sigma(np.array([hits]), pmf[empty:empty + 1], n)


def test_gengamma_square_is_exponential():
    x = sample_gengamma(1.0, 1.0, 5000, seed=12).points[:, 0]
    assert stats.kstest(x ** 2, "expon").pvalue > 0.01


def test_sample_from_pmf_frequencies():
    data = sample_from_pmf(np.array([[0.0], [1.0]]), np.array([0.25, 0.75]), 40_000, seed=1)
    assert data.points[:, 0].mean() == pytest.approx(0.75, abs=0.01)


def test_misspecified_truth():
    truth = misspecified_truth_pmf(60)
    assert truth.pmf.sum() == pytest.approx(1.0)
    assert np.all(truth.pmf >= 0)
    poisson_pmf = np.exp(PoissonModel(60).all_log_p([np.log(2.0)]) - 2.0)
    assert np.abs(truth.pmf - poisson_pmf).max() > 0.01
    model = PoissonModel(60)
    divergences = [np.sum(rel_entr(truth.pmf, model.pmf(np.array([np.log(lam)]))))
                   for lam in np.linspace(0.5, 8.0, 301)]
    assert min(divergences) > 0.001
    assert truth.sample(50, seed=1).n == 50
    with pytest.raises(DomainError):
        misspecified_truth_pmf(10)


def test_auxiliary_distributions():
    rng = np.random.default_rng(0)
    uniform = UniformDiscreteAux(np.arange(31.0))
    assert uniform.log_density([[3.0]])[0] == pytest.approx(-np.log(31))
    assert uniform.log_density([[40.0]])[0] == -np.inf
    assert uniform.sample(10, rng).shape == (10, 1)

    product = ProductBernoulliAux([0.0, 0.5, 1.0])
    np.testing.assert_allclose(product.probs, [1e-3, 0.5, 1 - 1e-3])
    assert product.log_density([[0.0, 1.0, 1.0]])[0] == pytest.approx(np.log(0.999 * 0.5 * 0.999))

    half = HalfNormalAux(2.0)
    total, _ = integrate.quad(lambda x: np.exp(half.log_density([[x]])[0]), 0, np.inf)
    assert total == pytest.approx(1.0)
    assert np.all(half.sample(100, rng) > 0)


def test_default_aux_covers_data():
    model = PoissonModel(60)
    data = Dataset.from_points([0.0, 45.0])
    aux = default_aux(model, data)
    assert np.all(np.isfinite(aux.log_density(data.points)))
    with pytest.raises(DomainError):
        HalfNormalAux(0.0)


def test_build_model_registry():
    assert isinstance(build_model("RBM", {"d_v": 3, "d_h": 1}), RbmModel)
    with pytest.raises(ConfigError, match="model"):
        build_model("ising")
    with pytest.raises(ConfigError, match="model_params"):
        build_model("flid", {"V": 3})
