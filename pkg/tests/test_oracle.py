import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal, norm

from clutter_vi.baselines import ep, laplace, mf_vi
from clutter_vi.em import run_em
from clutter_vi.gradient import VariationalGaussian
from clutter_vi.model import ClutterModel, Dataset, sample_dataset
from clutter_vi.oracle import (
    QuadratureSettings,
    brute_force_evidence,
    elbo,
    exact_gradient_quadrature,
    finite_difference_gradient,
    gauss_hermite,
    kl_divergence,
    log_marginal_likelihood,
    log_marginal_likelihood_with_error,
    numeric_elbo_maximizer,
)


def conjugate_evidence(model, x):
    """Marginal of the observations is jointly Gaussian when there is no clutter."""
    n = x.size
    cov = model.v_g * np.eye(n) + model.prior_var * np.ones((n, n))
    return multivariate_normal(np.full(n, model.prior_mean), cov).logpdf(x)


def test_gauss_hermite_moments():
    t, w = gauss_hermite(129)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    assert w @ t**2 == pytest.approx(1.0, abs=1e-13)
    assert w @ t**4 == pytest.approx(3.0, abs=1e-12)


@pytest.mark.parametrize("n", [1, 5, 20])
def test_evidence_without_clutter(conjugate_model, n):
    x = sample_dataset(conjugate_model, 2.0, n, n).observations
    assert log_marginal_likelihood(conjugate_model, Dataset(x)) == pytest.approx(conjugate_evidence(conjugate_model, x), abs=1e-9)


def test_evidence_empty(default_model):
    assert log_marginal_likelihood(default_model, Dataset([])) == pytest.approx(0.0, abs=1e-12)
    assert brute_force_evidence(default_model, Dataset([])) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("n", [1, 2, 5, 8, 12])
def test_brute_force_matches_quadrature(default_model, n):
    data = sample_dataset(default_model, 2.0, n, 100 + n)
    assert brute_force_evidence(default_model, data) == pytest.approx(log_marginal_likelihood(default_model, data), abs=1e-9)


def test_brute_force_single_point_closed_form(default_model):
    x = 1.3
    expected = math.log(0.5 * norm.pdf(x, 0, math.sqrt(101)) + 0.5 * norm.pdf(x, 0, math.sqrt(10)))
    assert brute_force_evidence(default_model, Dataset([x])) == pytest.approx(expected, abs=1e-13)


def test_brute_force_chunking_is_invisible(default_model):
    data = sample_dataset(default_model, 2.0, 10, 4)
    assert brute_force_evidence(default_model, data, chunk_bits=3) == pytest.approx(
        brute_force_evidence(default_model, data), abs=1e-12
    )


def test_brute_force_refuses_large_n(default_model):
    with pytest.raises(ValueError):
        brute_force_evidence(default_model, sample_dataset(default_model, 2.0, 21, 0))


def test_evidence_refinement_reports_change(default_model):
    data = sample_dataset(default_model, 2.0, 20, 0)
    value, err = log_marginal_likelihood_with_error(default_model, data)
    assert err <= 1e-9
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert log_marginal_likelihood(default_model, data) == value


@pytest.mark.parametrize("n", [1, 20])
def test_elbo_equals_evidence_at_exact_posterior(conjugate_model, n):
    x = sample_dataset(conjugate_model, 2.0, n, 3).observations
    prec = n + 0.01
    q = VariationalGaussian(x.sum() / prec, 1 / prec)
    assert elbo(conjugate_model, Dataset(x), q) == pytest.approx(conjugate_evidence(conjugate_model, x), abs=1e-9)


def test_elbo_of_prior_without_data(default_model):
    assert elbo(default_model, Dataset([]), VariationalGaussian(0.0, 100.0)) == pytest.approx(0.0, abs=1e-12)


@given(mu=st.floats(-4, 6), log_v=st.floats(-6, 3), seed=st.integers(0, 1000))
@settings(max_examples=60)
def test_elbo_bounded_by_evidence(mu, log_v, seed):
    m = ClutterModel()
    data = sample_dataset(m, 2.0, 10, seed)
    q = VariationalGaussian(mu, math.exp(log_v))
    assert elbo(m, data, q) <= log_marginal_likelihood(m, data) + 1e-7
    assert kl_divergence(m, data, q) >= -1e-7


@pytest.mark.parametrize("seed", range(5))
def test_elbo_stable_under_order_doubling(default_model, seed):
    data = sample_dataset(default_model, 2.0, 20, seed)
    finer = QuadratureSettings(gh_order=257)
    for method in (run_em, laplace, ep, mf_vi):
        q = method(default_model, data).q
        assert elbo(default_model, data, q) == pytest.approx(elbo(default_model, data, q, finer), abs=1e-9)


def test_elbo_wide_q_order_doubling(default_model):
    # a q as wide as the clutter transition is harder; the error is still tiny next to any KL gap
    data = sample_dataset(default_model, 2.0, 20, 2)
    q = VariationalGaussian(3.0, 4.0)
    a = elbo(default_model, data, q)
    assert a == pytest.approx(elbo(default_model, data, q, QuadratureSettings(gh_order=257)), abs=1e-6)


def test_exact_gradient_without_clutter(conjugate_model):
    x = sample_dataset(conjugate_model, 2.0, 15, 1).observations
    q = VariationalGaussian(0.7, 0.3)
    g = exact_gradient_quadrature(conjugate_model, Dataset(x), q)
    assert g.g_mu == pytest.approx(np.sum(x - 0.7) - 0.7 / 100, abs=1e-10)
    assert g.g_v == pytest.approx(0.5 * (1 / 0.3 - 15 - 1 / 100), abs=1e-10)


@given(mu=st.floats(-3, 6), log_v=st.floats(-5, 2), seed=st.integers(0, 1000))
@settings(max_examples=40)
def test_exact_gradient_matches_finite_differences(mu, log_v, seed):
    m = ClutterModel()
    data = sample_dataset(m, 2.0, 10, seed)
    q = VariationalGaussian(mu, math.exp(log_v))
    g = exact_gradient_quadrature(m, data, q)
    fd = finite_difference_gradient(m, data, q)
    # relative error with a unit floor so components near zero do not blow up the ratio
    assert abs(fd.g_mu - g.g_mu) <= 1e-6 * max(abs(g.g_mu), 1.0)
    assert abs(fd.g_v - g.g_v) <= 1e-6 * max(abs(g.g_v), 1.0)


@pytest.mark.parametrize("n", [1, 20])
def test_numeric_maximizer_without_clutter(conjugate_model, n):
    x = sample_dataset(conjugate_model, 2.0, n, 8).observations
    prec = n + 0.01
    res = numeric_elbo_maximizer(conjugate_model, Dataset(x))
    assert res.q.mu_q == pytest.approx(x.sum() / prec, rel=1e-6, abs=1e-6)
    assert res.q.v_q == pytest.approx(1 / prec, rel=1e-6)


def test_numeric_maximizer_empty(default_model):
    res = numeric_elbo_maximizer(default_model, Dataset([]))
    assert res.q == VariationalGaussian(0.0, 100.0)


@pytest.mark.parametrize("seed", range(3))
def test_numeric_maximizer_is_stationary(default_model, seed):
    data = sample_dataset(default_model, 2.0, 20, seed)
    q = numeric_elbo_maximizer(default_model, data).q
    g = exact_gradient_quadrature(default_model, data, q)
    assert abs(g.g_mu) * math.sqrt(q.v_q) < 1e-4
    assert abs(g.g_v) * q.v_q < 1e-4
