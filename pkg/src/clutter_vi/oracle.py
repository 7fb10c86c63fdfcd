"""Numerical ground truth for the clutter problem.

Evidence by trapezoid integration of the log joint (and, for small n, by
exact expansion into 2^n Gaussian integrals), ELBO and its exact gradient by
Gauss-Hermite quadrature, and a Nelder-Mead ELBO maximiser used as the
best-achievable Gaussian reference.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .gradient import GradientPair, VariationalGaussian
from .model import LOG_2PI, ClutterModel, Dataset, log_joint, log_likelihood_factors, normal_logpdf
from .result import MethodResult, TraceRow

BRUTE_FORCE_MAX_N = 20


class QuadratureWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class QuadratureSettings:
    gh_order: int = 129
    trapezoid_points: int = 20001
    integration_halfwidth: float = 12.0
    evidence_tol: float = 1e-9
    max_refinements: int = 4

    def __post_init__(self):
        if self.gh_order < 3 or self.gh_order % 2 == 0:
            raise ValueError("gh_order must be odd and >= 3")
        if self.trapezoid_points < 101:
            raise ValueError("trapezoid_points must be >= 101")


DEFAULT_QUADRATURE = QuadratureSettings()


@lru_cache(maxsize=16)
def gauss_hermite(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for E[f(t)], t ~ N(0, 1)."""
    t, wts = np.polynomial.hermite_e.hermegauss(order)
    wts = wts / math.sqrt(2.0 * math.pi)
    t.setflags(write=False)
    wts.setflags(write=False)
    return t, wts


# -- evidence ---------------------------------------------------------------


def _evidence_bounds(model: ClutterModel, data: Dataset, halfwidth: float) -> tuple[float, float]:
    sp = math.sqrt(model.prior_var)
    lo, hi = model.prior_mean - halfwidth * sp, model.prior_mean + halfwidth * sp
    if data.n:
        sg = math.sqrt(model.v_g)
        lo = min(lo, float(data.observations.min()) - 8.0 * sg)
        hi = max(hi, float(data.observations.max()) + 8.0 * sg)
    return lo, hi


def _log_trapezoid(logf: np.ndarray, h: float) -> float:
    # endpoints get half weight
    logw = np.zeros_like(logf)
    logw[0] = logw[-1] = -math.log(2.0)
    return float(logsumexp(logf + logw) + math.log(h))


def log_marginal_likelihood_with_error(
    model: ClutterModel, data: Dataset, qs: QuadratureSettings = DEFAULT_QUADRATURE
) -> tuple[float, float]:
    """ln p(X) and the change seen under the last grid doubling."""
    lo, hi = _evidence_bounds(model, data, qs.integration_halfwidth)
    points = qs.trapezoid_points
    coarse = None
    for _ in range(qs.max_refinements + 1):
        grid = np.linspace(lo, hi, 2 * points - 1)
        logf = log_joint(model, data, grid)
        h = (hi - lo) / (2 * points - 2)
        if coarse is None:
            coarse = _log_trapezoid(logf[::2], 2 * h)
        fine = _log_trapezoid(logf, h)
        err = abs(fine - coarse)
        if err <= qs.evidence_tol:
            return fine, err
        coarse, points = fine, 2 * points - 1
    return fine, err


def log_marginal_likelihood(model: ClutterModel, data: Dataset, qs: QuadratureSettings = DEFAULT_QUADRATURE) -> float:
    value, err = log_marginal_likelihood_with_error(model, data, qs)
    if err > qs.evidence_tol:
        warnings.warn(f"evidence did not converge under refinement (last change {err:.3g})", QuadratureWarning)
    return value


def _log_gaussian_evidence(k, s1, s2, model: ClutterModel):
    """ln of prior(mu) * prod N(x_j; mu, v_g) integrated over mu, from subset sums."""
    vg, mp, vp = model.v_g, model.prior_mean, model.prior_var
    prec = 1.0 / vp + k / vg
    lin = mp / vp + s1 / vg
    quad = s2 / vg + mp * mp / vp - lin * lin / prec
    return -0.5 * k * (LOG_2PI + math.log(vg)) - 0.5 * np.log(vp * prec) - 0.5 * quad


def brute_force_evidence(model: ClutterModel, data: Dataset, chunk_bits: int = 14) -> float:
    """ln p(X) by summing all 2^n signal/clutter assignments in closed form."""
    n = data.n
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute-force evidence needs n <= {BRUTE_FORCE_MAX_N}, got {n}")
    x = data.observations
    with np.errstate(divide="ignore"):
        log_sig = math.log1p(-model.w) if model.w < 1 else -math.inf
    log_clut = model.log_clutter(x)

    bits = np.arange(n)
    total = 2**n
    step = 2 ** min(chunk_bits, n)
    parts = []
    for start in range(0, total, step):
        masks = np.arange(start, start + step, dtype=np.int64)
        sel = ((masks[:, None] >> bits) & 1).astype(bool)
        k = sel.sum(axis=1)
        s1 = np.where(sel, x, 0.0).sum(axis=1)
        s2 = np.where(sel, x * x, 0.0).sum(axis=1)
        with np.errstate(invalid="ignore"):
            log_mix = np.where(k > 0, k * log_sig, 0.0) + np.where(sel, 0.0, log_clut).sum(axis=1)
        parts.append(logsumexp(log_mix + _log_gaussian_evidence(k, s1, s2, model)))
    return float(logsumexp(parts))


# -- ELBO and gradients ------------------------------------------------------


def expected_log_likelihood(model: ClutterModel, data: Dataset, q: VariationalGaussian, qs=DEFAULT_QUADRATURE) -> float:
    if data.n == 0:
        return 0.0
    t, wts = gauss_hermite(qs.gh_order)
    mu = q.mu_q + math.sqrt(q.v_q) * t
    ll = log_likelihood_factors(model, data.observations[None, :], mu[:, None]).sum(axis=1)
    return float(wts @ ll)


def elbo(model: ClutterModel, data: Dataset, q: VariationalGaussian, qs: QuadratureSettings = DEFAULT_QUADRATURE) -> float:
    """E_q[sum ln L_i] by quadrature plus closed-form prior cross term and entropy."""
    prior_term = -0.5 * (LOG_2PI + math.log(model.prior_var)) - 0.5 * (
        (q.mu_q - model.prior_mean) ** 2 + q.v_q
    ) / model.prior_var
    entropy = 0.5 * (LOG_2PI + 1.0 + math.log(q.v_q))
    return expected_log_likelihood(model, data, q, qs) + prior_term + entropy


def kl_divergence(
    model: ClutterModel,
    data: Dataset,
    q: VariationalGaussian,
    qs: QuadratureSettings = DEFAULT_QUADRATURE,
    log_evidence: float | None = None,
) -> float:
    """KL(q || p(mu | X)) = ln p(X) - ELBO; pass ``log_evidence`` to reuse it."""
    lz = log_marginal_likelihood(model, data, qs) if log_evidence is None else log_evidence
    return lz - elbo(model, data, q, qs)


def exact_gradient_quadrature(
    model: ClutterModel, data: Dataset, q: VariationalGaussian, qs: QuadratureSettings = DEFAULT_QUADRATURE
) -> GradientPair:
    """Reparameterised ELBO gradient with the eps-integrals done by Gauss-Hermite."""
    g_mu = (model.prior_mean - q.mu_q) / model.prior_var
    g_v = 0.5 * (1.0 / q.v_q - 1.0 / model.prior_var)
    if data.n == 0:
        return GradientPair(g_mu, g_v)
    t, wts = gauss_hermite(qs.gh_order)
    sq = math.sqrt(q.v_q)
    mu = (q.mu_q + sq * t)[:, None]
    x = data.observations[None, :]
    with np.errstate(divide="ignore"):
        log_sig = np.log1p(-model.w) + normal_logpdf(x, mu, model.v_g)
    pi = np.exp(log_sig - np.logaddexp(log_sig, model.log_clutter(x)))
    score = pi * (x - mu) / model.v_g  # d ln L_i / d mu at each node
    g_mu += float(wts @ score.sum(axis=1))
    g_v += 0.5 * float(wts @ (t * score.sum(axis=1))) / sq
    return GradientPair(g_mu, g_v)


def finite_difference_gradient(
    model: ClutterModel,
    data: Dataset,
    q: VariationalGaussian,
    qs: QuadratureSettings = DEFAULT_QUADRATURE,
    h: float = 1e-5,
) -> GradientPair:
    """Central differences of :func:`elbo`; steps are h*sqrt(v_q) and h*v_q."""
    hm, hv = h * math.sqrt(q.v_q), h * q.v_q

    def f(mu_q, v_q):
        return elbo(model, data, VariationalGaussian(mu_q, v_q), qs)

    g_mu = (f(q.mu_q + hm, q.v_q) - f(q.mu_q - hm, q.v_q)) / (2 * hm)
    g_v = (f(q.mu_q, q.v_q + hv) - f(q.mu_q, q.v_q - hv)) / (2 * hv)
    return GradientPair(g_mu, g_v)


# -- best Gaussian by direct maximisation -------------------------------------


def numeric_elbo_maximizer(
    model: ClutterModel,
    data: Dataset,
    qs: QuadratureSettings = DEFAULT_QUADRATURE,
    grid_size: int = 5,
    fatol: float = 1e-10,
    xatol: float = 1e-9,
) -> MethodResult:
    """Maximise the ELBO over (mu_q, ln v_q) with Nelder-Mead from a coarse grid of starts."""
    if data.n == 0:
        q = VariationalGaussian(model.prior_mean, model.prior_var)
        return MethodResult("numeric_baseline", q, 0, True, [TraceRow(0, q.mu_q, q.v_q)])

    x = data.observations
    mean, var = float(x.mean()), float(x.var())
    spread = 2.0 * math.sqrt(model.v_g + var)
    mus = np.linspace(mean - spread, mean + spread, grid_size)
    log_vs = np.linspace(math.log(model.v_g) - 6.0, math.log(var + model.v_g), grid_size)

    def negative_elbo(p):
        mu_q, log_v = p
        if not -700.0 < log_v < 700.0:
            return math.inf
        return -elbo(model, data, VariationalGaussian(float(mu_q), math.exp(log_v)), qs)

    best = None
    for mu0 in mus:
        for lv0 in log_vs:
            simplex = np.array([[mu0, lv0], [mu0 + 0.25 * spread, lv0], [mu0, lv0 + 0.5]])
            res = minimize(
                negative_elbo,
                np.array([mu0, lv0]),
                method="Nelder-Mead",
                options={"initial_simplex": simplex, "xatol": xatol, "fatol": fatol, "maxiter": 4000},
            )
            if best is None or res.fun < best.fun:
                best = res
    q = VariationalGaussian(float(best.x[0]), math.exp(float(best.x[1])))
    trace = [TraceRow(int(best.nit), q.mu_q, q.v_q, elbo=-float(best.fun))]
    return MethodResult("numeric_baseline", q, int(best.nit), bool(best.success), trace)
