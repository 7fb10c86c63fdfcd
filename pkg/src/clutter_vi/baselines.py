"""Reference Gaussian approximations: Laplace, expectation propagation, mean-field VI."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .em import prior_result
from .gradient import VariationalGaussian
from .model import ClutterModel, Dataset, normal_logpdf
from .result import MethodResult, TraceRow

__all__ = [
    "LaplaceSettings",
    "EPSettings",
    "MFSettings",
    "MethodResult",
    "laplace",
    "ep",
    "mf_vi",
    "log_joint_derivatives",
    "mf_bound",
]


@dataclass(frozen=True)
class LaplaceSettings:
    max_iters: int = 200
    tol: float = 1e-12


@dataclass(frozen=True)
class EPSettings:
    max_sweeps: int = 100
    tol: float = 1e-10
    damping: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")


@dataclass(frozen=True)
class MFSettings:
    max_iters: int = 500
    tol: float = 1e-10


# -- Laplace -----------------------------------------------------------------


def log_joint_derivatives(model: ClutterModel, data: Dataset, mu: float) -> tuple[float, float]:
    """First and second derivative of the log joint at ``mu``."""
    x = data.observations
    d1 = (model.prior_mean - mu) / model.prior_var
    d2 = -1.0 / model.prior_var
    if data.n:
        with np.errstate(divide="ignore"):
            log_sig = np.log1p(-model.w) + normal_logpdf(x, mu, model.v_g)
        r = np.exp(log_sig - np.logaddexp(log_sig, model.log_clutter(x)))
        s = (x - mu) / model.v_g
        d1 += float(np.sum(r * s))
        d2 += float(np.sum(r * (1.0 - r) * s * s - r / model.v_g))
    return d1, d2


def laplace(model: ClutterModel, data: Dataset, settings: LaplaceSettings = LaplaceSettings()) -> MethodResult:
    """Gaussian at a local mode of the log joint with the curvature there.

    Newton steps from the sample mean, kept inside a bracket on which the
    derivative changes sign from + to -; steps that leave the bracket or face
    non-negative curvature fall back to bisection.
    """
    if data.n == 0:
        return prior_result(model, "laplace")
    x = data.observations
    sg = math.sqrt(model.v_g)
    lo = min(float(x.min()) - 3.0 * sg, model.prior_mean)
    hi = max(float(x.max()) + 3.0 * sg, model.prior_mean)
    mu = float(x.mean())
    trace = [TraceRow(0, mu, math.nan)]
    converged = False
    it = 0
    for it in range(1, settings.max_iters + 1):
        d1, d2 = log_joint_derivatives(model, data, mu)
        if d1 > 0:
            lo = mu
        elif d1 < 0:
            hi = mu
        step = -d1 / d2 if d2 < 0 else math.nan
        new = mu + step
        if not lo < new < hi:
            new = 0.5 * (lo + hi)
        converged = abs(new - mu) <= settings.tol * max(1.0, abs(mu)) or d1 == 0.0
        mu = new
        trace.append(TraceRow(it, mu, -1.0 / d2 if d2 < 0 else math.nan))
        if converged:
            break
    d1, d2 = log_joint_derivatives(model, data, mu)
    if not d2 < 0:
        return MethodResult("laplace", None, it, False, trace, message="non-negative curvature at located point")
    q = VariationalGaussian(mu, -1.0 / d2)
    trace[-1].v_q = q.v_q
    return MethodResult("laplace", q, it, converged, trace)


# -- expectation propagation -------------------------------------------------


def _tilted_moments(model: ClutterModel, x: float, m_cav: float, v_cav: float) -> tuple[float, float]:
    s = v_cav + model.v_g
    with np.errstate(divide="ignore"):
        log_sig = math.log1p(-model.w) + float(normal_logpdf(x, m_cav, s)) if model.w < 1 else -math.inf
    log_clut = float(model.log_clutter(x))
    r = math.exp(log_sig - np.logaddexp(log_sig, log_clut))
    d = x - m_cav
    m_new = m_cav + v_cav * r * d / s
    v_new = v_cav - r * v_cav**2 / s + r * (1.0 - r) * v_cav**2 * d * d / s**2
    return m_new, v_new


def ep(model: ClutterModel, data: Dataset, settings: EPSettings = EPSettings()) -> MethodResult:
    """Expectation propagation with one Gaussian site per observation.

    Sites are stored as natural parameters (precision, precision * mean) and
    start at zero.  A site update is skipped for the current sweep when the
    cavity precision is not positive or the moment-matched variance is not
    positive.
    """
    if data.n == 0:
        return prior_result(model, "ep")
    x = data.observations
    n = data.n
    tau_p, nu_p = 1.0 / model.prior_var, model.prior_mean / model.prior_var
    tau = np.zeros(n)
    nu = np.zeros(n)
    tau_q, nu_q = tau_p, nu_p
    trace = [TraceRow(0, nu_q / tau_q, 1.0 / tau_q)]
    converged = False
    skipped_total = 0
    sweep = 0
    for sweep in range(1, settings.max_sweeps + 1):
        old = (tau_q, nu_q)
        skipped = 0
        for i in range(n):
            tau_c, nu_c = tau_q - tau[i], nu_q - nu[i]
            if not tau_c > 0:
                skipped += 1
                continue
            m_new, v_new = _tilted_moments(model, float(x[i]), nu_c / tau_c, 1.0 / tau_c)
            if not (v_new > 0 and math.isfinite(v_new)):
                skipped += 1
                continue
            tau_site = 1.0 / v_new - tau_c
            nu_site = m_new / v_new - nu_c
            tau[i] += settings.damping * (tau_site - tau[i])
            nu[i] += settings.damping * (nu_site - nu[i])
            # sum in index order so q matches prior + sites exactly
            tau_q = tau_p + math.fsum(tau)
            nu_q = nu_p + math.fsum(nu)
        skipped_total += skipped
        valid = tau_q > 0
        trace.append(TraceRow(sweep, nu_q / tau_q if valid else math.nan, 1.0 / tau_q if valid else math.nan))
        if skipped == n or not valid:
            break
        if abs(tau_q - old[0]) <= settings.tol * abs(tau_q) and abs(nu_q - old[1]) <= settings.tol * max(abs(nu_q), tau_q):
            converged = True
            break
    if not tau_q > 0:
        return MethodResult("ep", None, sweep, False, trace, message="negative posterior precision")
    q = VariationalGaussian(nu_q / tau_q, 1.0 / tau_q)
    message = ""
    if not converged:
        message = f"no convergence within {settings.max_sweeps} sweeps"
    if skipped_total:
        message = (message + "; " if message else "") + f"{skipped_total} site updates skipped"
    return MethodResult("ep", q, sweep, converged, trace, message=message, extras={"sites": (tau, nu)})


# -- mean-field VI -----------------------------------------------------------


def _mf_responsibilities(model: ClutterModel, x: np.ndarray, q: VariationalGaussian) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_sig = np.log1p(-model.w) - 0.5 * np.log(2 * math.pi * model.v_g) - ((x - q.mu_q) ** 2 + q.v_q) / (
            2 * model.v_g
        )
    log_clut = model.log_clutter(x)
    return np.exp(log_sig - np.logaddexp(log_sig, log_clut))


def _mf_posterior(model: ClutterModel, x: np.ndarray, r: np.ndarray) -> VariationalGaussian:
    prec = 1.0 / model.prior_var + np.sum(r) / model.v_g
    v_q = 1.0 / prec
    return VariationalGaussian(float((model.prior_mean / model.prior_var + np.sum(r * x) / model.v_g) * v_q), float(v_q))


def mf_bound(model: ClutterModel, data: Dataset, q: VariationalGaussian, r: np.ndarray) -> float:
    """Closed-form lower bound of the indicator-augmented model under q(mu) prod q(z_i)."""
    x = data.observations
    with np.errstate(divide="ignore", invalid="ignore"):
        e_sig = np.log1p(-model.w) - 0.5 * np.log(2 * math.pi * model.v_g) - ((x - q.mu_q) ** 2 + q.v_q) / (2 * model.v_g)
        e_clut = model.log_clutter(x)
        term = np.where(r > 0, r * e_sig, 0.0) + np.where(r < 1, (1 - r) * e_clut, 0.0)
        ent = -np.where(r > 0, r * np.log(r), 0.0) - np.where(r < 1, (1 - r) * np.log1p(-r), 0.0)
    prior = -0.5 * math.log(2 * math.pi * model.prior_var) - ((q.mu_q - model.prior_mean) ** 2 + q.v_q) / (
        2 * model.prior_var
    )
    entropy_q = 0.5 * math.log(2 * math.pi * math.e * q.v_q)
    return float(np.sum(term) + np.sum(ent) + prior + entropy_q)


def mf_vi(model: ClutterModel, data: Dataset, settings: MFSettings = MFSettings()) -> MethodResult:
    """Coordinate ascent on q(mu) prod_i q(z_i).

    Responsibilities start at the prior signal probability 1 - w, so the first
    q(mu) update already uses every observation.
    """
    if data.n == 0:
        return prior_result(model, "mf_vi")
    x = data.observations
    r = np.full(data.n, 1.0 - model.w)
    q = _mf_posterior(model, x, r)
    trace = [TraceRow(0, q.mu_q, q.v_q)]
    bounds = [mf_bound(model, data, q, r)]
    converged = False
    it = 0
    for it in range(1, settings.max_iters + 1):
        r_new = _mf_responsibilities(model, x, q)
        q_new = _mf_posterior(model, x, r_new)
        delta = max(
            abs(q_new.mu_q - q.mu_q) / math.sqrt(q_new.v_q),
            abs(q_new.v_q - q.v_q) / q_new.v_q,
            float(np.max(np.abs(r_new - r))),
        )
        q, r = q_new, r_new
        trace.append(TraceRow(it, q.mu_q, q.v_q))
        bounds.append(mf_bound(model, data, q, r))
        if delta <= settings.tol:
            converged = True
            break
    message = "" if converged else f"no convergence within {settings.max_iters} iterations"
    return MethodResult("mf_vi", q, it, converged, trace, message=message, extras={"responsibilities": r, "bounds": bounds})
