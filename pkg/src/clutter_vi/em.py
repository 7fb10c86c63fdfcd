"""EM maximisation of the ELBO driven by the approximate gradient.

The E-step computes the factor statistics at the current q; the M-step
solves the linearised stationarity conditions for mu_q and v_q with those
statistics held fixed.  A substitute signal variance ``v_g_hat`` starts wide
and is halved towards ``v_g`` so that q stays narrower than the likelihood
Gaussians while v_q is still large.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .gradient import FactorStats, VariationalGaussian, compute_factor_stats, gradient_from_stats
from .model import ClutterModel, Dataset
from .result import MethodResult, TraceRow


@dataclass(frozen=True)
class EMState:
    q: VariationalGaussian
    v_g_hat: float
    iteration: int = 0


@dataclass(frozen=True)
class EMSettings:
    max_iters: int = 100
    tol: float = 1e-8
    record_diagnostics: bool = False
    # "algorithm": v_g_hat <- max(min(2 v_q, v_g_hat / 2), v_g)
    # "prose":     v_g_hat <- max(min(v_q, v_g_hat / 2), v_g)
    anneal_rule: str = "algorithm"

    def __post_init__(self):
        if self.anneal_rule not in ("algorithm", "prose"):
            raise ValueError(f"unknown anneal_rule {self.anneal_rule!r}")


class EmptyDatasetError(ValueError):
    pass


def init_state(model: ClutterModel, data: Dataset) -> EMState:
    if data.n == 0:
        raise EmptyDatasetError("EM initialisation needs at least one observation")
    x = data.observations
    mu_q = float(np.sum(x) / data.n)
    v_q = float(np.sum((x - mu_q) ** 2) / data.n) + model.v_g
    return EMState(VariationalGaussian(mu_q, v_q), max(2.0 * v_q, model.v_g), 0)


def m_step_mean(stats: FactorStats, model: ClutterModel, q: VariationalGaussian, v_g_eff: float, data) -> float:
    x = data.observations if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    num = np.sum(stats.B * x) / v_g_eff + model.prior_mean / model.prior_var
    den = np.sum(stats.B) / v_g_eff + 1.0 / model.prior_var
    return float(num / den)


def m_step_var(stats: FactorStats, model: ClutterModel, q: VariationalGaussian, v_g_eff: float, data) -> float:
    """Root of the linearised v_q gradient; strictly positive by construction."""
    x = data.observations if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    shrink = q.v_q / (v_g_eff + q.v_q)
    num = np.sum(stats.D * (x - q.mu_q) ** 2) / v_g_eff * shrink + 1.0
    den = np.sum(stats.C) / v_g_eff + 1.0 / model.prior_var
    return float(num / den)


def anneal_and_constrain(state: EMState, model: ClutterModel, rule: str = "algorithm") -> EMState:
    v_q = state.q.v_q
    target = 2.0 * v_q if rule == "algorithm" else v_q
    v_g_hat = max(min(target, state.v_g_hat / 2.0), model.v_g)
    v_q = min(v_q, max(model.v_g, v_g_hat / 2.0))
    return replace(state, q=VariationalGaussian(state.q.mu_q, v_q), v_g_hat=v_g_hat)


def em_step(model: ClutterModel, data: Dataset, state: EMState, rule: str = "algorithm"):
    """One E/M/anneal cycle.

    Returns the new state plus the statistics, the approximate gradient at the
    pre-update q, and the raw M-step output (before the v_q cap), which is
    what the direction-of-update argument is about.
    """
    v = state.v_g_hat
    stats = compute_factor_stats(model, data, state.q, v)
    grad = gradient_from_stats(stats, model, data, state.q, v)
    mu_new = m_step_mean(stats, model, state.q, v, data)
    v_new = m_step_var(stats, model, state.q, v, data)
    raw = VariationalGaussian(mu_new, v_new)
    new = anneal_and_constrain(EMState(raw, v, state.iteration + 1), model, rule)
    return new, stats, grad, raw


def prior_result(model: ClutterModel, method_id: str) -> MethodResult:
    q = VariationalGaussian(model.prior_mean, model.prior_var)
    return MethodResult(method_id, q, 0, True, [TraceRow(0, q.mu_q, q.v_q)], message="empty dataset: prior returned")


def run_em(model: ClutterModel, data: Dataset, settings: EMSettings = EMSettings(), diagnostics=None) -> MethodResult:
    """Run the annealed EM loop to convergence or ``settings.max_iters``.

    ``diagnostics`` is an optional callable ``q -> (elbo, kl)`` evaluated for
    every trace row when ``settings.record_diagnostics`` is set.
    """
    if data.n == 0:
        return prior_result(model, "elbo_gaa")

    def row(state: EMState, grad=None) -> TraceRow:
        r = TraceRow(state.iteration, state.q.mu_q, state.q.v_q, v_g_hat=state.v_g_hat)
        if grad is not None:
            r.g_mu, r.g_v = grad.g_mu, grad.g_v
        if settings.record_diagnostics and diagnostics is not None:
            r.elbo, r.kl = diagnostics(state.q)
        return r

    state = init_state(model, data)
    trace = [row(state)]
    converged = False
    while state.iteration < settings.max_iters:
        old = state.q
        state, _, grad, _ = em_step(model, data, state, settings.anneal_rule)
        trace.append(row(state, grad))
        q = state.q
        if (
            state.v_g_hat == model.v_g
            and abs(q.mu_q - old.mu_q) <= settings.tol * math.sqrt(q.v_q)
            and abs(q.v_q - old.v_q) <= settings.tol * q.v_q
        ):
            converged = True
            break
    message = "" if converged else f"no convergence within {settings.max_iters} iterations"
    return MethodResult("elbo_gaa", state.q, state.iteration, converged, trace, message=message)
