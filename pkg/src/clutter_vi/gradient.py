"""Closed-form approximation of the ELBO gradient for a Gaussian q(mu).

Each reparameterised likelihood factor is replaced by an exponentiated
quadratic fitted at ``eps_i = sqrt(v_q) (x_i - mu_q) / (v_g + v_q)``, which
turns the expectation over the standard normal auxiliary variable into a
Gaussian integral.  The per-factor weights B_i, C_i, D_i collect the result.

Every function takes ``v_g_eff``, the signal variance actually used in the
formulas.  The EM driver passes its annealed substitute here; callers that
want the plain approximation pass ``model.v_g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import LOG_2PI, ClutterModel, Dataset


@dataclass(frozen=True)
class VariationalGaussian:
    mu_q: float
    v_q: float

    def __post_init__(self):
        if not (self.v_q > 0 and math.isfinite(self.v_q)):
            raise ValueError(f"v_q must be positive and finite, got {self.v_q}")
        if not math.isfinite(self.mu_q):
            raise ValueError(f"mu_q must be finite, got {self.mu_q}")


@dataclass(frozen=True)
class GradientPair:
    g_mu: float
    g_v: float


@dataclass(frozen=True)
class FactorStats:
    """Per-observation quantities, stored as aligned arrays (one entry per x_i).

    ``a`` and ``b`` are the second and first derivatives of ln L_i(eps) at
    ``eps``; the remaining fields are what the gradient and update rules use.
    """

    pi: np.ndarray
    eps: np.ndarray
    v_hat: np.ndarray
    eps_hat: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __len__(self):
        return self.pi.size


def _observations(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.observations
    return np.asarray(data, dtype=float).reshape(-1)


def compute_pi_i(model: ClutterModel, x_i, q: VariationalGaussian, v_g_eff: float):
    """Signal responsibility of observation(s) ``x_i`` at the expansion point.

    Uses the simplified numerator
    ``(1 - w) / sqrt(2 pi v) * exp(-v (x - mu_q)^2 / (2 (v + v_q)^2))``,
    evaluated in log space so far outliers give a tiny positive value rather
    than 0/0.
    """
    x = np.asarray(x_i, dtype=float)
    delta = (x - q.mu_q) / (v_g_eff + q.v_q)
    with np.errstate(divide="ignore"):
        log_num = np.log1p(-model.w) - 0.5 * (LOG_2PI + math.log(v_g_eff)) - 0.5 * v_g_eff * delta**2
    log_den = np.logaddexp(log_num, model.log_clutter(x))
    pi = np.exp(log_num - log_den)
    return pi[()] if pi.ndim == 0 else pi


def compute_factor_stats(model: ClutterModel, data, q: VariationalGaussian, v_g_eff: float) -> FactorStats:
    if not v_g_eff > 0:
        raise ValueError(f"v_g_eff must be positive, got {v_g_eff}")
    x = _observations(data)
    v, v_q = v_g_eff, q.v_q
    delta = (x - q.mu_q) / (v + v_q)
    pi = np.atleast_1d(compute_pi_i(model, x, q, v))

    v_hat = v / ((1.0 - pi) * (pi * v * delta**2 + 1.0) * v_q + v)
    pv = pi * v_hat
    eps = math.sqrt(v_q) * delta
    eps_hat = math.sqrt(v_q) * (1.0 - pv) * delta
    # analytically <= 0; clamp rounding so that A <= 1 holds exactly
    A = np.exp(np.minimum(-0.5 * (1.0 - pi * pv) * v_q * delta**2, 0.0))
    common = pi * np.sqrt(v_hat) * A
    B = common * (v + pv * v_q) / (v + v_q)
    C = common * v_hat
    D = (1.0 - pv) * B
    a = pi * ((1.0 - pi) * v * delta**2 - 1.0) * v_q / v
    b = pi * math.sqrt(v_q) * delta
    return FactorStats(pi=pi, eps=eps, v_hat=v_hat, eps_hat=eps_hat, A=A, B=B, C=C, D=D, a=a, b=b)


def gradient_from_stats(
    stats: FactorStats, model: ClutterModel, data, q: VariationalGaussian, v_g_eff: float
) -> GradientPair:
    x = _observations(data)
    v, v_q = v_g_eff, q.v_q
    r = x - q.mu_q
    g_mu = float(np.sum(stats.B * r) / v + (model.prior_mean - q.mu_q) / model.prior_var)
    g_v = 0.5 * float(
        -np.sum(stats.C) / v
        + np.sum(stats.D * r**2) / (v * (v + v_q))
        + 1.0 / v_q
        - 1.0 / model.prior_var
    )
    return GradientPair(g_mu, g_v)


def approx_gradient(model: ClutterModel, data, q: VariationalGaussian, v_g_eff: float | None = None) -> GradientPair:
    """Approximate (dL/dmu_q, dL/dv_q); ``v_g_eff`` defaults to ``model.v_g``."""
    v = model.v_g if v_g_eff is None else v_g_eff
    stats = compute_factor_stats(model, data, q, v)
    return gradient_from_stats(stats, model, data, q, v)
