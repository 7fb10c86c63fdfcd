"""Clutter-problem model: densities, log joint and seeded data generation.

Observations follow ``(1 - w) N(x; mu, v_g) + w N(x; clutter_mean, clutter_var)``
with a Gaussian prior ``N(mu; prior_mean, prior_var)`` on the unknown mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def normal_logpdf(x, mean, var):
    """Log density of N(mean, var), vectorised over numpy inputs."""
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var)) - 0.5 * (x - mean) ** 2 / var


@dataclass(frozen=True)
class ClutterModel:
    w: float = 0.5
    clutter_mean: float = 0.0
    clutter_var: float = 10.0
    v_g: float = 1.0
    prior_mean: float = 0.0
    prior_var: float = 100.0

    def __post_init__(self):
        if not 0.0 <= self.w <= 1.0:
            raise ValueError(f"w must lie in [0, 1], got {self.w}")
        for name in ("clutter_var", "v_g", "prior_var"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value}")

    def with_(self, **changes) -> "ClutterModel":
        params = {k: getattr(self, k) for k in self.__dataclass_fields__}
        params.update(changes)
        return ClutterModel(**params)

    def log_clutter(self, x):
        """ln(w * P_c(x)); ``-inf`` when w = 0."""
        with np.errstate(divide="ignore"):
            return np.log(self.w) + normal_logpdf(x, self.clutter_mean, self.clutter_var)


@dataclass(frozen=True)
class Dataset:
    observations: np.ndarray
    seed: int | None = None
    true_mean: float | None = None
    n: int = field(init=False)

    def __post_init__(self):
        obs = np.array(self.observations, dtype=float).reshape(-1)
        if not np.all(np.isfinite(obs)):
            raise ValueError("observations must be finite")
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "n", int(obs.size))

    def __len__(self):
        return self.n


def _log_factor(model: ClutterModel, x, mu):
    with np.errstate(divide="ignore"):
        log_signal = np.log1p(-model.w) + normal_logpdf(x, mu, model.v_g)
    return np.logaddexp(log_signal, model.log_clutter(x))


def observation_density(model: ClutterModel, x, mu):
    """p(x | mu) = (1 - w) N(x; mu, v_g) + w P_c(x)."""
    return np.exp(_log_factor(model, x, mu))


def likelihood_factor(model: ClutterModel, x_i, mu):
    """L_i(mu | x_i) = (1 - w) N(mu; x_i, v_g) + w P_c(x_i).

    Same expression as :func:`observation_density` with the roles of ``x`` and
    ``mu`` swapped in the Gaussian, which is symmetric.
    """
    return np.exp(_log_factor(model, x_i, mu))


def log_likelihood_factors(model: ClutterModel, observations, mu):
    """ln L_i(mu) for every pair; broadcasts ``observations`` against ``mu``."""
    return _log_factor(model, observations, mu)


def log_joint(model: ClutterModel, data: Dataset, mu):
    """ln p(mu) + sum_i ln L_i(mu | x_i).

    ``mu`` may be a scalar or an array; the sum over observations is taken
    along a trailing axis so array inputs are evaluated pointwise.
    """
    mu_arr = np.asarray(mu, dtype=float)
    out = normal_logpdf(mu_arr, model.prior_mean, model.prior_var)
    if data.n:
        terms = _log_factor(model, data.observations, mu_arr[..., None])
        out = out + terms.sum(axis=-1)
    return out[()] if out.ndim == 0 else out


def sample_dataset(model: ClutterModel, true_mean: float, n: int, seed: int) -> Dataset:
    """Draw ``n`` observations from the clutter model.

    A single PCG64 stream is seeded per dataset; the indicator draws come
    first, then one standard normal per observation.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    is_clutter = rng.random(n) < model.w
    z = rng.standard_normal(n)
    x = np.where(
        is_clutter,
        model.clutter_mean + math.sqrt(model.clutter_var) * z,
        true_mean + math.sqrt(model.v_g) * z,
    )
    return Dataset(x, seed=seed, true_mean=true_mean)


_HEADER_KEYS = ("w", "clutter_mean", "clutter_var", "v_g", "prior_mean", "prior_var")


def write_dataset(path, data: Dataset, model: ClutterModel | None = None) -> None:
    lines = []
    if model is not None:
        lines += [f"# {k} = {getattr(model, k)!r}" for k in _HEADER_KEYS]
    if data.seed is not None:
        lines.append(f"# seed = {data.seed}")
    if data.true_mean is not None:
        lines.append(f"# true_mean = {data.true_mean!r}")
    lines += [f"{x:.17g}" for x in data.observations]
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path) -> tuple[Dataset, ClutterModel | None]:
    """Parse a dataset file; returns the model too when the header carries one."""
    header: dict[str, str] = {}
    values = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, val = line[1:].partition("=")
            if sep:
                header[key.strip()] = val.strip()
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: not a number: {line!r}") from None
    model = None
    if all(k in header for k in _HEADER_KEYS):
        model = ClutterModel(**{k: float(header[k]) for k in _HEADER_KEYS})
    seed = int(header["seed"]) if "seed" in header else None
    true_mean = float(header["true_mean"]) if "true_mean" in header else None
    return Dataset(values, seed=seed, true_mean=true_mean), model
