"""Result records shared by every inference method."""

from __future__ import annotations

from dataclasses import dataclass, field

from .gradient import VariationalGaussian

METHOD_IDS = ("elbo_gaa", "laplace", "ep", "mf_vi", "numeric_baseline")


@dataclass
class TraceRow:
    """State after one iteration (row 0 is the initial state)."""

    iteration: int
    mu_q: float
    v_q: float
    v_g_hat: float | None = None
    g_mu: float | None = None
    g_v: float | None = None
    elbo: float | None = None
    kl: float | None = None


@dataclass
class MethodResult:
    method_id: str
    q: VariationalGaussian | None
    iterations: int
    converged: bool
    trace: list[TraceRow] = field(default_factory=list)
    kl: float | None = None
    abs_err_mean: float | None = None
    message: str = ""
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method_id not in METHOD_IDS:
            raise ValueError(f"unknown method id {self.method_id!r}")
        if self.converged and self.q is None:
            raise ValueError("a converged result needs a valid q")
