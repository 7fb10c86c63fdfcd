"""Variational inference for the clutter problem with an analytical ELBO gradient."""

from .baselines import EPSettings, LaplaceSettings, MFSettings, ep, laplace, mf_vi
from .em import EMSettings, EMState, run_em
from .gradient import FactorStats, GradientPair, VariationalGaussian, approx_gradient, compute_factor_stats
from .model import ClutterModel, Dataset, log_joint, sample_dataset
from .oracle import QuadratureSettings, elbo, kl_divergence, log_marginal_likelihood, numeric_elbo_maximizer
from .result import MethodResult, TraceRow

__version__ = "0.1.0"
