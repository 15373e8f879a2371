"""Exact Gaussian likelihood, MLE and LAN diagnostics for stationary Gaussian triangular arrays."""

__version__ = "0.1.0"

from .exceptions import (ContractError, DegenerateDataError, DomainError, GaussLANError,
                         InvalidTableError, ParameterError, SymbolError, UnsupportedModelError)
from .spectral_models import (EnvelopeTable, FractionalOU, MildAR1, MixedFBM, SpectralModel,
                              WhiteNoise, envelope_table_for, fou_model, make_model,
                              mildly_integrated_ar1_model, mixed_fbm_model, white_noise_model)
from .toeplitz import (AutocovarianceSequence, DeltaBounds, ToeplitzMatrix, delta_rates,
                       fourier_coefficients, half_norm_squared, sup_ratio_bounded_density,
                       trace_product, whittle_integral)
from .likelihood import (LikelihoodWorkspace, fisher_exact, fisher_whittle, hessian, llr,
                         log_likelihood, phi_n, quadratic_form_Z, score)
from .estimation import (EstimationResult, GaussianArrayMLE, MildAR1OLS, NewtonOptions,
                         ols_mild_ar1, solve_mle, standardize)
from .simulation import SimulationPlan, run_monte_carlo, sample_path, sample_paths
from .verification import AuditReport, AuditSettings

__all__ = [name for name in dir() if not name.startswith("_")]
