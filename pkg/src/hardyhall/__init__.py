"""Truncated Hardy sections: zeros, zero sensitivities, reflected coefficient
diffusion and spacing / pair-correlation statistics against GUE."""

from .errors import (
    CollisionError,
    CollisionSuspected,
    ConvergenceError,
    DomainError,
    HallSamplingError,
    HardyHallError,
    NonIntegrable,
    ReflectionFailed,
    SimplicityViolated,
    TailTooLarge,
)
from .sections import HallReport, Section, Window, ZeroConfig, find_zeros, hall_certificate, sample_hall_section
from .sensitivity import (
    DriftTerms,
    SensitivityBundle,
    grad_zeros,
    gram_two_ways,
    hessian_coulomb,
    hessian_ift,
    ito_drift,
    sensitivity,
)
from .specfun import ThetaExpansion, acc_coeffs, core_count, harmonic_hn, theta, theta_prime, theta_second

__version__ = "0.1.0"
