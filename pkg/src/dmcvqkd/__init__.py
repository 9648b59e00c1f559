"""Certified key rates for four-state discrete-modulated CV-QKD with heterodyne detection."""

from .convex_core import FwOptions
from .finite_rate import RatePoint, SecurityParams, asymptotic_rate, finite_key_rate, optimize_rate
from .fock_ops import ModulationScheme
from .honest_model import HonestChannel, honest_statistics
from .pipeline import InstanceResult, solve_instance
from .tradeoff import DualCertificate

__all__ = [
    "DualCertificate", "FwOptions", "HonestChannel", "InstanceResult", "ModulationScheme",
    "RatePoint", "SecurityParams", "asymptotic_rate", "finite_key_rate", "honest_statistics",
    "optimize_rate", "solve_instance",
]
__version__ = "0.1.0"
