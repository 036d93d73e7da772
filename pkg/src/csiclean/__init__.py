"""Gain and phase error cleaning for WiFi channel state information."""
from .core import (
    CsiBatch,
    GainEstimate,
    GroundTruth,
    PhaseEstimate,
    SystemParams,
    apply_correction,
    gain_correct,
)
from .errors import CorruptFileError, CsiError, DataError, NumericalError
from .gain import GAIN_METHODS
from .metrics import EvalReport, chi_metric, doppler_spectrum, respiration_snr
from .phase import PHASE_METHODS
from .sim import SimConfig, simulate

__all__ = [
    "CsiBatch",
    "GainEstimate",
    "GroundTruth",
    "PhaseEstimate",
    "SystemParams",
    "apply_correction",
    "gain_correct",
    "CorruptFileError",
    "CsiError",
    "DataError",
    "NumericalError",
    "GAIN_METHODS",
    "PHASE_METHODS",
    "EvalReport",
    "chi_metric",
    "doppler_spectrum",
    "respiration_snr",
    "SimConfig",
    "simulate",
]
__version__ = "0.1.0"
