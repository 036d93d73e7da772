"""Cleaning quality against ground truth and Doppler-domain sensing metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .core import CsiBatch, GroundTruth, SystemParams
from .errors import DataError, NumericalError

ALIGN_GRID_POINTS = 1025
RESP_HALF_BAND_HZ = 0.02
DEFAULT_NU_GRID = (0.1, 0.5, 0.02)


@dataclass(frozen=True)
class EvalReport:
    """Correlation between the true and the cleaned dynamic component.

    ``chi`` is clamped to [0, 1]; ``chi_raw`` keeps the unclamped value.
    """

    chi: float
    chi_raw: float
    snr: float
    snr_db: float
    align_tau: float
    gain_method: str = "unknown"
    phase_method: str = "unknown"
    wall_clock_ms: Optional[float] = None

    @property
    def clamped(self) -> bool:
        return self.chi != self.chi_raw

    def to_dict(self) -> dict:
        return asdict(self)


def snr_from_chi(chi):
    chi = np.asarray(chi, dtype=float)
    with np.errstate(divide="ignore"):
        return chi**2 / (1.0 - chi**2)


def _parabolic_peak(grid, mag):
    i = int(np.argmax(mag))
    if 0 < i < grid.size - 1:
        y0, y1, y2 = mag[i - 1 : i + 2]
        curv = y0 - 2 * y1 + y2
        if curv < 0:
            return grid[i] + np.clip(0.5 * (y0 - y2) / curv, -0.5, 0.5) * (grid[1] - grid[0])
    return grid[i]


def align_delay(b_true, b_clean, params: SystemParams, n_points: int = ALIGN_GRID_POINTS) -> float:
    """Delay that best lines up the cleaned static component with the true one."""
    bound = 2 * params.tau_bound
    grid = np.linspace(-bound, bound, n_points)
    prod = b_true * np.conj(b_clean)
    mag = np.abs(np.exp(2j * np.pi * np.outer(grid, params.freqs)) @ prod)
    return float(_parabolic_peak(grid, mag))


def chi_metric(
    cleaned: CsiBatch,
    truth: GroundTruth,
    gain_method: str = "unknown",
    phase_method: str = "unknown",
    wall_clock_ms: Optional[float] = None,
) -> EvalReport:
    """Squared correlation of the cleaned dynamic component with the true one.

    The cleaned static component is the per-subcarrier mean over frames. The
    true dynamic component is delay-aligned to the cleaned batch first, and
    the normalization uses the nominal dynamic power ``(1 - gamma) K P``.
    """
    params = cleaned.params
    if truth.dynamic_d.shape != cleaned.data.shape:
        raise DataError(f"truth has shape {truth.dynamic_d.shape}, cleaned batch {cleaned.data.shape}")
    if not truth.gamma < 1:
        raise DataError("correlation metric needs a dynamic component (gamma < 1)")
    h = cleaned.data
    b_hat = h.mean(axis=0)
    tau = align_delay(truth.static_b, b_hat, params)
    resid = h - b_hat
    denom_power = np.sum(np.abs(resid) ** 2)
    if denom_power <= 1e-24 * np.sum(np.abs(h) ** 2):
        raise NumericalError("cleaned batch has no dynamic power", method="chi")
    ramp = np.exp(2j * np.pi * params.freqs * tau)
    num = np.abs(np.sum(np.conj(resid) * truth.dynamic_d * ramp)) ** 2
    raw = float(num / ((1 - truth.gamma) * params.K * params.P * denom_power))
    chi = float(np.clip(raw, 0.0, 1.0))
    snr = float(snr_from_chi(chi))
    snr_db = float(10 * np.log10(snr)) if snr > 0 else -np.inf
    return EvalReport(chi, raw, snr, snr_db, tau, gain_method, phase_method, wall_clock_ms)


@dataclass(frozen=True)
class DopplerSpectrum:
    nu: np.ndarray
    power: np.ndarray
    nu0: Optional[float] = None

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=float)
        power = np.asarray(self.power, dtype=float)
        if nu.ndim != 1 or nu.shape != power.shape:
            raise DataError("nu and power must be vectors of equal length")
        if np.any(np.diff(nu) <= 0):
            raise DataError("Doppler grid must be strictly increasing")
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "power", power)

    def to_dict(self) -> dict:
        return {"nu": self.nu.tolist(), "power": self.power.tolist(), "nu0": self.nu0}


def nu_grid(lo: float = DEFAULT_NU_GRID[0], hi: float = DEFAULT_NU_GRID[1], step: float = DEFAULT_NU_GRID[2]):
    """Inclusive grid ``lo:step:hi``; the endpoint survives float round-off."""
    if not step > 0 or hi < lo:
        raise DataError(f"bad Doppler grid {lo}:{step}:{hi}")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def doppler_spectrum(batch: CsiBatch, nu, remove_static: bool = False, nu0=None) -> DopplerSpectrum:
    """Energy across subcarriers of each subcarrier's frame sequence at temporal frequency ``nu``.

    ``remove_static`` subtracts the per-subcarrier mean before the transform.
    """
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    if nu.size == 0:
        raise DataError("Doppler grid is empty")
    h = batch.data
    if remove_static:
        h = h - h.mean(axis=0)
    t = batch.params.times
    proj = np.exp(-2j * np.pi * np.outer(nu, t)) @ h
    power = np.sum(np.abs(proj) ** 2, axis=1)
    return DopplerSpectrum(nu, power, nu0)


def respiration_snr(spec: DopplerSpectrum, nu0: float, half_band: float = RESP_HALF_BAND_HZ) -> float:
    """Energy within ``half_band`` of ``nu0`` over the energy elsewhere on the grid."""
    inside = np.abs(spec.nu - nu0) <= half_band + 1e-9
    den = spec.power[~inside].sum()
    if den <= 0:
        raise NumericalError("no spectral energy outside the respiration band", method="resp-snr")
    return float(spec.power[inside].sum() / den)
