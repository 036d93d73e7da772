"""Shared CSI containers and the correction step applied to raw CSI.

All containers are frozen dataclasses holding read-only numpy arrays, so a
batch can be handed to several estimators (or threads) without copying.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from .errors import DataError

BatchKind = Literal["observed", "gain-corrected", "cleaned", "true"]
BATCH_KINDS = ("observed", "gain-corrected", "cleaned", "true")


def wrap_phase(x):
    """Wrap angles to [-pi, pi)."""
    return (np.asarray(x, dtype=float) + np.pi) % (2 * np.pi) - np.pi


def db_to_amplitude(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 20.0)


def amplitude_to_db(a):
    return 20.0 * np.log10(a)


def power_to_db(p):
    return 10.0 * np.log10(p)


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SystemParams:
    """OFDM and batch geometry.

    Attributes
    ----------
    K : int
        Number of subcarriers.
    P : int
        Number of frames in a batch.
    T_rep : float
        Frame interval in seconds.
    T_s : float
        OFDM symbol duration in seconds; subcarrier k sits at ``k / T_s``.
    f_c : float
        Carrier frequency in Hz. Informational only.
    kappa : float
        Timing errors are bounded by ``kappa * T_s / K``.
    """

    K: int = 256
    P: int = 300
    T_rep: float = 0.1
    T_s: float = 3.2e-6
    f_c: float = 5.2e9
    kappa: float = 20.0

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 2:
            raise DataError(f"K must be an integer >= 2, got {self.K}")
        if int(self.P) != self.P or self.P < 2:
            raise DataError(f"P must be an integer >= 2, got {self.P}")
        if not self.T_rep > 0 or not self.T_s > 0:
            raise DataError("T_rep and T_s must be positive")
        if not self.kappa > 0:
            raise DataError(f"kappa must be positive, got {self.kappa}")
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "P", int(self.P))

    @property
    def freqs(self) -> np.ndarray:
        """Subcarrier frequency offsets ``f_k = k / T_s`` in Hz."""
        return np.arange(self.K) / self.T_s

    @property
    def tau_bound(self) -> float:
        """Largest timing error the estimators search over, in seconds."""
        return self.kappa * self.T_s / self.K

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.P) * self.T_rep

    def replace(self, **changes) -> "SystemParams":
        fields = {k: getattr(self, k) for k in ("K", "P", "T_rep", "T_s", "f_c", "kappa")}
        fields.update(changes)
        return SystemParams(**fields)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("K", "P", "T_rep", "T_s", "f_c", "kappa")}


@dataclass(frozen=True)
class CsiBatch:
    """A P x K block of CSI, frame-major, tagged with what stage it is at."""

    params: SystemParams
    data: np.ndarray
    kind: BatchKind = "observed"

    def __post_init__(self):
        data = _frozen(self.data, complex)
        shape = (self.params.P, self.params.K)
        if data.shape != shape:
            raise DataError(f"CSI data has shape {data.shape}, expected {shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("CSI data contains non-finite entries")
        if self.kind not in BATCH_KINDS:
            raise DataError(f"unknown batch kind {self.kind!r}")
        object.__setattr__(self, "data", data)

    @property
    def P(self) -> int:
        return self.params.P

    @property
    def K(self) -> int:
        return self.params.K

    def with_data(self, data, kind: Optional[BatchKind] = None) -> "CsiBatch":
        return CsiBatch(self.params, data, self.kind if kind is None else kind)


@dataclass(frozen=True)
class GroundTruth:
    """True channel components and impairments behind a simulated batch.

    The four impairment vectors are optional so that a file may carry the
    true channel without the impairments that produced its observation.
    """

    static_b: np.ndarray
    dynamic_d: np.ndarray
    gamma: float
    gain_large_db: Optional[np.ndarray] = None
    gain_agc_db: Optional[np.ndarray] = None
    timing_err: Optional[np.ndarray] = None
    cpe: Optional[np.ndarray] = None

    def __post_init__(self):
        b = _frozen(self.static_b, complex)
        d = _frozen(self.dynamic_d, complex)
        if b.ndim != 1 or d.ndim != 2 or d.shape[1] != b.shape[0]:
            raise DataError(f"static {b.shape} and dynamic {d.shape} components disagree")
        object.__setattr__(self, "static_b", b)
        object.__setattr__(self, "dynamic_d", d)
        object.__setattr__(self, "gamma", float(self.gamma))
        present = [getattr(self, n) is not None for n in _IMPAIRMENTS]
        if any(present) and not all(present):
            raise DataError("impairment vectors must be given all together or not at all")
        for name in _IMPAIRMENTS:
            v = getattr(self, name)
            if v is None:
                continue
            v = _frozen(v, float)
            if v.shape != (d.shape[0],):
                raise DataError(f"{name} has shape {v.shape}, expected ({d.shape[0]},)")
            object.__setattr__(self, name, v)

    @property
    def has_impairments(self) -> bool:
        return self.gain_large_db is not None

    @property
    def channel(self) -> np.ndarray:
        """True channel ``b_k + d_{p,k}``."""
        return self.static_b[None, :] + self.dynamic_d

    def _require_impairments(self):
        if not self.has_impairments:
            raise DataError("ground truth carries no impairment record")

    def ideal_gains(self) -> "GainEstimate":
        self._require_impairments()
        return GainEstimate.from_db(self.gain_large_db, self.gain_agc_db, method="ideal")

    def ideal_phases(self) -> "PhaseEstimate":
        self._require_impairments()
        return PhaseEstimate(self.timing_err, self.cpe, method="ideal")


_IMPAIRMENTS = ("gain_large_db", "gain_agc_db", "timing_err", "cpe")


@dataclass(frozen=True)
class GainEstimate:
    """Per-frame gain estimate.

    ``g_lin`` is the linear amplitude gain each frame is divided by; the dB
    split into large-scale and AGC parts is kept for diagnostics.
    """

    g_lin: np.ndarray
    g1_db: Optional[np.ndarray] = None
    g2_db: Optional[np.ndarray] = None
    lambda_hat: Optional[float] = None
    method: str = "unknown"

    def __post_init__(self):
        g = _frozen(self.g_lin, float)
        if g.ndim != 1:
            raise DataError("gain estimate must be a vector")
        if not np.all(np.isfinite(g)) or np.any(g <= 0):
            raise DataError("gain estimates must be finite and positive")
        object.__setattr__(self, "g_lin", g)
        for name in ("g1_db", "g2_db"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _frozen(v, float))

    @classmethod
    def identity(cls, P: int) -> "GainEstimate":
        return cls(np.ones(P), np.zeros(P), np.zeros(P), method="none")

    @classmethod
    def from_db(cls, g1_db, g2_db, lambda_hat=None, method="unknown") -> "GainEstimate":
        g1 = np.asarray(g1_db, dtype=float)
        g2 = np.asarray(g2_db, dtype=float)
        return cls(db_to_amplitude(g1 + g2), g1, g2, lambda_hat, method)

    @property
    def g_db(self) -> np.ndarray:
        return amplitude_to_db(self.g_lin)


@dataclass(frozen=True)
class PhaseEstimate:
    """Per-frame timing error (seconds) and common phase error (radians)."""

    tau_hat: np.ndarray
    psi_hat: np.ndarray
    method: str = "unknown"
    diagnostics: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        tau = _frozen(self.tau_hat, float)
        psi = _frozen(wrap_phase(self.psi_hat), float)
        if tau.ndim != 1 or tau.shape != psi.shape:
            raise DataError("tau and psi estimates must be vectors of equal length")
        if not (np.all(np.isfinite(tau)) and np.all(np.isfinite(psi))):
            raise DataError("phase estimates must be finite")
        object.__setattr__(self, "tau_hat", tau)
        object.__setattr__(self, "psi_hat", psi)

    @classmethod
    def identity(cls, P: int) -> "PhaseEstimate":
        return cls(np.zeros(P), np.zeros(P), method="none")


def correction_factors(params: SystemParams, gains: GainEstimate, phases: PhaseEstimate) -> np.ndarray:
    """P x K multiplier that undoes the estimated gain, timing and CPE."""
    for name, n in (("gain", gains.g_lin.size), ("tau", phases.tau_hat.size)):
        if n != params.P:
            raise DataError(f"{name} estimate has {n} frames, batch has {params.P}")
    ramp = np.exp(2j * np.pi * np.outer(phases.tau_hat, params.freqs))
    return ramp * (np.exp(1j * phases.psi_hat) / gains.g_lin)[:, None]


def apply_correction(
    batch: CsiBatch,
    gains: Optional[GainEstimate] = None,
    phases: Optional[PhaseEstimate] = None,
) -> CsiBatch:
    """Undo gain, timing and phase errors: ``h * exp(j2pi f tau) exp(j psi) / g``.

    Passing ``None`` for either estimate applies the identity for that part.
    """
    # cleaned input is accepted so that a correction can be undone
    if batch.kind == "true":
        raise DataError(f"cannot correct a batch of kind {batch.kind!r}")
    gains = gains if gains is not None else GainEstimate.identity(batch.P)
    phases = phases if phases is not None else PhaseEstimate.identity(batch.P)
    return batch.with_data(batch.data * correction_factors(batch.params, gains, phases), "cleaned")


def gain_correct(batch: CsiBatch, gains: GainEstimate) -> CsiBatch:
    if gains.g_lin.size != batch.P:
        raise DataError(f"gain estimate has {gains.g_lin.size} frames, batch has {batch.P}")
    return batch.with_data(batch.data / gains.g_lin[:, None], "gain-corrected")
