"""Simulation of impaired CSI batches with full ground truth.

The true channel is a static tapped-delay-line component plus a dynamic
component. The receiver then applies a slowly drifting large-scale gain, a
discrete AGC gain, a timing error and a common phase error to every frame.

Every random draw comes from a labelled sub-stream of one master seed, so
changing one knob (say the AGC grid) leaves the other draws untouched.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import CsiBatch, GroundTruth, SystemParams, db_to_amplitude
from .errors import DataError

DYNAMIC_KINDS = ("iid", "bandlimited_path", "tone")

_STREAM_IDS = {"static": 0, "dynamic": 1, "g1": 2, "g2": 3, "tau": 4, "psi": 5}


def _default_pdp():
    # two exponential clusters, 20 ns decay, second cluster 4.89 dB down:
    # 30 ns RMS delay spread over 14 taps
    taps = []
    for start, level_db in ((0.0, 0.0), (60e-9, -4.89)):
        for i in range(7):
            delay = start + i * 10e-9
            taps.append((delay, 10 ** (level_db / 10) * np.exp(-(delay - start) / 20e-9)))
    return tuple(taps)


DEFAULT_PDP = _default_pdp()
DEFAULT_AGC_GRID = ((-0.5, 0.2), (0.0, 0.6), (0.5, 0.2))


def rms_delay_spread(pdp) -> float:
    delays, powers = np.array(pdp, dtype=float).T
    w = powers / powers.sum()
    mean = np.sum(w * delays)
    return float(np.sqrt(np.sum(w * (delays - mean) ** 2)))


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to draw one simulated batch.

    ``dynamic_kind`` selects the dynamic component: ``iid`` draws every entry
    independently; ``bandlimited_path`` is one extra path whose complex
    amplitude is a band-limited Gaussian process; ``tone`` is the same path
    with a constant-modulus amplitude rotating at ``tone_hz`` (a breathing-like
    periodic motion). ``impaired=False`` switches every receiver impairment off.
    """

    params: SystemParams = field(default_factory=SystemParams)
    gamma: float = 0.9
    dynamic_kind: str = "iid"
    agc_grid_db: tuple = DEFAULT_AGC_GRID
    large_scale_std_db: float = 0.2
    large_scale_band_hz: tuple = (0.0, 0.1)
    dynamic_band_hz: tuple = (0.5, 1.0)
    path_delay_spread_max_s: float = 300e-9
    timing_err_max_s: float = 1e-7
    pdp: tuple = DEFAULT_PDP
    tone_hz: float = 0.25
    impaired: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "agc_grid_db", tuple((float(a), float(b)) for a, b in self.agc_grid_db))
        object.__setattr__(self, "pdp", tuple((float(a), float(b)) for a, b in self.pdp))
        object.__setattr__(self, "large_scale_band_hz", tuple(map(float, self.large_scale_band_hz)))
        object.__setattr__(self, "dynamic_band_hz", tuple(map(float, self.dynamic_band_hz)))
        if not 0.0 <= self.gamma <= 1.0:
            raise DataError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.dynamic_kind not in DYNAMIC_KINDS:
            raise DataError(f"dynamic_kind must be one of {DYNAMIC_KINDS}, got {self.dynamic_kind!r}")
        if not self.agc_grid_db:
            raise DataError("AGC grid is empty")
        probs = np.array([p for _, p in self.agc_grid_db])
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise DataError("AGC grid probabilities must be non-negative and sum to 1")
        if not self.pdp:
            raise DataError("power delay profile is empty")
        if any(p < 0 for _, p in self.pdp) or sum(p for _, p in self.pdp) <= 0:
            raise DataError("power delay profile powers must be non-negative with positive total")
        if self.large_scale_std_db < 0 or self.timing_err_max_s < 0 or self.path_delay_spread_max_s < 0:
            raise DataError("standard deviations and ranges must be non-negative")
        nyquist = 1.0 / (2.0 * self.params.T_rep)
        for name in ("large_scale_band_hz", "dynamic_band_hz"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= nyquist:
                raise DataError(f"{name} = [{lo}, {hi}] must lie within [0, {nyquist}]")
        if not 0.0 <= self.tone_hz <= nyquist:
            raise DataError(f"tone_hz must lie within [0, {nyquist}]")
        object.__setattr__(self, "seed", int(self.seed))

    def replace(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "gamma": self.gamma,
            "dynamic_kind": self.dynamic_kind,
            "agc_grid_db": [list(x) for x in self.agc_grid_db],
            "large_scale_std_db": self.large_scale_std_db,
            "large_scale_band_hz": list(self.large_scale_band_hz),
            "dynamic_band_hz": list(self.dynamic_band_hz),
            "path_delay_spread_max_s": self.path_delay_spread_max_s,
            "timing_err_max_s": self.timing_err_max_s,
            "pdp": [list(x) for x in self.pdp],
            "tone_hz": self.tone_hz,
            "impaired": self.impaired,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown simulation config keys: {sorted(unknown)}")
        if "params" in d:
            p = d["params"]
            d["params"] = p if isinstance(p, SystemParams) else SystemParams(**p)
        if isinstance(d.get("agc_grid_db"), dict):
            d["agc_grid_db"] = tuple((float(k), v) for k, v in d["agc_grid_db"].items())
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one purpose, derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_STREAM_IDS[label],)))


def _crandn(rng, size, var=1.0):
    return np.sqrt(var / 2.0) * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def bandlimited_process(rng, n, dt, band, rms, complex_valued=True):
    """Gaussian process whose spectrum lives on the DFT bins inside ``band``.

    Coefficients are drawn i.i.d. on the in-band bins of a length-``n`` grid,
    inverse transformed, and the result rescaled so that its RMS is exactly
    ``rms``. For a real process the real part is taken before rescaling.
    """
    if rms == 0:
        return np.zeros(n, dtype=complex if complex_valued else float)
    lo, hi = band
    freqs = np.fft.fftfreq(n, dt)
    tol = 1e-9 / (n * dt)
    inside = (freqs >= lo - tol) & (freqs <= hi + tol)
    if not inside.any():
        raise DataError(f"band [{lo}, {hi}] Hz holds no frequency bin for {n} frames at {dt} s")
    spectrum = np.zeros(n, dtype=complex)
    spectrum[inside] = _crandn(rng, inside.sum())
    x = np.fft.ifft(spectrum)
    if not complex_valued:
        x = x.real
    return x * (rms / np.sqrt(np.mean(np.abs(x) ** 2)))


@dataclass(frozen=True)
class StaticComponent:
    b: np.ndarray
    los_delay: float  # delay of the first tap after re-referencing, seconds


def gen_static_component(cfg: SimConfig, rng=None) -> StaticComponent:
    """Frequency response of the static taps, normalized.

    The response is re-referenced in delay so that the sum of
    ``b_k conj(b_{k+1})`` is real and positive, then scaled so that its mean
    power equals ``gamma``.
    """
    rng = rng if rng is not None else rng_stream(cfg.seed, "static")
    params = cfg.params
    delays, powers = np.array(cfg.pdp, dtype=float).T
    amps = _crandn(rng, delays.size) * np.sqrt(powers)
    f = params.freqs
    b = np.exp(-2j * np.pi * np.outer(f, delays)) @ amps
    shift = params.T_s / (2 * np.pi) * np.angle(np.sum(b[:-1] * np.conj(b[1:])))
    b = b * np.exp(2j * np.pi * f * shift)
    power = np.mean(np.abs(b) ** 2)
    if power > 0:
        b = b * np.sqrt(cfg.gamma / power)
    return StaticComponent(b, float(delays.min() - shift))


def gen_dynamic_component(cfg: SimConfig, static: StaticComponent, rng=None) -> np.ndarray:
    rng = rng if rng is not None else rng_stream(cfg.seed, "dynamic")
    params = cfg.params
    P, K = params.P, params.K
    var = 1.0 - cfg.gamma
    if var == 0:
        return np.zeros((P, K), dtype=complex)
    if cfg.dynamic_kind == "iid":
        return _crandn(rng, (P, K), var)
    extra_delay = rng.uniform(0.0, cfg.path_delay_spread_max_s)
    if cfg.dynamic_kind == "bandlimited_path":
        alpha = bandlimited_process(rng, P, params.T_rep, cfg.dynamic_band_hz, np.sqrt(var))
    else:
        phase0 = rng.uniform(-np.pi, np.pi)
        alpha = np.sqrt(var) * np.exp(1j * (2 * np.pi * cfg.tone_hz * params.times + phase0))
    steering = np.exp(-2j * np.pi * params.freqs * (extra_delay + static.los_delay))
    return np.outer(alpha, steering)


@dataclass(frozen=True)
class Impairments:
    g1_db: np.ndarray
    g2_db: np.ndarray
    tau: np.ndarray
    psi: np.ndarray


def gen_impairments(cfg: SimConfig) -> Impairments:
    params = cfg.params
    P = params.P
    if not cfg.impaired:
        z = np.zeros(P)
        return Impairments(z, z.copy(), z.copy(), z.copy())
    g1 = bandlimited_process(
        rng_stream(cfg.seed, "g1"), P, params.T_rep, cfg.large_scale_band_hz,
        cfg.large_scale_std_db, complex_valued=False,
    )
    levels, probs = np.array(cfg.agc_grid_db, dtype=float).T
    g2 = rng_stream(cfg.seed, "g2").choice(levels, size=P, p=probs / probs.sum())
    tau = rng_stream(cfg.seed, "tau").uniform(0.0, cfg.timing_err_max_s, P)
    psi = rng_stream(cfg.seed, "psi").uniform(-np.pi, np.pi, P)
    return Impairments(g1, g2, tau, psi)


def impair(params: SystemParams, h: np.ndarray, imp: Impairments) -> np.ndarray:
    """Apply receiver gain, timing error and CPE to a true channel."""
    g = db_to_amplitude(imp.g1_db + imp.g2_db)
    ramp = np.exp(-2j * np.pi * np.outer(imp.tau, params.freqs))
    return g[:, None] * h * ramp * np.exp(-1j * imp.psi)[:, None]


def simulate(cfg: SimConfig) -> tuple[CsiBatch, GroundTruth]:
    """Draw one observed batch and the ground truth behind it."""
    static = gen_static_component(cfg)
    d = gen_dynamic_component(cfg, static)
    imp = gen_impairments(cfg)
    h = static.b[None, :] + d
    observed = CsiBatch(cfg.params, impair(cfg.params, h, imp), "observed")
    truth = GroundTruth(static.b, d, cfg.gamma, imp.g1_db, imp.g2_db, imp.tau, imp.psi)
    return observed, truth


def load_config(path: str | Path | None = None, **overrides) -> SimConfig:
    """Config from an optional JSON file with keyword overrides on top."""
    base = SimConfig.from_json(path).to_dict() if path else SimConfig().to_dict()
    params = dict(base["params"])
    for key in list(overrides):
        if key in params:
            params[key] = overrides.pop(key)
    base["params"] = params
    base.update(overrides)
    return SimConfig.from_dict(base)
