"""Per-frame timing error and common phase error (CPE) estimation.

Input is gain-corrected CSI ``hbar[p, k] ~ h[p, k] exp(-j(2 pi f_k tau_p + psi_p))``.
Every estimator returns ``(tau_hat, psi_hat)`` such that multiplying frame p
by ``exp(j(2 pi f_k tau_hat_p + psi_hat_p))`` removes the error, up to one
delay and one phase shared by the whole batch.

Baselines (per frame, no memory across frames):

* ``ls-unwrap``: straight-line fit to the unwrapped phase.
* ``coherence``: phase of the lag-one frequency autocorrelation.

Proposed:

* ``los-grid`` / ``los-wls``: match every frame against a static-channel
  estimate averaged over the batch, by a delay grid search or by a
  closed-form weighted line fit on robustly unwrapped phases.
* ``seq-grid`` / ``seq-wls``: frames are matched in order against the sum of
  all frames already cleaned.
* ``bidir-grid`` / ``bidir-wls``: the sequential pass, then the first half
  is re-estimated against the cleaned second half.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import CsiBatch, PhaseEstimate, SystemParams, wrap_phase
from .errors import DataError, NumericalError

GRID_POINTS = 257
STATIC_POWER_THRESHOLD = 0.1
MIN_STRONG_SUBCARRIERS = 8
UNWRAP_HALF_WINDOW = 3


def _check_frames(data, method):
    dead = np.flatnonzero(~np.any(data != 0, axis=1))
    if dead.size:
        raise NumericalError("frame is all zero", method=method, frame=int(dead[0]))


def _fit_line(x, u, w=None):
    """Weighted least-squares fit of ``u ~ slope * x + intercept`` over the last axis."""
    u = np.asarray(u, dtype=float)
    w = np.ones_like(u) if w is None else np.broadcast_to(np.asarray(w, dtype=float), u.shape)
    wsum = w.sum(axis=-1)
    if np.any(wsum <= 0):
        raise NumericalError("total weight is zero", method="wls")
    xm = (w * x).sum(axis=-1) / wsum
    um = (w * u).sum(axis=-1) / wsum
    xc = x - xm[..., None]
    sxx = (w * xc**2).sum(axis=-1)
    scale = (w * x**2).sum(axis=-1)
    if np.any(sxx <= 1e-12 * scale):
        raise NumericalError("weighted line fit is singular", method="wls")
    slope = (w * xc * (u - um[..., None])).sum(axis=-1) / sxx
    return slope, um - slope * xm, xm, um


# ---------------------------------------------------------------- baselines


def phase_ls_unwrap(batch: CsiBatch) -> PhaseEstimate:
    """Per-frame line fit to the unwrapped phase of ``conj(hbar)``."""
    _check_frames(batch.data, "ls-unwrap")
    x = 2 * np.pi * batch.params.freqs
    u = np.unwrap(np.angle(np.conj(batch.data)), axis=1)
    slope, intercept, _, _ = _fit_line(x, u)
    return PhaseEstimate(slope, intercept, method="ls-unwrap")


def coherence_tau(data, params: SystemParams) -> np.ndarray:
    lag = np.sum(data[..., :-1] * np.conj(data[..., 1:]), axis=-1)
    return params.T_s / (2 * np.pi) * np.angle(lag)


def coherence_psi(data, tau, params: SystemParams) -> np.ndarray:
    ramp = np.exp(2j * np.pi * np.multiply.outer(tau, params.freqs))
    return -np.angle(np.sum(data * ramp, axis=-1))


def phase_coherence(batch: CsiBatch) -> PhaseEstimate:
    _check_frames(batch.data, "coherence")
    tau = coherence_tau(batch.data, batch.params)
    return PhaseEstimate(tau, coherence_psi(batch.data, tau, batch.params), method="coherence")


# ------------------------------------------------------ shared building blocks


@dataclass(frozen=True)
class PhaseWorkspace:
    """Coarse per-frame estimates and the static-channel reference built from them.

    ``hbar`` is the batch normalized to unit mean power; ``b_bar`` lives in
    the same scale. ``k_bar`` lists the subcarriers strong enough in
    ``b_bar`` to take part in the weighted fits.
    """

    hbar: np.ndarray
    b_bar: np.ndarray
    k_bar: np.ndarray
    tau_bar: np.ndarray
    psi_bar: np.ndarray
    scale: float
    k_bar_fallback: bool = False


def coarse_workspace(batch: CsiBatch) -> PhaseWorkspace:
    _check_frames(batch.data, "coarse")
    params = batch.params
    scale = float(np.sqrt(np.mean(np.abs(batch.data) ** 2)))
    hbar = batch.data / scale
    tau_bar = coherence_tau(hbar, params)
    psi_bar = coherence_psi(hbar, tau_bar, params)
    ramp = np.exp(1j * (2 * np.pi * np.outer(tau_bar, params.freqs) + psi_bar[:, None]))
    b_bar = np.mean(hbar * ramp, axis=0)
    power = np.abs(b_bar) ** 2
    k_bar = np.flatnonzero(power > STATIC_POWER_THRESHOLD)
    fallback = k_bar.size < MIN_STRONG_SUBCARRIERS
    if fallback:
        strongest = np.argsort(-power, kind="stable")[: max(params.K // 2, 2)]
        k_bar = np.sort(strongest)
    return PhaseWorkspace(hbar, b_bar, k_bar, tau_bar, psi_bar, scale, fallback)


def robust_unwrap(omega) -> np.ndarray:
    """Unwrap phases against a locally averaged reference.

    Each sample is compared with the phase of the sum of itself and its 3
    neighbours on either side (fewer at the ends); the references are
    unwrapped sequentially and each sample's own phase is then wrapped to
    within pi of its reference. Works over the last axis. A reference sum of
    exactly zero reuses the previous reference phase. The phase must advance
    by well under ``2 pi / 7`` per sample, or the local sums cancel.
    """
    omega = np.asarray(omega, dtype=complex)
    n = omega.shape[-1]
    csum = np.concatenate([np.zeros(omega.shape[:-1] + (1,), dtype=complex), np.cumsum(omega, axis=-1)], axis=-1)
    idx = np.arange(n)
    lo = np.clip(idx - UNWRAP_HALF_WINDOW, 0, n)
    hi = np.clip(idx + UNWRAP_HALF_WINDOW + 1, 0, n)
    local = csum[..., hi] - csum[..., lo]
    ref = np.angle(local)
    empty = local == 0
    if empty.any():
        # carry the last usable reference forward
        last = np.where(~empty, idx, 0)
        np.maximum.accumulate(last, axis=-1, out=last)
        ref = np.take_along_axis(ref, last, axis=-1)
    ref = np.unwrap(ref, axis=-1)
    return np.mod(np.angle(omega) - ref + np.pi, 2 * np.pi) - np.pi + ref


@dataclass(frozen=True)
class WlsInputs:
    """Complex per-subcarrier weights and the line-fit data derived from them.

    ``targets`` default to the robust unwrap of ``angle(omega)`` and
    ``weights`` to ``abs(omega)``.
    """

    omega: np.ndarray
    targets: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=complex)
        targets = robust_unwrap(omega) if self.targets is None else np.asarray(self.targets, dtype=float)
        weights = np.abs(omega) if self.weights is None else np.asarray(self.weights, dtype=float)
        if targets.shape != omega.shape or weights.shape != omega.shape:
            raise DataError("targets and weights must match omega in shape")
        if np.any(weights < 0) or not np.all(np.isfinite(targets)):
            raise DataError("weights must be non-negative and targets finite")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "weights", weights)


def wls_solve(inputs: WlsInputs, freqs, tau_bar, bound: float | None = None):
    """Closed-form weighted fit of ``2 pi f (tau - tau_bar) + psi`` to the unwrapped targets.

    ``bound`` optionally constrains ``|tau|``; the fit is convex in the slope
    once ``psi`` is eliminated, so clipping the slope and refitting ``psi``
    gives the constrained optimum. Returns ``(tau_hat, psi_hat)`` with
    ``psi_hat`` wrapped to [-pi, pi).
    """
    x = 2 * np.pi * np.asarray(freqs, dtype=float)
    slope, psi, xm, um = _fit_line(x, inputs.targets, inputs.weights)
    tau_bar = np.asarray(tau_bar, dtype=float)
    if bound is not None:
        clipped = np.clip(tau_bar + slope, -bound, bound) - tau_bar
        psi = np.where(clipped != slope, um - clipped * xm, psi)
        slope = clipped
    return tau_bar + slope, wrap_phase(psi)


class DelayGrid:
    """Delay search over ``[-bound, bound]`` for objectives ``|sum_k v_k exp(-j 2 pi f_k tau)|``."""

    def __init__(self, params: SystemParams, n_points: int = GRID_POINTS, k_index=None):
        self.freqs = params.freqs if k_index is None else params.freqs[k_index]
        self.taus = np.linspace(-params.tau_bound, params.tau_bound, n_points)
        self.step = self.taus[1] - self.taus[0]
        self.steering = np.exp(-2j * np.pi * np.outer(self.freqs, self.taus))

    def search(self, v):
        """Best ``(tau, psi)`` for each row of ``v``, with one parabolic refinement."""
        v = np.atleast_2d(v)
        mag = np.abs(v @ self.steering)
        best = np.argmax(mag, axis=1)
        inner = np.clip(best, 1, self.taus.size - 2)
        rows = np.arange(v.shape[0])
        y0, y1, y2 = mag[rows, inner - 1], mag[rows, inner], mag[rows, inner + 1]
        curv = y0 - 2 * y1 + y2
        with np.errstate(divide="ignore", invalid="ignore"):
            offset = np.where(curv < 0, 0.5 * (y0 - y2) / curv, 0.0)
        offset = np.where(best == inner, np.clip(offset, -0.5, 0.5), 0.0)
        tau = self.taus[best] + offset * self.step
        c = np.sum(v * np.exp(-2j * np.pi * np.outer(tau, self.freqs)), axis=1)
        # the parabola is only a local model; keep the grid point if it scores higher
        worse = np.abs(c) < mag[rows, best]
        tau = np.where(worse, self.taus[best], tau)
        c = np.where(worse, np.sum(v * self.steering[:, best].T, axis=1), c)
        return tau, np.angle(c)


def conditional_ml(hbar_p, reference, params: SystemParams, grid: DelayGrid | None = None):
    """Delay and CPE of one or more frames maximizing correlation with a reference.

    The reference is either the static-channel estimate or the sum of
    already-cleaned frames; the likelihood is
    ``Re{exp(-j(2 pi f tau + psi)) conj(hbar_p) reference}`` summed over k.
    """
    grid = grid if grid is not None else DelayGrid(params)
    return grid.search(np.conj(hbar_p) * reference)


def _clean(hbar, tau, psi, freqs):
    return hbar * np.exp(1j * (2 * np.pi * np.multiply.outer(tau, freqs) + np.asarray(psi)[..., None]))


def _wls_frames(ws: PhaseWorkspace, frames, reference, params: SystemParams):
    kb = ws.k_bar
    f = params.freqs[kb]
    tau_bar = ws.tau_bar[frames]
    omega = np.conj(ws.hbar[frames][..., kb]) * reference[..., kb]
    omega = omega * np.exp(-2j * np.pi * np.multiply.outer(tau_bar, f))
    return wls_solve(WlsInputs(omega), f, tau_bar, bound=params.tau_bound)


# ---------------------------------------------------------------- method 1


def phase_los_grid(batch: CsiBatch) -> PhaseEstimate:
    ws = coarse_workspace(batch)
    tau, psi = conditional_ml(ws.hbar, ws.b_bar, batch.params)
    return PhaseEstimate(tau, psi, method="los-grid", diagnostics=_diag(ws))


def phase_los_wls(batch: CsiBatch) -> PhaseEstimate:
    ws = coarse_workspace(batch)
    tau, psi = _wls_frames(ws, np.arange(batch.P), ws.b_bar, batch.params)
    return PhaseEstimate(tau, psi, method="los-wls", diagnostics=_diag(ws))


def _diag(ws: PhaseWorkspace) -> dict:
    return {"k_bar_size": int(ws.k_bar.size), "k_bar_fallback": ws.k_bar_fallback}


# ---------------------------------------------------------------- method 2


def warm_start_frames(P: int) -> int:
    """Frames estimated against the static reference before the sequential pass."""
    return max(P // 10, 1)


def _forward(ws: PhaseWorkspace, params: SystemParams, variant: str, grid: DelayGrid | None):
    P = params.P
    f = params.freqs
    tau = np.empty(P)
    psi = np.empty(P)
    n0 = warm_start_frames(P)
    head = np.arange(n0)
    tau[head], psi[head] = _wls_frames(ws, head, ws.b_bar, params)
    cleaned = np.empty_like(ws.hbar)
    cleaned[head] = _clean(ws.hbar[head], tau[head], psi[head], f)
    acc = cleaned[head].sum(axis=0)
    for p in range(n0, P):
        if not np.any(acc):
            raise NumericalError("reference sum of cleaned frames is zero", method=f"seq-{variant}", frame=p)
        if variant == "grid":
            t, s = grid.search(np.conj(ws.hbar[p]) * acc)
            tau[p], psi[p] = t[0], s[0]
        else:
            tau[p], psi[p] = _wls_frames(ws, p, acc, params)
        cleaned[p] = _clean(ws.hbar[p], tau[p], psi[p], f)
        acc += cleaned[p]
    return tau, psi, cleaned


def _check_variant(variant):
    if variant not in ("grid", "wls"):
        raise DataError(f"variant must be 'grid' or 'wls', got {variant!r}")


def phase_seq(batch: CsiBatch, variant: str = "wls") -> PhaseEstimate:
    """Sequential pass: each frame is matched against the sum of the frames before it."""
    _check_variant(variant)
    ws = coarse_workspace(batch)
    grid = DelayGrid(batch.params) if variant == "grid" else None
    tau, psi, _ = _forward(ws, batch.params, variant, grid)
    return PhaseEstimate(tau, psi, method=f"seq-{variant}", diagnostics=_diag(ws))


def phase_bidir(batch: CsiBatch, variant: str = "wls") -> PhaseEstimate:
    """Sequential pass, then frames up to P/2 are re-estimated against the cleaned frames after P/2."""
    _check_variant(variant)
    params = batch.params
    ws = coarse_workspace(batch)
    grid = DelayGrid(params) if variant == "grid" else None
    tau, psi, cleaned = _forward(ws, params, variant, grid)
    half = params.P // 2
    acc = cleaned[half + 1 :].sum(axis=0)
    if not np.any(acc):
        raise NumericalError("reference sum of cleaned frames is zero", method=f"bidir-{variant}", frame=half)
    redo = np.arange(half, -1, -1)
    if variant == "grid":
        tau[redo], psi[redo] = grid.search(np.conj(ws.hbar[redo]) * acc)
    else:
        tau[redo], psi[redo] = _wls_frames(ws, redo, acc, params)
    return PhaseEstimate(tau, psi, method=f"bidir-{variant}", diagnostics=_diag(ws))


PHASE_METHODS: dict[str, Callable[[CsiBatch], PhaseEstimate]] = {
    "ls-unwrap": phase_ls_unwrap,
    "coherence": phase_coherence,
    "los-grid": phase_los_grid,
    "los-wls": phase_los_wls,
    "seq-grid": lambda b: phase_seq(b, "grid"),
    "seq-wls": lambda b: phase_seq(b, "wls"),
    "bidir-grid": lambda b: phase_bidir(b, "grid"),
    "bidir-wls": lambda b: phase_bidir(b, "wls"),
}
BASELINE_PHASE_METHODS = ("ls-unwrap", "coherence")
