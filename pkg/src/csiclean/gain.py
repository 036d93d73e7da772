"""Per-frame receiver gain estimation.

The receiver gain in dB is modelled as a slow large-scale drift plus an AGC
term taken from a discrete grid. Four estimators are provided:

``norm``
    every power change is gain: divide each frame by its RMS.
``cluster-abs``
    DBSCAN on per-frame power, one gain per cluster.
``cluster-inc``
    DBSCAN on frame-to-frame power increments to track AGC steps, then a
    low-pass filter for the drift.
``uniform-ml``
    AGC steps on a uniform grid of unknown step; drift from the circular
    mean of the power wrapped by the step, AGC by rounding, step chosen by
    a wrapped-Gaussian fit objective.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .core import CsiBatch, GainEstimate, db_to_amplitude, power_to_db
from .errors import DataError, NumericalError

ABS_CLUSTER_EPS = 0.15
INC_CLUSTER_EPS = 0.2
LAMBDA_FRACTIONS = np.arange(1, 21) * 0.05


@dataclass(frozen=True)
class PowerTrace:
    """Observed per-frame power in dB and its frame-to-frame increments."""

    gamma_tilde_db: np.ndarray
    delta_db: np.ndarray


@dataclass(frozen=True)
class WrappedFit:
    """Diagnostics of one step-size hypothesis of the uniform-grid estimator."""

    xi: np.ndarray
    sigma_hat_db: float
    distortion: float
    objective: float
    lam: float
    feasible: bool


def power_trace(batch: CsiBatch) -> PowerTrace:
    power = np.mean(np.abs(batch.data) ** 2, axis=1)
    zero = np.flatnonzero(power == 0)
    if zero.size:
        raise NumericalError("frame has zero power", method="power-trace", frame=int(zero[0]))
    gamma = power_to_db(power)
    delta = np.diff(gamma, prepend=gamma[0])
    return PowerTrace(gamma, delta)


def moving_average(x, half_width: int) -> np.ndarray:
    """Centered moving average truncated at the edges.

    Sample p averages x[p - half_width : p + half_width + 1], clipped to the
    array, so the edge outputs use fewer samples instead of padding.
    """
    x = np.asarray(x)
    n = x.size
    csum = np.concatenate([np.zeros(1, dtype=x.dtype), np.cumsum(x)])
    idx = np.arange(n)
    lo = np.clip(idx - half_width, 0, n)
    hi = np.clip(idx + half_width + 1, 0, n)
    return (csum[hi] - csum[lo]) / (hi - lo)


def lpf_half_width(T_rep: float) -> int:
    """One-sided moving-average width for the 0.1 Hz low-pass filter: 6 s of frames."""
    return max(int(round(6.0 / T_rep)), 0)


def dbscan_1d(points, eps: float, min_points: int = 1) -> np.ndarray:
    """DBSCAN on scalars, labels in input order, ``-1`` for noise.

    Points within ``eps`` (inclusive) are neighbours. With ``min_points=1``
    every point is a core point, so clusters are the runs of the sorted
    values split wherever the gap exceeds ``eps``. Otherwise core points are
    chained the same way and each border point joins the cluster of its
    nearest core point. Cluster ids increase with value.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise DataError("dbscan_1d needs a non-empty vector")
    if not eps > 0:
        raise DataError(f"eps must be positive, got {eps}")
    order = np.argsort(x, kind="stable")
    xs = x[order]
    if min_points <= 1:
        sorted_labels = np.concatenate([[0], np.cumsum(np.diff(xs) > eps)])
    else:
        counts = np.searchsorted(xs, xs + eps, side="right") - np.searchsorted(xs, xs - eps, side="left")
        core = counts >= min_points
        sorted_labels = np.full(xs.size, -1)
        if core.any():
            cx = xs[core]
            sorted_labels[core] = np.concatenate([[0], np.cumsum(np.diff(cx) > eps)])
            core_idx = np.flatnonzero(core)
            pos = np.searchsorted(cx, xs)
            for i in np.flatnonzero(~core):
                cands = [j for j in (pos[i] - 1, pos[i]) if 0 <= j < cx.size]
                j = min(cands, key=lambda j: (abs(cx[j] - xs[i]), j))
                if abs(cx[j] - xs[i]) <= eps:
                    sorted_labels[i] = sorted_labels[core_idx[j]]
    labels = np.empty_like(sorted_labels)
    labels[order] = sorted_labels
    return labels


def cluster_means(values, labels) -> np.ndarray:
    """Each sample replaced by the mean of its cluster (noise keeps its value)."""
    values = np.asarray(values, dtype=float)
    out = values.copy()
    clustered = labels >= 0
    if clustered.any():
        ids = labels[clustered]
        sums = np.bincount(ids, weights=values[clustered])
        counts = np.bincount(ids)
        out[clustered] = sums[ids] / counts[ids]
    return out


def gain_norm_power(batch: CsiBatch) -> GainEstimate:
    trace = power_trace(batch)
    g = np.sqrt(np.mean(np.abs(batch.data) ** 2, axis=1))
    return GainEstimate(g, trace.gamma_tilde_db, np.zeros(batch.P), method="norm")


def gain_cluster_abs(batch: CsiBatch, eps: float = ABS_CLUSTER_EPS) -> GainEstimate:
    gamma = power_trace(batch).gamma_tilde_db
    level = cluster_means(gamma, dbscan_1d(gamma, eps))
    return GainEstimate(db_to_amplitude(level), level, np.zeros(batch.P), method="cluster-abs")


def _incremental_from_trace(trace: PowerTrace, T_rep: float, eps: float):
    delta = trace.delta_db
    inc = np.zeros_like(delta)
    if delta.size > 1:
        inc[1:] = cluster_means(delta[1:], dbscan_1d(delta[1:], eps))
    g2 = np.cumsum(inc)
    g1 = moving_average(trace.gamma_tilde_db - g2, lpf_half_width(T_rep))
    return g1, g2


def gain_cluster_incremental(batch: CsiBatch, eps: float = INC_CLUSTER_EPS) -> GainEstimate:
    """AGC steps from clustered power increments, drift by low-pass filtering.

    Frame 0 has no predecessor, so its AGC level anchors the trace at 0 dB;
    any constant offset ends up in the large-scale part.
    """
    g1, g2 = _incremental_from_trace(power_trace(batch), batch.params.T_rep, eps)
    return GainEstimate.from_db(g1, g2, method="cluster-inc")


def estimate_g1_uniform(xi, lam: float, T_rep: float) -> np.ndarray:
    """Large-scale gain from the power trace wrapped onto the unit circle.

    ``xi`` is ``exp(j 2 pi Gamma / lam)``. Its low-passed phase, unwrapped
    and scaled back by ``lam / 2 pi``, follows the slow drift while the AGC
    steps (whole multiples of ``lam``) leave it untouched.
    """
    smoothed = moving_average(np.asarray(xi, dtype=complex), lpf_half_width(T_rep))
    weak = np.flatnonzero(np.abs(smoothed) < 1e-9)
    if weak.size:
        raise NumericalError(
            f"low-passed wrapped power vanishes for step {lam:.4g} dB", method="uniform-ml", frame=int(weak[0])
        )
    return np.unwrap(np.angle(smoothed)) * lam / (2 * np.pi)


def agc_ml_uniform(gamma_tilde, g1_hat, lam: float, paper_literal: bool = False):
    """Round the drift-compensated power onto the AGC grid.

    Returns ``(g2_hat, gamma_hat)`` with ``gamma_hat`` in ``[-lam/2, lam/2)``.
    ``paper_literal`` subtracts an extra half step from the AGC level, which
    centres the residual on ``lam/2`` instead of zero.
    """
    if not lam > 0:
        raise DataError(f"AGC step must be positive, got {lam}")
    x = np.asarray(gamma_tilde, dtype=float) - np.asarray(g1_hat, dtype=float)
    z = np.floor(x / lam + 0.5)
    if paper_literal:
        z = z - 0.5
    g2 = lam * z
    return g2, x - g2


def wrapped_sigma_estimate(gamma_hat, lam: float) -> float:
    """Standard deviation of a wrapped Gaussian from its circular mean.

    Uses ``|E exp(j 2 pi X / lam)| = exp(-2 pi^2 sigma^2 / lam^2)``. A circular
    mean of (numerically) zero length gives ``inf``.
    """
    m = np.abs(np.mean(np.exp(2j * np.pi * np.asarray(gamma_hat, dtype=float) / lam)))
    if m <= 1e-12:
        return float("inf")
    var = -(lam**2) / (2 * np.pi**2) * np.log(min(m, 1.0))
    return float(np.sqrt(var))


def distortion(x: float) -> float:
    """Mean squared number of whole steps lost when rounding N(0, 1) onto a grid of spacing ``x``.

    Multiplying by ``lam**2`` with ``x = lam / sigma`` gives the distortion of
    rounding a Gaussian of deviation ``sigma`` onto a grid of step ``lam``.
    """
    if not x > 0:
        raise DataError(f"distortion argument must be positive, got {x}")
    if np.isinf(x):
        return 0.0
    z = np.arange(1, int(np.ceil(10.0 / x)) + 3, dtype=float)
    mass = ndtr(-(z - 0.5) * x) - ndtr(-(z + 0.5) * x)
    return float(2.0 * np.sum(mass * z**2))


def fit_step(gamma_tilde, lam: float, T_rep: float, paper_literal: bool = False):
    """Evaluate one AGC step hypothesis. Returns ``(fit, g1_hat, g2_hat)``."""
    xi = np.exp(2j * np.pi * gamma_tilde / lam)
    try:
        g1 = estimate_g1_uniform(xi, lam, T_rep)
    except NumericalError:
        return WrappedFit(xi, float("inf"), float("inf"), float("inf"), lam, False), None, None
    g2, gamma_hat = agc_ml_uniform(gamma_tilde, g1, lam, paper_literal)
    feasible = bool(np.mean(gamma_hat**2) <= lam**2 / 24)
    sigma = wrapped_sigma_estimate(gamma_hat, lam) if feasible else float("inf")
    if not np.isfinite(sigma):
        return WrappedFit(xi, sigma, float("inf"), float("inf"), lam, False), g1, g2
    dist = lam**2 * distortion(lam / sigma) if sigma > 0 else 0.0
    return WrappedFit(xi, sigma, dist, sigma**2 + dist, lam, True), g1, g2


def gain_uniform_ml(batch: CsiBatch, paper_literal_eq14: bool = False) -> GainEstimate:
    """AGC on a uniform grid of unknown step, chosen by line search.

    Step hypotheses are 5 %, 10 %, ..., 100 % of 1.5 times the observed power
    range. Each is scored by fit error plus rounding distortion; hypotheses
    whose residual power is too close to uniform are skipped. Ties go to the
    larger step. If every hypothesis is skipped the incremental clustering
    estimate is returned instead, tagged in ``method``.
    """
    if batch.P < 4:
        raise DataError(f"uniform-ml needs at least 4 frames, got {batch.P}")
    T_rep = batch.params.T_rep
    trace = power_trace(batch)
    gamma = trace.gamma_tilde_db
    span = gamma.max() - gamma.min()
    if span == 0:
        g1 = moving_average(gamma, lpf_half_width(T_rep))
        return GainEstimate.from_db(g1, np.zeros(batch.P), method="uniform-ml")
    best = None
    for lam in LAMBDA_FRACTIONS * 1.5 * span:
        fit, g1, g2 = fit_step(gamma, lam, T_rep, paper_literal_eq14)
        if fit.feasible and (best is None or fit.objective <= best[0].objective):
            best = (fit, g1, g2)
    if best is None:
        g1, g2 = _incremental_from_trace(trace, T_rep, INC_CLUSTER_EPS)
        return GainEstimate.from_db(g1, g2, method="uniform-ml+fallback-cluster-inc")
    fit, g1, g2 = best
    return GainEstimate.from_db(g1, g2, lambda_hat=float(fit.lam), method="uniform-ml")


GAIN_METHODS: dict[str, Callable[[CsiBatch], GainEstimate]] = {
    "norm": gain_norm_power,
    "cluster-abs": gain_cluster_abs,
    "cluster-inc": gain_cluster_incremental,
    "uniform-ml": gain_uniform_ml,
}
