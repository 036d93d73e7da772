"""Monte Carlo sweep of cleaning methods over simulated batches.

Gain methods are scored with the true timing and CPE removed, phase methods
with the true gain removed, so each stage is measured in isolation. A
``(gain, phase)`` pair where both are real estimators is scored end to end.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .core import CsiBatch, GainEstimate, GroundTruth, PhaseEstimate, apply_correction, gain_correct
from .errors import DataError
from .gain import GAIN_METHODS
from .metrics import chi_metric, snr_from_chi
from .phase import PHASE_METHODS
from .sim import DYNAMIC_KINDS, SimConfig, simulate

CSV_COLUMNS = ("gamma", "dyn_type", "gain_method", "phase_method", "realization", "chi", "snr", "snr_db", "wall_ms")
ORACLE = "ideal"
SKIP = "none"


def validate_methods(gain_methods: Sequence[str], phase_methods: Sequence[str]) -> None:
    for kind, names, registry in (("gain", gain_methods, GAIN_METHODS), ("phase", phase_methods, PHASE_METHODS)):
        valid = sorted(registry) + [ORACLE, SKIP]
        for name in names:
            if name not in valid:
                raise DataError(f"unknown {kind} method {name!r}; valid: {', '.join(valid)}")


def estimate_gain(name: str, batch: CsiBatch, truth: GroundTruth | None = None) -> GainEstimate:
    if name == ORACLE:
        if truth is None or not truth.has_impairments:
            raise DataError("'ideal' gain needs ground truth with impairments")
        return truth.ideal_gains()
    if name == SKIP:
        return GainEstimate.identity(batch.P)
    return GAIN_METHODS[name](batch)


def estimate_phase(name: str, gain_corrected: CsiBatch, truth: GroundTruth | None = None) -> PhaseEstimate:
    if name == ORACLE:
        if truth is None or not truth.has_impairments:
            raise DataError("'ideal' phase needs ground truth with impairments")
        return truth.ideal_phases()
    if name == SKIP:
        return PhaseEstimate.identity(gain_corrected.P)
    return PHASE_METHODS[name](gain_corrected)


def clean(batch: CsiBatch, gain: str, phase: str, truth: GroundTruth | None = None):
    """Gain estimate, then phase estimate on the gain-corrected batch, then correction.

    Returns the cleaned batch and the wall-clock time in ms spent in the
    two estimators.
    """
    t0 = time.perf_counter()
    ge = estimate_gain(gain, batch, truth)
    pe = estimate_phase(phase, gain_correct(batch, ge), truth)
    elapsed = (time.perf_counter() - t0) * 1e3
    return apply_correction(batch, ge, pe), elapsed


@dataclass(frozen=True)
class _Task:
    base: SimConfig
    gamma: float
    dyn_type: str
    realization: int
    seed: int
    pairs: tuple
    timing: bool


def realization_seed(seed: int, gamma_index: int, dyn_index: int, realization: int) -> int:
    """Seed of one simulated batch; every method in a cell sees the same batch."""
    return int(np.random.SeedSequence([seed, gamma_index, dyn_index, realization]).generate_state(1)[0])


def _run_task(task: _Task) -> list[dict]:
    cfg = task.base.replace(gamma=task.gamma, dynamic_kind=task.dyn_type, seed=task.seed)
    batch, truth = simulate(cfg)
    rows = []
    for gain, phase in task.pairs:
        cleaned, ms = clean(batch, gain, phase, truth)
        rep = chi_metric(cleaned, truth, gain, phase)
        rows.append(
            {
                "gamma": task.gamma,
                "dyn_type": task.dyn_type,
                "gain_method": gain,
                "phase_method": phase,
                "realization": task.realization,
                "chi": rep.chi,
                "snr": rep.snr,
                "snr_db": rep.snr_db,
                "wall_ms": ms if task.timing else None,
            }
        )
    return rows


def bench_sweep(
    base: SimConfig,
    gammas: Sequence[float],
    dyn_types: Sequence[str],
    gain_methods: Sequence[str] = (ORACLE,),
    phase_methods: Sequence[str] = (ORACLE,),
    realizations: int = 10,
    seed: int = 0,
    workers: int = 1,
    timing: bool = False,
) -> Iterator[dict]:
    """Yield one result row per (gamma, dynamic type, realization, gain, phase).

    Rows come out in a fixed order regardless of ``workers``. Wall-clock
    times are recorded only when ``timing`` is set, since they would
    otherwise make repeated runs differ.
    """
    validate_methods(gain_methods, phase_methods)
    for d in dyn_types:
        if d not in DYNAMIC_KINDS:
            raise DataError(f"unknown dynamic type {d!r}; valid: {', '.join(DYNAMIC_KINDS)}")
    if realizations < 1:
        raise DataError("realizations must be at least 1")
    pairs = tuple(itertools.product(gain_methods, phase_methods))
    tasks = [
        _Task(base, float(g), d, r, realization_seed(seed, gi, di, r), pairs, timing)
        for gi, g in enumerate(gammas)
        for di, d in enumerate(dyn_types)
        for r in range(realizations)
    ]
    if workers <= 1:
        for t in tasks:
            yield from _run_task(t)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for rows in pool.map(_run_task, tasks):
            yield from rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(stream, rows: Iterable[dict]) -> list[dict]:
    """Write CSV rows as they arrive so a failure leaves the finished ones behind."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    done = []
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
        stream.flush()
        done.append(row)
    return done


def rows_to_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    write_rows(buf, rows)
    return buf.getvalue()


def summarize(rows: Sequence[dict]) -> list[dict]:
    """Median and quartiles of SNR per (gamma, dynamic type, gain, phase) cell."""
    cells: dict[tuple, list[dict]] = {}
    for row in rows:
        key = (row["gamma"], row["dyn_type"], row["gain_method"], row["phase_method"])
        cells.setdefault(key, []).append(row)
    out = []
    for (gamma, dyn, gain, phase), group in cells.items():
        chi = np.array([r["chi"] for r in group])
        # quantiles are taken on chi, which is finite, and mapped through the
        # monotone chi -> SNR relation; SNR itself is infinite when chi = 1
        q25, q50, q75 = (float(v) for v in snr_from_chi(np.percentile(chi, [25, 50, 75])))
        ms = [r["wall_ms"] for r in group if r["wall_ms"] is not None]
        out.append(
            {
                "gamma": gamma,
                "dyn_type": dyn,
                "gain_method": gain,
                "phase_method": phase,
                "n": len(group),
                "median_snr": q50,
                "median_snr_db": float(10 * np.log10(q50)) if q50 > 0 else None,
                "p25_snr": q25,
                "p75_snr": q75,
                "median_chi": float(np.median(chi)),
                "mean_wall_ms": float(np.mean(ms)) if ms else None,
            }
        )
    return out


def summary_json(rows: Sequence[dict]) -> str:
    return json.dumps({"cells": summarize(rows)}, indent=2, sort_keys=True)
