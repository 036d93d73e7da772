"""CSIB binary files and CSV import.

CSIB layout, all little-endian::

    header   magic "CSIB", u16 version, u16 flags, u32 P, u32 K, f64 T_rep, T_s, f_c
    payload  P*K complex values as (re, im) f64 pairs, frame-major
    [flags bit0] P records of (g1_db, g2_db, tau_s, psi_rad) f64
    [flags bit1] P*K true channel values, K static values (complex pairs), f64 gamma

Only ``kappa`` of SystemParams is not stored; it defaults on read.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .core import CsiBatch, GroundTruth, SystemParams
from .errors import CorruptFileError, DataError

MAGIC = b"CSIB"
VERSION = 1
FLAG_IMPAIRMENTS = 0x1
FLAG_TRUTH = 0x2
_HEADER = struct.Struct("<4sHHIIddd")
_C16 = np.dtype("<c16")
_F8 = np.dtype("<f8")
_U32_MAX = 2**32 - 1


def _expected_size(P: int, K: int, flags: int) -> int:
    n = _HEADER.size + 16 * P * K
    if flags & FLAG_IMPAIRMENTS:
        n += 32 * P
    if flags & FLAG_TRUTH:
        n += 16 * P * K + 16 * K + 8
    return n


def encode_csib(batch: CsiBatch, truth: Optional[GroundTruth] = None) -> bytes:
    p = batch.params
    if p.P > _U32_MAX or p.K > _U32_MAX:
        raise DataError(f"dimensions P={p.P}, K={p.K} do not fit in 32 bits")
    flags = 0
    parts = []
    if truth is not None:
        if truth.dynamic_d.shape != batch.data.shape:
            raise DataError(f"truth has shape {truth.dynamic_d.shape}, batch {batch.data.shape}")
        flags |= FLAG_TRUTH
        if truth.has_impairments:
            flags |= FLAG_IMPAIRMENTS
            imp = np.column_stack([truth.gain_large_db, truth.gain_agc_db, truth.timing_err, truth.cpe])
            parts.append(imp.astype(_F8).tobytes())
        parts.append(truth.channel.astype(_C16).tobytes())
        parts.append(truth.static_b.astype(_C16).tobytes())
        parts.append(np.array([truth.gamma], dtype=_F8).tobytes())
    header = _HEADER.pack(MAGIC, VERSION, flags, p.P, p.K, p.T_rep, p.T_s, p.f_c)
    return b"".join([header, batch.data.astype(_C16).tobytes()] + parts)


def write_csib(path, batch: CsiBatch, truth: Optional[GroundTruth] = None) -> None:
    """Write a batch and, optionally, its ground truth."""
    Path(path).write_bytes(encode_csib(batch, truth))


def decode_csib(raw: bytes, kappa: Optional[float] = None):
    if len(raw) < _HEADER.size:
        raise CorruptFileError(f"corrupt: expected at least {_HEADER.size} header bytes, found {len(raw)}")
    magic, version, flags, P, K, T_rep, T_s, f_c = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptFileError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CorruptFileError(f"unsupported CSIB version {version}, expected {VERSION}")
    if flags & ~(FLAG_IMPAIRMENTS | FLAG_TRUTH):
        raise CorruptFileError(f"unknown flag bits in 0x{flags:04x}")
    if flags & FLAG_IMPAIRMENTS and not flags & FLAG_TRUTH:
        raise CorruptFileError("impairment block present without the true-channel block")
    expected = _expected_size(P, K, flags)
    if len(raw) != expected:
        raise CorruptFileError(f"corrupt: expected {expected} bytes, found {len(raw)}")
    try:
        params = SystemParams(K=K, P=P, T_rep=T_rep, T_s=T_s, f_c=f_c, **({} if kappa is None else {"kappa": kappa}))
    except DataError as e:
        raise CorruptFileError(f"corrupt header: {e}") from e

    offset = _HEADER.size

    def take(dtype, count):
        nonlocal offset
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        offset += arr.nbytes
        return arr.astype(dtype.newbyteorder("="))

    data = take(_C16, P * K).reshape(P, K)
    try:
        batch = CsiBatch(params, data, "observed")
    except DataError as e:
        raise CorruptFileError(f"corrupt payload: {e}") from e
    if not flags & FLAG_TRUTH:
        return batch, None
    imp = take(_F8, 4 * P).reshape(P, 4) if flags & FLAG_IMPAIRMENTS else None
    h = take(_C16, P * K).reshape(P, K)
    b = take(_C16, K)
    gamma = float(take(_F8, 1)[0])
    imp_kw = {}
    if imp is not None:
        imp_kw = dict(gain_large_db=imp[:, 0], gain_agc_db=imp[:, 1], timing_err=imp[:, 2], cpe=imp[:, 3])
    return batch, GroundTruth(b, h - b, gamma, **imp_kw)


def read_csib(path, kappa: Optional[float] = None):
    """Read a CSIB file; returns ``(batch, truth_or_None)``.

    The dynamic component is recovered as ``h - b``, which matches the
    written value to rounding.
    """
    return decode_csib(Path(path).read_bytes(), kappa)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def import_csv(path, params: SystemParams) -> CsiBatch:
    """Read CSI from CSV in long ``(p, k, re, im)`` or wide (K re/im pairs per row) layout.

    A single header row is detected when the first row is not all numeric.
    """
    with open(path, newline="") as fh:
        rows = [[c.strip() for c in r] for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: no data rows")
    header = None
    if not all(_is_number(c) for c in rows[0]):
        header = [c.lower() for c in rows[0]]
        rows = rows[1:]
    ncols = {len(r) for r in rows}
    if len(ncols) != 1:
        raise DataError(f"{path}: rows have differing column counts {sorted(ncols)}")
    ncol = ncols.pop()
    values = np.empty((len(rows), ncol))
    for i, r in enumerate(rows):
        for j, c in enumerate(r):
            try:
                values[i, j] = float(c)
            except ValueError:
                raise DataError(f"{path}: non-numeric cell {c!r} at data row {i + 1}, column {j + 1}") from None
    P, K = params.P, params.K
    long_header = header is not None and header[:2] == ["p", "k"]
    if not long_header and ncol == 2 * K and len(rows) == P:
        return CsiBatch(params, values[:, 0::2] + 1j * values[:, 1::2], "observed")
    if ncol != 4:
        raise DataError(
            f"{path}: expected 4 columns (p, k, re, im) or {P} rows of {2 * K} columns, "
            f"found {len(rows)} rows of {ncol} columns"
        )
    return _long_to_batch(path, values, params)


def _long_to_batch(path, values, params: SystemParams) -> CsiBatch:
    P, K = params.P, params.K
    idx = values[:, :2]
    if np.any(idx != np.round(idx)):
        raise DataError(f"{path}: p and k must be integers")
    p = idx[:, 0].astype(np.int64)
    k = idx[:, 1].astype(np.int64)
    bad = (p < 0) | (p >= P) | (k < 0) | (k >= K)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DataError(f"{path}: index (p={p[i]}, k={k[i]}) outside {P}x{K}")
    flat = p * K + k
    counts = np.bincount(flat, minlength=P * K)
    if np.any(counts > 1):
        dup = np.flatnonzero(counts > 1)[0]
        raise DataError(f"{path}: duplicate cell (p={dup // K}, k={dup % K})")
    if len(flat) != P * K:
        gaps = np.flatnonzero(counts == 0)[:10]
        listed = ", ".join(f"({g // K}, {g % K})" for g in gaps)
        raise DataError(f"{path}: expected {P * K} rows, found {len(flat)}; missing (p, k): {listed}")
    data = np.empty(P * K, dtype=complex)
    data[flat] = values[:, 2] + 1j * values[:, 3]
    return CsiBatch(params, data.reshape(P, K), "observed")
