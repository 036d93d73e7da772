"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 numerical
failure in an estimator. Messages go to stderr; results only to files.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench
from .core import SystemParams
from .errors import DataError, NumericalError
from .formats import import_csv, read_csib, write_csib
from .gain import GAIN_METHODS
from .metrics import DEFAULT_NU_GRID, chi_metric, doppler_spectrum, nu_grid, respiration_snr
from .phase import PHASE_METHODS
from .sim import DYNAMIC_KINDS, load_config, simulate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GAIN_CHOICES = sorted(GAIN_METHODS) + [bench.ORACLE, bench.SKIP]
PHASE_CHOICES = sorted(PHASE_METHODS) + [bench.ORACLE, bench.SKIP]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _sim_flags(p, multi=False):
    nargs = "+" if multi else None
    p.add_argument("--config", help="JSON simulation config; flags override it")
    p.add_argument("--gamma", type=float, nargs=nargs, help="static power fraction")
    p.add_argument("--dyn", choices=DYNAMIC_KINDS, nargs=nargs, help="dynamic component type")
    p.add_argument("--seed", type=int)
    p.add_argument("--K", type=int, help="subcarriers")
    p.add_argument("--P", type=int, help="frames per batch")
    p.add_argument("--T-rep", dest="T_rep", type=float, help="frame interval (s)")
    p.add_argument("--no-impairments", action="store_true", help="simulate an unimpaired receiver")


def _grid_flags(p):
    lo, hi, step = DEFAULT_NU_GRID
    p.add_argument("--nu-min", type=float, default=lo)
    p.add_argument("--nu-max", type=float, default=hi)
    p.add_argument("--nu-step", type=float, default=step)
    p.add_argument("--remove-static", action="store_true", help="subtract each subcarrier's mean first")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="csiclean", description="Clean gain and phase errors from WiFi CSI.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw an impaired batch with ground truth")
    _sim_flags(p)
    p.add_argument("--out", required=True, help="output CSIB file")

    p = sub.add_parser("clean", help="estimate and remove gain and phase errors")
    p.add_argument("--in", dest="inp", required=True, help="CSIB or CSV input")
    p.add_argument("--gain", choices=GAIN_CHOICES, default="uniform-ml")
    p.add_argument("--phase", choices=PHASE_CHOICES, default="seq-wls")
    p.add_argument("--K", type=int, help="subcarriers (CSV input)")
    p.add_argument("--P", type=int, help="frames (CSV input)")
    p.add_argument("--T-rep", dest="T_rep", type=float, default=0.1, help="frame interval (CSV input)")
    p.add_argument("--T-s", dest="T_s", type=float, default=3.2e-6, help="symbol duration (CSV input)")
    p.add_argument("--out", required=True, help="output CSIB file")

    p = sub.add_parser("eval", help="score a cleaned batch against ground truth")
    p.add_argument("--truth", required=True, help="CSIB file carrying ground truth")
    p.add_argument("--cleaned", required=True, help="cleaned CSIB file")
    p.add_argument("--out", required=True, help="output JSON report")

    p = sub.add_parser("doppler", help="Doppler power spectrum of a batch")
    p.add_argument("--in", dest="inp", required=True)
    _grid_flags(p)
    p.add_argument("--out", required=True, help="output JSON")

    p = sub.add_parser("resp-snr", help="respiration-band SNR of a batch")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--nu0", type=float, required=True, help="breathing rate (Hz)")
    _grid_flags(p)
    p.add_argument("--out", required=True, help="output JSON")

    p = sub.add_parser("bench", help="Monte Carlo sweep of methods")
    _sim_flags(p, multi=True)
    p.add_argument("--gain", choices=GAIN_CHOICES, nargs="+", default=[bench.ORACLE])
    p.add_argument("--phase", choices=PHASE_CHOICES, nargs="+", default=[bench.ORACLE])
    p.add_argument("--realizations", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="record estimator wall-clock (breaks byte-identical output)")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--summary", help="output JSON with per-cell medians")
    return ap


def _sim_overrides(args, multi=False) -> dict:
    out = {}
    for key in ("K", "P", "T_rep", "seed"):
        v = getattr(args, key)
        if v is not None:
            out[key] = v
    if not multi:
        if args.gamma is not None:
            out["gamma"] = args.gamma
        if args.dyn is not None:
            out["dynamic_kind"] = args.dyn
    if args.no_impairments:
        out["impaired"] = False
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_batch(args):
    if str(args.inp).lower().endswith(".csv"):
        if args.K is None or args.P is None:
            raise UsageError("CSV input needs --K and --P")
        return import_csv(args.inp, SystemParams(K=args.K, P=args.P, T_rep=args.T_rep, T_s=args.T_s)), None
    return read_csib(args.inp)


def cmd_simulate(args):
    cfg = load_config(args.config, **_sim_overrides(args))
    batch, truth = simulate(cfg)
    write_csib(args.out, batch, truth)


def cmd_clean(args):
    batch, truth = _load_batch(args)
    cleaned, _ = bench.clean(batch, args.gain, args.phase, truth)
    write_csib(args.out, cleaned)


def cmd_eval(args):
    _, truth = read_csib(args.truth)
    if truth is None:
        raise DataError(f"{args.truth} carries no ground truth")
    cleaned, _ = read_csib(args.cleaned)
    _write_json(args.out, chi_metric(cleaned, truth).to_dict())


def _spectrum(args):
    batch, _ = read_csib(args.inp)
    grid = nu_grid(args.nu_min, args.nu_max, args.nu_step)
    return doppler_spectrum(batch, grid, remove_static=args.remove_static, nu0=getattr(args, "nu0", None))


def cmd_doppler(args):
    _write_json(args.out, _spectrum(args).to_dict())


def cmd_resp_snr(args):
    spec = _spectrum(args)
    _write_json(args.out, {"nu0": args.nu0, "snr": respiration_snr(spec, args.nu0)})


def cmd_bench(args):
    cfg = load_config(args.config, **_sim_overrides(args, multi=True))
    gammas = args.gamma if args.gamma is not None else [cfg.gamma]
    dyns = args.dyn if args.dyn is not None else [cfg.dynamic_kind]
    rows = bench.bench_sweep(
        cfg, gammas, dyns, args.gain, args.phase, args.realizations, cfg.seed, args.workers, args.timing
    )
    with open(args.out, "w", newline="") as fh:
        done = bench.write_rows(fh, rows)
    if args.summary:
        Path(args.summary).write_text(bench.summary_json(done) + "\n")


COMMANDS = {
    "simulate": cmd_simulate,
    "clean": cmd_clean,
    "eval": cmd_eval,
    "doppler": cmd_doppler,
    "resp-snr": cmd_resp_snr,
    "bench": cmd_bench,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
