"""Command-line entry point: simulate, sweep, classify, fit, presets.

Exit codes: 0 success, 2 usage or configuration error, 3 computation or data
error, 4 fit did not converge (the report is still written).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    BranchSample,
    BranchSet,
    InsufficientBranchesError,
    classify_crossing,
    find_peaks,
    track_branches,
)
from .config import ConfigError, ProjectConfig, dump_yaml, list_presets, load_config, load_preset, preset_path
from .fit import fit, overlay
from .io import (
    DB,
    LINEAR,
    DataFormatError,
    SweepCsvLayout,
    dump_report,
    read_sweep_csv,
    save_report,
    write_overlay_csv,
    write_sweep_csv,
    write_trace_csv,
    write_tracks_csv,
)
from .model import ConvergenceError
from .spectrum import SweepError, map_geometry, s21, sweep

EXIT_OK, EXIT_USAGE, EXIT_COMPUTE, EXIT_NOCONVERGE = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _region(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"region must look like LMIN:LMAX, got {text!r}") from None
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise argparse.ArgumentTypeError(f"region needs finite LMIN < LMAX, got {text!r}")
    return lo, hi


def _load(ref: str) -> ProjectConfig:
    """A config path, or the name of a preset when no such file exists."""
    path = Path(ref)
    if path.is_file():
        return load_config(path)
    if ref in list_presets():
        return load_preset(ref)
    raise ConfigError(f"config: no such file or preset: {ref}")


def _verbose(args, cfg: ProjectConfig) -> None:
    if args.verbose:
        print("# resolved parameters", file=sys.stderr)
        print(dump_yaml({"seed": args.seed, "config": cfg.to_dict()}), end="", file=sys.stderr)


def _layout(args) -> SweepCsvLayout:
    return SweepCsvLayout(scale=args.scale)


def _peaks_as_branches(sw, min_depth: float) -> BranchSet:
    """Branch set for sweeps too short to track: every dip is its own branch."""
    branches = []
    for l, trace in zip(sw.l_values, sw.traces):
        for p in find_peaks(trace, min_depth):
            branches.append([BranchSample(float(l), p.frequency, p.depth, p.width)])
    return BranchSet(branches, 0.0, [])


def cmd_simulate(args) -> int:
    cfg = _load(args.config)
    _verbose(args, cfg)
    try:
        map_geometry(cfg.geometry(), args.l, allow_outside=args.force_domain)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    trace = s21(cfg.system(args.l), cfg.grid, cfg.drive_vector(), args.l)
    write_trace_csv(trace, args.out)
    peaks = find_peaks(trace, cfg.analysis.min_depth)
    print(f"{'freq_GHz':>12} {'depth':>10} {'width_GHz':>10}")
    for p in peaks:
        print(f"{p.frequency:12.6f} {p.depth:10.6f} {p.width:10.6f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args.config)
    _verbose(args, cfg)
    sw = sweep(
        cfg.system(), cfg.geometry(), cfg.l_values(), cfg.grid, cfg.drive_vector(),
        workers=args.workers,
    )
    write_sweep_csv(sw, args.out, _layout(args))
    if args.tracks:
        if sw.l_values.size >= 3:
            branches = track_branches(sw, cfg.analysis.min_depth)
        else:
            branches = _peaks_as_branches(sw, cfg.analysis.min_depth)
        write_tracks_csv(branches, args.tracks, sw.mode_tracks, sw.l_values)
        for w in branches.warnings:
            print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def cmd_classify(args) -> int:
    data = read_sweep_csv(args.inp, _layout(args))
    if args.verbose:
        print(dump_yaml({"input": str(args.inp), "region": list(args.region),
                         "min_depth": args.min_depth, "gap_factor": args.gap_factor,
                         "merge_factor": args.merge_factor}), end="", file=sys.stderr)
    branches = track_branches(data, args.min_depth)
    report = classify_crossing(branches, args.region, args.gap_factor, args.merge_factor)
    inputs = {
        "input": str(args.inp), "scale": args.scale, "region": list(args.region),
        "min_depth": args.min_depth, "gap_factor": args.gap_factor,
        "merge_factor": args.merge_factor,
    }
    print(dump_report(report, inputs), end="")
    if args.out:
        save_report(report, args.out, inputs)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _load(args.config)
    spec = cfg.fit_spec(seed=args.seed)
    _verbose(args, cfg)
    data = read_sweep_csv(args.data, _layout(args))
    if args.region:
        try:
            data = data.subset(*args.region)
        except ValueError as exc:
            raise DataFormatError(str(exc)) from exc
    most = max(len(find_peaks(t, cfg.analysis.min_depth)) for t in data.traces)
    if most < 2:
        raise InsufficientBranchesError(
            f"region holds at most {most} resolved branch(es) per trace; need at least 2"
        )
    model = cfg.parameter_model()
    result = fit(spec, data, model, workers=args.workers)
    inputs = {
        "config": cfg.to_dict(), "data": str(args.data), "scale": args.scale,
        "region": list(args.region) if args.region else None, "seed": args.seed,
    }
    save_report(result, args.out, inputs)
    overlay_path = args.overlay or str(Path(args.out).with_suffix("")) + ".overlay.csv"
    write_overlay_csv(data.traces, overlay(result, data, model), overlay_path)
    if not result.converged:
        print(f"error: fit did not converge; report written to {args.out}", file=sys.stderr)
        return EXIT_NOCONVERGE
    return EXIT_OK


def cmd_presets(args) -> int:
    for name in list_presets():
        print(f"{name}\t{preset_path(name)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS,
                        help="print the resolved parameter set to stderr")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="seed for every stochastic step (default 0)")

    parser = argparse.ArgumentParser(
        prog="ppcoupling", parents=[common],
        description="Photon-photon coupling between resonators on a shared feedline.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def scale_arg(p):
        p.add_argument("--scale", choices=(LINEAR, DB), default=LINEAR,
                       help="magnitude scale of sweep CSV files (default linear)")

    p = sub.add_parser("simulate", parents=[common], help="one transmission trace at a given L")
    p.add_argument("--config", required=True, help="config file or preset name")
    p.add_argument("--l", type=float, required=True, help="sweep value L in mm")
    p.add_argument("--out", required=True, help="trace CSV to write")
    p.add_argument("--force-domain", action="store_true", help="allow L outside the config domain")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", parents=[common], help="transmission map over the configured L values")
    p.add_argument("--config", required=True, help="config file or preset name")
    p.add_argument("--out", required=True, help="long-format sweep CSV to write")
    p.add_argument("--tracks", help="branch-track CSV to write")
    p.add_argument("--workers", type=int, default=1, help="threads for the sweep (default 1)")
    scale_arg(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("classify", parents=[common], help="classify the crossing inside a region")
    p.add_argument("--in", dest="inp", required=True, help="long-format sweep CSV")
    p.add_argument("--region", type=_region, required=True, metavar="LMIN:LMAX")
    p.add_argument("--min-depth", type=float, default=0.01)
    p.add_argument("--gap-factor", type=float, default=3.0)
    p.add_argument("--merge-factor", type=float, default=0.5)
    p.add_argument("--out", help="also save the report to this file")
    scale_arg(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("fit", parents=[common], help="fit couplings and dampings to sweep data")
    p.add_argument("--config", required=True, help="config file or preset name (fit section used)")
    p.add_argument("--data", required=True, help="long-format sweep CSV")
    p.add_argument("--region", type=_region, metavar="LMIN:LMAX", help="restrict to this L range")
    p.add_argument("--out", required=True, help="fit report to write")
    p.add_argument("--overlay", help="overlay CSV (default: next to the report)")
    p.add_argument("--workers", type=int, default=1, help="threads for multi-start (default 1)")
    scale_arg(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("presets", parents=[common], help="list available presets")
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.verbose = getattr(args, "verbose", False)
    args.seed = getattr(args, "seed", 0)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, InsufficientBranchesError, SweepError, ConvergenceError,
            ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
