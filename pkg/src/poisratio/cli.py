"""Command-line entry point.

Results go to stdout as ``key=value`` lines; a readable summary goes to
stderr. Exit codes: 0 success, 2 usage, 3 zero count, 4 numeric failure,
5 I/O failure.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import __version__
from .coverage import (
    MixingSpec,
    Rates,
    conditional_risks,
    half_width_ratio_grid,
    mc_conditional_risks,
    unconditional_risks,
)
from .errors import (
    DegenerateSampleError,
    DomainError,
    NumericError,
    SeparationError,
    SurfaceFormatError,
)
from .estimators import ConfidenceSpec, EstimatorKind, OffsetPair, apply_offsets, compute_ci

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SEPARATION = 3
EXIT_NUMERIC = 4
EXIT_IO = 5

KINDS = [k.value for k in EstimatorKind]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (math.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"must be a positive number: {text!r}")
    return v


def _count(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative: {text!r}")
    return v


def _pos_int(text):
    v = _count(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1: {text!r}")
    return v


def _level(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"level must lie in (0, 1): {text!r}")
    return v


def _grid(text):
    from .sweep import GRID_PRESETS, GridSpec

    if text in GRID_PRESETS:
        return GRID_PRESETS[text]
    parts = text.split(",")
    if len(parts) not in (3, 4) or (len(parts) == 4 and parts[3] not in ("log", "linear")):
        raise argparse.ArgumentTypeError(f"grid must be min,max,step[,log] or one of {sorted(GRID_PRESETS)}: {text!r}")
    try:
        lo, hi, step = (float(p) for p in parts[:3])
        scale = "logarithmic" if len(parts) == 4 and parts[3] == "log" else "linear"
        return GridSpec(lo, hi, step, scale)
    except (ValueError, DomainError) as exc:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}: {exc}") from None


def _thresholds(text):
    from .report import BandSpec

    try:
        return BandSpec(tuple(float(x) for x in text.split(",")))
    except (ValueError, DomainError) as exc:
        raise argparse.ArgumentTypeError(f"bad thresholds {text!r}: {exc}") from None


def _mixture_cache(kind, rates, spec, mixing):
    # one table up front is far cheaper than an interval per support pair
    from .numerics import lognormal_discretize
    from .sweep import _count_extent, build_ci_cache

    tops = [float(lognormal_discretize(lam, mixing.gsd, mixing.n_points, mixing.grid_precision).support[-1])
            for lam in (rates.lambda1, rates.lambda2)]
    return build_ci_cache(kind, spec, _count_extent(tops[0]), _count_extent(tops[1]))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="poisratio", description="Poisson rate-ratio intervals and their coverage risks.")
    p.add_argument("--version", action="version", version=f"poisratio {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("ci", help="interval for one pair of counts")
    c.add_argument("--estimator", required=True, choices=KINDS)
    c.add_argument("--y1", required=True, type=_count)
    c.add_argument("--y2", required=True, type=_count)
    c.add_argument("--level", type=_level, default=0.95)
    c.add_argument("--r1", type=_positive)
    c.add_argument("--r2", type=_positive)

    v = sub.add_parser("coverage", help="one-sided risks at one (lambda1, lambda2)")
    v.add_argument("--mode", required=True, choices=["conditional", "unconditional", "mc"])
    v.add_argument("--estimator", required=True, choices=KINDS)
    v.add_argument("--lambda1", required=True, type=_positive)
    v.add_argument("--lambda2", required=True, type=_positive)
    v.add_argument("--level", type=_level, default=0.95)
    v.add_argument("--gsd", type=_positive, default=1.10)
    v.add_argument("--mix-points", type=_pos_int, default=20)
    v.add_argument("--sims", type=_pos_int, default=1_000_000)
    v.add_argument("--seed", type=_count, default=0)

    s = sub.add_parser("sweep", help="risk surface over a grid")
    s.add_argument("--mode", required=True, choices=["conditional", "unconditional"])
    s.add_argument("--estimator", required=True, choices=KINDS)
    s.add_argument("--grid1", required=True, type=_grid)
    s.add_argument("--grid2", required=True, type=_grid)
    s.add_argument("--level", type=_level, default=0.95)
    s.add_argument("--gsd", type=_positive, default=1.10)
    s.add_argument("--mix-points", type=_pos_int, default=20)
    s.add_argument("--out", required=True)
    s.add_argument("--threads", type=_pos_int, default=1)

    h = sub.add_parser("halfwidth", help="half-width ratio of two estimators over [1, ymax]^2")
    h.add_argument("--a", required=True, choices=KINDS)
    h.add_argument("--b", required=True, choices=KINDS)
    h.add_argument("--side", required=True, choices=["lower", "upper"])
    h.add_argument("--ymax", required=True, type=_pos_int)
    h.add_argument("--level", type=_level, default=0.95)
    h.add_argument("--out", required=True)

    r = sub.add_parser("render", help="banded PPM image of a saved surface")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--side", required=True, choices=["lower", "upper"])
    r.add_argument("--thresholds", type=_thresholds, default=None)
    r.add_argument("--out", required=True)
    r.add_argument("--table", help="also export the banded CSV table here")
    return p


def _emit(out, pairs):
    for k, v in pairs:
        out.write(f"{k}={v}\n")


def _mixing(args) -> MixingSpec:
    return MixingSpec(gsd=args.gsd, n_points=args.mix_points)


def _validate(args):
    """Turn flags into domain objects before any computation starts."""
    spec = ConfidenceSpec(args.level) if hasattr(args, "level") else None
    if args.command == "ci":
        if (args.r1 is None) != (args.r2 is None):
            raise UsageError("--r1 and --r2 must be given together")
    if args.command in ("coverage", "sweep"):
        if args.mode == "unconditional" and not args.gsd > 1.0:
            raise UsageError(f"--gsd must exceed 1, got {args.gsd!r}")
        if args.mode == "unconditional":
            args.mixing = _mixing(args)
    return spec


def _cmd_ci(args, spec, out, err):
    ci = compute_ci(args.estimator, (args.y1, args.y2), spec)
    scale = "count"
    if args.r1 is not None:
        ci = apply_offsets(ci, OffsetPair(args.r1, args.r2))
        scale = "rate"
    _emit(out, [("estimator", args.estimator), ("level", repr(args.level)), ("scale", scale),
                ("point", repr(ci.point_ml)), ("lower", repr(ci.lower)), ("upper", repr(ci.upper)),
                ("lower_hw", repr(ci.point_ml - ci.lower)), ("upper_hw", repr(ci.upper - ci.point_ml))])
    err.write(f"{args.estimator} {args.level:g} interval for y1={args.y1}, y2={args.y2}: "
              f"{ci.point_ml:.6g} [{ci.lower:.6g}, {ci.upper:.6g}]\n")


def _cmd_coverage(args, spec, out, err):
    rates = Rates(args.lambda1, args.lambda2)
    pairs = [("estimator", args.estimator), ("mode", args.mode), ("level", repr(args.level)),
             ("alpha", repr(spec.alpha))]
    if args.mode == "mc":
        mc = mc_conditional_risks(args.estimator, rates, spec, args.sims, args.seed)
        pairs += [("alpha_l", repr(mc.alpha_l)), ("alpha_u", repr(mc.alpha_u)),
                  ("se_l", repr(mc.se_l)), ("se_u", repr(mc.se_u)),
                  ("n_kept", mc.n_kept), ("n_sims", mc.n_sims)]
        a_l, a_u = mc.alpha_l, mc.alpha_u
    else:
        if args.mode == "conditional":
            rp = conditional_risks(args.estimator, rates, spec)
        else:
            rp = unconditional_risks(args.estimator, rates, spec, args.mixing,
                                     cache=_mixture_cache(args.estimator, rates, spec, args.mixing))
        pairs += [("alpha_l", repr(rp.alpha_l)), ("alpha_u", repr(rp.alpha_u))]
        a_l, a_u = rp.alpha_l, rp.alpha_u
    _emit(out, pairs)
    err.write(f"{args.mode} risks of {args.estimator} at ({args.lambda1:g}, {args.lambda2:g}): "
              f"alpha_l = {a_l / spec.alpha:.4g} x alpha, alpha_u = {a_u / spec.alpha:.4g} x alpha\n")


def _cmd_sweep(args, spec, out, err):
    from .sweep import save_surface, sweep_conditional, sweep_unconditional

    if args.mode == "conditional":
        surf = sweep_conditional(args.estimator, args.grid1, args.grid2, spec, workers=args.threads)
    else:
        surf = sweep_unconditional(args.estimator, args.grid1, args.grid2, spec, args.mixing,
                                   workers=args.threads)
    save_surface(surf, args.out)
    n_invalid = int((~surf.valid).sum())
    _emit(out, [("out", args.out), ("cells", surf.valid.size), ("invalid", n_invalid)])
    err.write(f"wrote {surf.shape[0]}x{surf.shape[1]} {args.mode} surface to {args.out}"
              f" ({n_invalid} invalid cells)\n")


def _cmd_halfwidth(args, spec, out, err):
    grid = half_width_ratio_grid(args.a, args.b, args.ymax, spec, args.side)
    lines = [f"# halfwidth-ratio a={args.a} b={args.b} side={args.side} level={args.level!r}",
             "y1,y2,ratio"]
    for i in range(grid.shape[0]):
        for j in range(grid.shape[1]):
            v = grid[i, j]
            lines.append(f"{i + 1},{j + 1},{'nan' if np.isnan(v) else format(float(v), '.12g')}")
    from .sweep import _atomic_write

    _atomic_write(args.out, "\n".join(lines) + "\n")
    finite = grid[np.isfinite(grid)]
    lo = float(finite.min()) if finite.size else float("nan")
    hi = float(finite.max()) if finite.size else float("nan")
    _emit(out, [("out", args.out), ("min_ratio", repr(lo)), ("max_ratio", repr(hi))])
    err.write(f"{args.side} half-width ratio {args.a}/{args.b} over [1, {args.ymax}]^2: "
              f"{lo:.4g} to {hi:.4g}\n")


def _cmd_render(args, spec, out, err):
    from .report import BandSpec, export_table, render_surface, write_image
    from .sweep import load_surface

    bands = args.thresholds or BandSpec()
    surf = load_surface(args.inp)
    data = render_surface(surf, args.side, bands)
    write_image(data, args.out)
    pairs = [("out", args.out), ("width", surf.shape[0]), ("height", surf.shape[1])]
    if args.table:
        export_table(surf, args.table, bands)
        pairs.append(("table", args.table))
    _emit(out, pairs)
    err.write(f"rendered {args.side} risks of {args.inp} to {args.out}\n")


_COMMANDS = {"ci": _cmd_ci, "coverage": _cmd_coverage, "sweep": _cmd_sweep,
             "halfwidth": _cmd_halfwidth, "render": _cmd_render}


def run(argv=None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        spec = _validate(args)
    except UsageError as exc:
        err.write(f"{exc}\n")
        return EXIT_USAGE
    except DomainError as exc:
        err.write(f"poisratio: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        _COMMANDS[args.command](args, spec, out, err)
    except SeparationError as exc:
        err.write(f"poisratio: {exc}\n")
        return EXIT_SEPARATION
    except DomainError as exc:
        err.write(f"poisratio: {exc}\n")
        return EXIT_USAGE
    except (NumericError, DegenerateSampleError) as exc:
        err.write(f"poisratio: numeric failure: {exc}\n")
        return EXIT_NUMERIC
    except (OSError, SurfaceFormatError) as exc:
        err.write(f"poisratio: {exc}\n")
        return EXIT_IO
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
