"""Risk surfaces over the ``(lambda1, lambda2)`` plane.

A sweep builds one read-only interval table (:class:`~poisratio.coverage.CICache`)
covering every count the truncated enumeration can reach, then evaluates
grid nodes row by row, optionally across worker processes. Every node is
computed by the same deterministic code, so the surface does not depend on
the number of workers.
"""

from __future__ import annotations

import math
import multiprocessing as mp
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .coverage import (
    TAIL,
    CICache,
    MixingSpec,
    RiskPair,
    conditional_risks,
    unconditional_risks,
)
from .errors import (
    DegenerateSampleError,
    DomainError,
    NumericError,
    SurfaceFormatError,
    SurfaceVersionError,
)
from .estimators import ConfidenceSpec, EstimatorKind, _spec
from .numerics import lognormal_discretize, pois_quantile

__all__ = [
    "SURFACE_VERSION",
    "GridSpec",
    "LOW_RANGE",
    "HIGH_RANGE",
    "WIDE_LOG",
    "GRID_PRESETS",
    "Surface",
    "build_ci_cache",
    "sweep_conditional",
    "sweep_unconditional",
    "save_surface",
    "load_surface",
    "surface_to_text",
]

SURFACE_VERSION = 1
CSV_HEADER = "lambda1,lambda2,alpha_l,alpha_u,valid"


def _tidy(values: np.ndarray) -> np.ndarray:
    # drop accumulated step error so 0.05 * 3 prints as 0.15
    return np.array([float(f"{v:.12g}") for v in values.tolist()])


@dataclass(frozen=True)
class GridSpec:
    """Axis of expected counts.

    Linear grids run ``lambda_min, lambda_min + step, ...`` up to
    ``lambda_max``. Logarithmic grids use ``step`` as the increment of
    ``log10(lambda)``.
    """

    lambda_min: float
    lambda_max: float
    step: float
    scale: str = "linear"

    def __post_init__(self):
        for name in ("lambda_min", "lambda_max", "step"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.lambda_min > 0:
            raise DomainError(f"lambda_min must be positive, got {self.lambda_min!r}")
        if not self.lambda_min < self.lambda_max:
            raise DomainError(f"need lambda_min < lambda_max, got {self.lambda_min} >= {self.lambda_max}")
        if not self.step > 0:
            raise DomainError(f"step must be positive, got {self.step!r}")
        if self.scale not in ("linear", "logarithmic"):
            raise DomainError(f"scale must be 'linear' or 'logarithmic', got {self.scale!r}")

    def points(self) -> np.ndarray:
        if self.scale == "linear":
            n = int(math.floor((self.lambda_max - self.lambda_min) / self.step + 1e-9)) + 1
            return _tidy(self.lambda_min + self.step * np.arange(n))
        span = math.log10(self.lambda_max / self.lambda_min)
        n = int(math.floor(span / self.step + 1e-9)) + 1
        return _tidy(self.lambda_min * 10.0 ** (self.step * np.arange(n)))

    def __len__(self):
        return len(self.points())

    def header(self) -> str:
        return (f"min={self.lambda_min!r} max={self.lambda_max!r} "
                f"step={self.step!r} scale={self.scale}")


LOW_RANGE = GridSpec(0.05, 40.0, 0.05)
HIGH_RANGE = GridSpec(100.0, 104.0, 0.05)
# same figure axis read as 0.5 .. 1e4 on a log scale
WIDE_LOG = GridSpec(0.5, 1e4, 0.01, "logarithmic")
GRID_PRESETS = {"low": LOW_RANGE, "high": HIGH_RANGE, "wide-log": WIDE_LOG}


@dataclass
class Surface:
    """Risks at every node of ``grid1 x grid2``; arrays are indexed ``[i1, i2]``."""

    grid1: GridSpec
    grid2: GridSpec
    kind: EstimatorKind
    spec: ConfidenceSpec
    mixing: MixingSpec | None
    alpha_l: np.ndarray
    alpha_u: np.ndarray
    valid: np.ndarray
    errors: list = field(default_factory=list)
    tool_version: str = __version__
    stats: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.kind = EstimatorKind(self.kind)
        self.spec = _spec(self.spec)
        shape = (len(self.grid1), len(self.grid2))
        for name in ("alpha_l", "alpha_u", "valid"):
            if getattr(self, name).shape != shape:
                raise DomainError(f"{name} has shape {getattr(self, name).shape}, grids give {shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.alpha_l.shape

    def risk(self, i1: int, i2: int) -> RiskPair:
        return RiskPair(float(self.alpha_l[i1, i2]), float(self.alpha_u[i1, i2]))

    def __eq__(self, other):
        if not isinstance(other, Surface):
            return NotImplemented
        return (self.grid1 == other.grid1 and self.grid2 == other.grid2
                and self.kind is other.kind and self.spec == other.spec
                and self.mixing == other.mixing
                and np.array_equal(self.alpha_l, other.alpha_l)
                and np.array_equal(self.alpha_u, other.alpha_u)
                and np.array_equal(self.valid, other.valid)
                and self.errors == other.errors and self.tool_version == other.tool_version)


# -- cache construction ----------------------------------------------------------------

_WORKER: dict = {}


def _pool(workers: int, initializer, initargs):
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    return ProcessPoolExecutor(max_workers=workers, mp_context=ctx,
                               initializer=initializer, initargs=initargs)


def _chunks(n: int, workers: int) -> list[tuple[int, int]]:
    size = max(1, math.ceil(n / max(1, workers * 4)))
    return [(a, min(n, a + size)) for a in range(0, n, size)]


def _init_table_worker(kind, spec, y2_max):
    _WORKER.update(kind=kind, spec=spec, y2_max=y2_max)


def _table_rows(bounds):
    from .estimators import interval_table

    a, b = bounds
    return interval_table(_WORKER["kind"], _WORKER["spec"], np.arange(a + 1, b + 1),
                          np.arange(1, _WORKER["y2_max"] + 1))


def build_ci_cache(kind, spec, y1_max: int, y2_max: int, *, workers: int = 1) -> CICache:
    """Interval table for all ``1 <= y1 <= y1_max`` and ``1 <= y2 <= y2_max``.

    A numeric failure aborts construction; the message names the counts.
    """
    kind = EstimatorKind(kind)
    spec = _spec(spec)
    y1_max, y2_max = max(int(y1_max), 0), max(int(y2_max), 0)
    if workers <= 1 or y1_max < 2 or y2_max == 0:
        return CICache.build(kind, spec, y1_max, y2_max)
    parts = _chunks(y1_max, workers)
    with _pool(workers, _init_table_worker, (kind, spec, y2_max)) as ex:
        blocks = list(ex.map(_table_rows, parts))
    lower = np.vstack([blk[0] for blk in blocks])
    upper = np.vstack([blk[1] for blk in blocks])
    return CICache(kind, spec, lower, upper)


def _count_extent(lam_max: float) -> int:
    return pois_quantile(lam_max, 1.0 - TAIL)


# -- node evaluation -----------------------------------------------------------------


def _init_sweep_worker(kind, spec, mixing, cache, points2, condition_on_positive):
    _WORKER.update(kind=kind, spec=spec, mixing=mixing, cache=cache, points2=points2,
                   cond=condition_on_positive, risk_cache={})


def _sweep_rows(task):
    rows_lambda, = task
    kind, spec, mixing = _WORKER["kind"], _WORKER["spec"], _WORKER["mixing"]
    cache, points2, cond = _WORKER["cache"], _WORKER["points2"], _WORKER["cond"]
    n2 = len(points2)
    out_l = np.zeros((len(rows_lambda), n2))
    out_u = np.zeros((len(rows_lambda), n2))
    valid = np.ones((len(rows_lambda), n2), dtype=bool)
    errors = []
    # shared by every task this worker runs
    risk_cache = _WORKER["risk_cache"]
    seen = len(risk_cache)
    for i, l1 in enumerate(rows_lambda):
        for j, l2 in enumerate(points2):
            try:
                if mixing is None:
                    rp = conditional_risks(kind, (l1, l2), spec, cache=cache,
                                           condition_on_positive=cond)
                else:
                    rp = unconditional_risks(kind, (l1, l2), spec, mixing, cache=cache,
                                             risk_cache=risk_cache, condition_on_positive=cond)
            except (NumericError, DegenerateSampleError) as exc:
                valid[i, j] = False
                errors.append(f"lambda1={l1!r} lambda2={l2!r}: {exc}")
                continue
            out_l[i, j] = rp.alpha_l
            out_u[i, j] = rp.alpha_u
    return out_l, out_u, valid, errors, len(risk_cache) - seen


def _run(kind, grid1, grid2, spec, mixing, *, workers, cache, use_cache, condition_on_positive):
    kind = EstimatorKind(kind)
    spec = _spec(spec)
    p1 = grid1.points()
    p2 = grid2.points()
    if use_cache and cache is None:
        if mixing is None:
            top1, top2 = float(p1[-1]), float(p2[-1])
        else:
            top1 = float(lognormal_discretize(float(p1[-1]), mixing.gsd, mixing.n_points,
                                              mixing.grid_precision).support[-1])
            top2 = float(lognormal_discretize(float(p2[-1]), mixing.gsd, mixing.n_points,
                                              mixing.grid_precision).support[-1])
        cache = build_ci_cache(kind, spec, _count_extent(top1), _count_extent(top2), workers=workers)
    if not use_cache:
        cache = None
    initargs = (kind, spec, mixing, cache, [float(x) for x in p2], condition_on_positive)
    parts = [(a, b) for a, b in _chunks(len(p1), workers)]
    tasks = [([float(x) for x in p1[a:b]],) for a, b in parts]
    if workers <= 1:
        _init_sweep_worker(*initargs)
        results = [_sweep_rows(t) for t in tasks]
    else:
        with _pool(workers, _init_sweep_worker, initargs) as ex:
            results = list(ex.map(_sweep_rows, tasks))
    alpha_l = np.vstack([r[0] for r in results])
    alpha_u = np.vstack([r[1] for r in results])
    valid = np.vstack([r[2] for r in results])
    errors = [e for r in results for e in r[3]]
    stats = {"conditional_evaluations": sum(r[4] for r in results)}
    return Surface(grid1, grid2, kind, spec, mixing, alpha_l, alpha_u, valid, errors, stats=stats)


def sweep_conditional(kind, grid1: GridSpec, grid2: GridSpec, spec, *, workers: int = 1,
                      cache: CICache | None = None, use_cache: bool = True,
                      condition_on_positive: bool = True) -> Surface:
    """Conditional risks at every node of ``grid1 x grid2``.

    Nodes that fail (numeric error, or no positive count in the truncation
    window) are marked invalid and listed in ``Surface.errors``.
    """
    return _run(kind, grid1, grid2, spec, None, workers=workers, cache=cache,
                use_cache=use_cache, condition_on_positive=condition_on_positive)


def sweep_unconditional(kind, grid1: GridSpec, grid2: GridSpec, spec, mixing: MixingSpec, *,
                        workers: int = 1, cache: CICache | None = None, use_cache: bool = True,
                        condition_on_positive: bool = True) -> Surface:
    """Unconditional risks at every node; conditional risks are memoized per
    snapped support pair within each worker."""
    return _run(kind, grid1, grid2, spec, mixing, workers=workers, cache=cache,
                use_cache=use_cache, condition_on_positive=condition_on_positive)


# -- persistence ---------------------------------------------------------------------


def _fmt_risk(x: float) -> str:
    return format(float(x), ".12g")


def surface_header(surface: Surface) -> list[str]:
    lines = [
        f"# surface-version {SURFACE_VERSION}",
        f"# estimator {surface.kind.value}",
        f"# level {surface.spec.two_sided_level!r}",
        f"# alpha {surface.spec.alpha!r}",
    ]
    if surface.mixing is not None:
        m = surface.mixing
        lines.append(f"# mixing gsd={m.gsd!r} n={m.n_points} precision={m.grid_precision!r}")
    lines.append(f"# grid1 {surface.grid1.header()}")
    lines.append(f"# grid2 {surface.grid2.header()}")
    lines.append(f"# tool poisratio {surface.tool_version}")
    for err in surface.errors:
        lines.append("# error " + " ".join(str(err).split()))
    return lines


def surface_rows(surface: Surface):
    """Yield ``(lambda1, lambda2, alpha_l, alpha_u, valid)`` row-major, lambda2 fastest."""
    p1 = surface.grid1.points()
    p2 = surface.grid2.points()
    for i, l1 in enumerate(p1):
        for j, l2 in enumerate(p2):
            yield float(l1), float(l2), float(surface.alpha_l[i, j]), float(surface.alpha_u[i, j]), \
                bool(surface.valid[i, j])


def surface_to_text(surface: Surface) -> str:
    out = surface_header(surface)
    out.append(CSV_HEADER)
    for l1, l2, a_l, a_u, ok in surface_rows(surface):
        out.append(f"{l1!r},{l2!r},{_fmt_risk(a_l)},{_fmt_risk(a_u)},{int(ok)}")
    return "\n".join(out) + "\n"


def _atomic_write(path, text: str):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_surface(surface: Surface, path) -> None:
    """Write the text surface format (UTF-8, ``#`` headers, then CSV)."""
    _atomic_write(path, surface_to_text(surface))


def _parse_kv(text: str, lineno: int) -> dict:
    out = {}
    for tok in text.split():
        if "=" not in tok:
            raise SurfaceFormatError(f"expected key=value, got {tok!r}", lineno)
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def _parse_grid(text: str, lineno: int) -> GridSpec:
    kv = _parse_kv(text, lineno)
    try:
        return GridSpec(float(kv["min"]), float(kv["max"]), float(kv["step"]), kv.get("scale", "linear"))
    except (KeyError, ValueError, DomainError) as exc:
        raise SurfaceFormatError(f"bad grid description {text!r}: {exc}", lineno) from exc


def parse_surface(lines, extra_columns: int = 0):
    """Parse surface text lines; returns ``(surface, extra)`` where ``extra``
    holds the trailing columns (as strings) beyond the five standard ones."""
    headers: dict = {}
    errors = []
    it = iter(enumerate(lines, start=1))
    csv_lineno = None
    for lineno, raw in it:
        line = raw.rstrip("\n")
        if not line.startswith("#"):
            csv_lineno = lineno
            header_line = line
            break
        body = line[1:].strip()
        key, _, rest = body.partition(" ")
        if key == "surface-version":
            if lineno != 1:
                raise SurfaceFormatError("surface-version must be the first line", lineno)
            try:
                version = int(rest)
            except ValueError as exc:
                raise SurfaceFormatError(f"bad version {rest!r}", lineno) from exc
            if version != SURFACE_VERSION:
                raise SurfaceVersionError(
                    f"unsupported surface-version {version} (this reader handles {SURFACE_VERSION})",
                    lineno)
        elif key == "error":
            errors.append(rest)
            continue
        headers[key] = (rest, lineno)
    if csv_lineno is None:
        raise SurfaceFormatError("missing CSV section", None)
    for required in ("surface-version", "estimator", "level", "grid1", "grid2"):
        if required not in headers:
            raise SurfaceFormatError(f"missing '# {required}' header", csv_lineno)
    try:
        kind = EstimatorKind(headers["estimator"][0].strip())
    except ValueError as exc:
        raise SurfaceFormatError(f"unknown estimator {headers['estimator'][0]!r}",
                                 headers["estimator"][1]) from exc
    try:
        spec = ConfidenceSpec(float(headers["level"][0]))
    except (ValueError, DomainError) as exc:
        raise SurfaceFormatError(f"bad level {headers['level'][0]!r}", headers["level"][1]) from exc
    mixing = None
    if "mixing" in headers:
        text, ln = headers["mixing"]
        kv = _parse_kv(text, ln)
        try:
            mixing = MixingSpec(float(kv["gsd"]), int(kv["n"]), float(kv["precision"]))
        except (KeyError, ValueError, DomainError) as exc:
            raise SurfaceFormatError(f"bad mixing description {text!r}", ln) from exc
    grid1 = _parse_grid(*headers["grid1"])
    grid2 = _parse_grid(*headers["grid2"])
    tool_version = __version__
    if "tool" in headers:
        parts = headers["tool"][0].split()
        tool_version = parts[-1] if parts else __version__

    cols = header_line.split(",")
    if cols[:5] != CSV_HEADER.split(",") or len(cols) != 5 + extra_columns:
        raise SurfaceFormatError(f"unexpected CSV header {header_line!r}", csv_lineno)
    p1 = grid1.points()
    p2 = grid2.points()
    n1, n2 = len(p1), len(p2)
    alpha_l = np.zeros((n1, n2))
    alpha_u = np.zeros((n1, n2))
    valid = np.zeros((n1, n2), dtype=bool)
    extra = [[None] * n2 for _ in range(n1)] if extra_columns else None
    count = 0
    for lineno, raw in it:
        line = raw.rstrip("\n")
        if line == "":
            raise SurfaceFormatError("blank line inside the CSV section", lineno)
        fields = line.split(",")
        if len(fields) != 5 + extra_columns:
            raise SurfaceFormatError(f"expected {5 + extra_columns} fields, got {len(fields)}", lineno)
        if count >= n1 * n2:
            raise SurfaceFormatError("more rows than grid nodes", lineno)
        i, j = divmod(count, n2)
        try:
            l1, l2 = float(fields[0]), float(fields[1])
            a_l, a_u = float(fields[2]), float(fields[3])
            ok = {"1": True, "0": False}[fields[4]]
        except (ValueError, KeyError) as exc:
            raise SurfaceFormatError(f"malformed row {line!r}", lineno) from exc
        if not (math.isclose(l1, p1[i], rel_tol=1e-9) and math.isclose(l2, p2[j], rel_tol=1e-9)):
            raise SurfaceFormatError(
                f"row lambdas ({l1}, {l2}) do not match grid node ({p1[i]}, {p2[j]})", lineno)
        if not (math.isfinite(a_l) and math.isfinite(a_u)):
            raise SurfaceFormatError("non-finite risk", lineno)
        alpha_l[i, j], alpha_u[i, j], valid[i, j] = a_l, a_u, ok
        if extra is not None:
            extra[i][j] = fields[5:]
        count += 1
    if count != n1 * n2:
        raise SurfaceFormatError(f"truncated file: {count} rows for {n1 * n2} grid nodes",
                                 csv_lineno + count + 1)
    surface = Surface(grid1, grid2, kind, spec, mixing, alpha_l, alpha_u, valid, errors, tool_version)
    return surface, extra


def load_surface(path) -> Surface:
    """Read a surface file; raises :class:`SurfaceFormatError` (with line number)
    or :class:`SurfaceVersionError`. Nothing is returned for a partial file."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    surface, _ = parse_surface(lines)
    return surface
