"""Exact one-sided coverage risks of the ratio intervals.

For fixed Poisson means the risks are sums of joint pmf mass over the
observation pairs whose interval misses the true ratio on one side. The
enumeration is truncated at the ``1e-9`` and ``1 - 1e-9`` Poisson
quantiles, cells with a zero count are dropped (no interval is reported
there) and the retained mass is renormalized to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .errors import DegenerateSampleError, DomainError, NumericError, SeparationError
from .estimators import ConfidenceSpec, EstimatorKind, _spec, compute_ci, interval_table
from .numerics import lognormal_discretize, pois_pmf_range, pois_quantile

__all__ = [
    "TAIL",
    "Rates",
    "RiskPair",
    "MixingSpec",
    "HalfWidths",
    "MCRisks",
    "CICache",
    "conditional_marginal",
    "conditional_risks",
    "unconditional_risks",
    "mc_conditional_risks",
    "half_width_pair",
    "half_width_ratio_grid",
]

TAIL = 1e-9


@dataclass(frozen=True)
class Rates:
    """Expected event counts of the two groups."""

    lambda1: float
    lambda2: float

    def __post_init__(self):
        if not (self.lambda1 > 0 and self.lambda2 > 0):
            raise DomainError(f"rates must be positive, got ({self.lambda1}, {self.lambda2})")

    @property
    def ratio(self) -> float:
        return self.lambda2 / self.lambda1


@dataclass(frozen=True)
class RiskPair:
    """``alpha_l``: interval entirely above the true ratio; ``alpha_u``: entirely below."""

    alpha_l: float
    alpha_u: float


@dataclass(frozen=True)
class MixingSpec:
    """Log-normal variation of the expected counts.

    ``gsd`` is the geometric standard deviation, ``n_points`` the number of
    support points per axis and ``grid_precision`` the spacing the support is
    snapped to.
    """

    gsd: float = 1.10
    n_points: int = 20
    grid_precision: float = 0.05

    def __post_init__(self):
        if not self.gsd > 1.0:
            raise DomainError(f"gsd must exceed 1, got {self.gsd!r}")
        if self.n_points < 1:
            raise DomainError(f"n_points must be positive, got {self.n_points!r}")
        if not self.grid_precision > 0:
            raise DomainError(f"grid_precision must be positive, got {self.grid_precision!r}")

    @classmethod
    def sensitivity(cls, gsd: float) -> "MixingSpec":
        """Settings used for the sensitivity runs (finer grid for the widest law)."""
        return cls(gsd=gsd, n_points=40 if gsd >= 1.2 else 20)


@dataclass(frozen=True)
class HalfWidths:
    lower_hw: float
    upper_hw: float


@dataclass(frozen=True)
class MCRisks:
    alpha_l: float
    alpha_u: float
    se_l: float
    se_u: float
    n_kept: int
    n_sims: int


def _as_rates(rates) -> Rates:
    return rates if isinstance(rates, Rates) else Rates(*rates)


class CICache:
    """Interval bounds for ``1 <= y1 <= y1_max``, ``1 <= y2 <= y2_max``.

    Arrays are indexed ``[y1 - 1, y2 - 1]`` and are read-only after
    construction.
    """

    def __init__(self, kind, spec, lower: np.ndarray, upper: np.ndarray):
        self.kind = EstimatorKind(kind)
        self.spec = _spec(spec)
        lower.setflags(write=False)
        upper.setflags(write=False)
        self.lower = lower
        self.upper = upper

    @classmethod
    def build(cls, kind, spec, y1_max: int, y2_max: int) -> "CICache":
        y1_max, y2_max = max(int(y1_max), 0), max(int(y2_max), 0)
        if y1_max == 0 or y2_max == 0:
            empty = np.zeros((y1_max, y2_max))
            return cls(kind, spec, empty, empty.copy())
        lower, upper = interval_table(kind, spec, np.arange(1, y1_max + 1), np.arange(1, y2_max + 1))
        return cls(kind, spec, lower, upper)

    @property
    def shape(self) -> tuple[int, int]:
        return self.lower.shape

    def covers(self, y1_max: int, y2_max: int) -> bool:
        return y1_max <= self.lower.shape[0] and y2_max <= self.lower.shape[1]

    def matches(self, kind, spec) -> bool:
        return EstimatorKind(kind) is self.kind and _spec(spec) == self.spec

    def block(self, y1_lo, y1_hi, y2_lo, y2_hi) -> tuple[np.ndarray, np.ndarray]:
        """Bound sub-tables for ``y1_lo..y1_hi`` x ``y2_lo..y2_hi`` (inclusive, >= 1)."""
        rows = slice(y1_lo - 1, y1_hi)
        cols = slice(y2_lo - 1, y2_hi)
        return self.lower[rows, cols], self.upper[rows, cols]

    def interval(self, y1: int, y2: int):
        from .estimators import RatioInterval

        return RatioInterval(float(self.lower[y1 - 1, y2 - 1]), float(self.upper[y1 - 1, y2 - 1]),
                             y2 / y1)


@lru_cache(maxsize=8192)
def _truncated_pmf(lam: float, tail: float) -> tuple[int, np.ndarray]:
    lo = pois_quantile(lam, tail)
    hi = pois_quantile(lam, 1.0 - tail)
    pmf = pois_pmf_range(lam, lo, hi)
    pmf.setflags(write=False)
    return lo, pmf


def conditional_marginal(lam: float, *, tail: float = TAIL,
                         condition_on_positive: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Counts ``k >= 1`` inside the truncation window and their normalized weights.

    With ``condition_on_positive`` the weights sum to one over ``k >= 1``;
    otherwise they are normalized over the whole truncated window, zero
    included, so the dropped zero cell keeps its share of the mass.
    """
    lo, pmf = _truncated_pmf(float(lam), float(tail))
    total_all = float(pmf.sum())
    start = 1 - lo if lo < 1 else 0
    ks = np.arange(lo + start, lo + len(pmf))
    kept = pmf[start:]
    if len(kept) == 0:
        raise DegenerateSampleError(f"no positive count inside the truncation window for lambda={lam}")
    norm = float(kept.sum()) if condition_on_positive else total_all
    return ks, kept / norm


def _bounds_block(kind, spec, k1: np.ndarray, k2: np.ndarray, cache: CICache | None):
    if cache is not None and cache.matches(kind, spec) and cache.covers(int(k1[-1]), int(k2[-1])):
        return cache.block(int(k1[0]), int(k1[-1]), int(k2[0]), int(k2[-1]))
    try:
        return interval_table(kind, spec, k1, k2)
    except SeparationError as exc:  # pragma: no cover - zero cells are excluded upstream
        raise NumericError(f"unexpected separation inside the risk loop: {exc}") from exc


def conditional_risks(kind, rates, spec, *, cache: CICache | None = None,
                      condition_on_positive: bool = True, tail: float = TAIL) -> RiskPair:
    """Exact one-sided risks at fixed expected counts.

    A cell ``(y1, y2)`` contributes to ``alpha_l`` when its lower bound is
    strictly greater than ``lambda2 / lambda1`` and to ``alpha_u`` when its
    upper bound is strictly smaller; equality counts as covered.
    """
    r = _as_rates(rates)
    s = _spec(spec)
    k1, w1 = conditional_marginal(r.lambda1, tail=tail, condition_on_positive=condition_on_positive)
    k2, w2 = conditional_marginal(r.lambda2, tail=tail, condition_on_positive=condition_on_positive)
    lower, upper = _bounds_block(kind, s, k1, k2, cache)
    a_l, a_u = kernels.risk_sums(w1, w2, lower, upper, r.lambda2 / r.lambda1)
    return RiskPair(float(a_l), float(a_u))


def unconditional_risks(kind, rates, spec, mixing: MixingSpec | None = None, *,
                        cache: CICache | None = None, risk_cache: dict | None = None,
                        condition_on_positive: bool = True, tail: float = TAIL) -> RiskPair:
    """Conditional risks averaged over independent log-normal expected counts.

    Each support pair ``(l1, l2)`` of the discretized laws contributes its
    conditional risks against the ratio ``l2 / l1``, weighted by the product
    of the two support weights. ``risk_cache`` maps integer grid-index
    pairs to :class:`RiskPair` and may be shared across calls with the same
    kind, level and grid precision. Without ``cache`` every support pair
    recomputes its intervals; ``sweep.build_ci_cache`` builds one table instead.
    """
    r = _as_rates(rates)
    s = _spec(spec)
    mixing = mixing or MixingSpec()
    m1 = lognormal_discretize(r.lambda1, mixing.gsd, mixing.n_points, mixing.grid_precision)
    m2 = lognormal_discretize(r.lambda2, mixing.gsd, mixing.n_points, mixing.grid_precision)
    if risk_cache is None:
        risk_cache = {}
    acc_l = 0.0
    acc_u = 0.0
    for i1, l1, w1 in zip(m1.grid_index.tolist(), m1.support.tolist(), m1.weights.tolist()):
        row_l = 0.0
        row_u = 0.0
        for i2, l2, w2 in zip(m2.grid_index.tolist(), m2.support.tolist(), m2.weights.tolist()):
            key = (i1, i2)
            rp = risk_cache.get(key)
            if rp is None:
                rp = conditional_risks(kind, Rates(l1, l2), s, cache=cache,
                                       condition_on_positive=condition_on_positive, tail=tail)
                risk_cache[key] = rp
            row_l += w2 * rp.alpha_l
            row_u += w2 * rp.alpha_u
        acc_l += w1 * row_l
        acc_u += w1 * row_u
    return RiskPair(float(acc_l), float(acc_u))


def mc_conditional_risks(kind, rates, spec, n_sims: int, seed: int) -> MCRisks:
    """Monte Carlo estimate of :func:`conditional_risks` with binomial standard errors.

    Draws with a zero count are discarded, matching the exact computation.
    """
    if n_sims < 1:
        raise DomainError(f"n_sims must be positive, got {n_sims!r}")
    r = _as_rates(rates)
    s = _spec(spec)
    rng = np.random.default_rng(seed)
    y1 = rng.poisson(r.lambda1, n_sims)
    y2 = rng.poisson(r.lambda2, n_sims)
    keep = (y1 > 0) & (y2 > 0)
    y1, y2 = y1[keep], y2[keep]
    n = int(len(y1))
    if n == 0:
        raise DegenerateSampleError("every simulated pair had a zero count")
    lo1, hi1 = int(y1.min()), int(y1.max())
    lo2, hi2 = int(y2.min()), int(y2.max())
    lower, upper = interval_table(kind, s, np.arange(lo1, hi1 + 1), np.arange(lo2, hi2 + 1))
    ratio = r.lambda2 / r.lambda1
    miss_l = int(np.count_nonzero(lower[y1 - lo1, y2 - lo2] > ratio))
    miss_u = int(np.count_nonzero(upper[y1 - lo1, y2 - lo2] < ratio))
    p_l = miss_l / n
    p_u = miss_u / n
    return MCRisks(p_l, p_u, math.sqrt(p_l * (1 - p_l) / n), math.sqrt(p_u * (1 - p_u) / n), n, n_sims)


def half_width_pair(kind, counts, spec) -> HalfWidths:
    """Distances from the ML estimate ``y2/y1`` to each bound (for every kind)."""
    ci = compute_ci(kind, counts, spec)
    return HalfWidths(ci.point_ml - ci.lower, ci.upper - ci.point_ml)


def half_width_ratio_grid(kind_a, kind_b, y_max: int, spec, side: str) -> np.ndarray:
    """Half-width of ``kind_a`` divided by that of ``kind_b`` over ``[1, y_max]^2``.

    Entry ``[y1 - 1, y2 - 1]``. Cells whose denominator half-width is zero are
    flagged with NaN.
    """
    if y_max < 1:
        raise DomainError(f"y_max must be positive, got {y_max!r}")
    if side not in ("lower", "upper"):
        raise DomainError(f"side must be 'lower' or 'upper', got {side!r}")
    s = _spec(spec)
    ys = np.arange(1, y_max + 1)
    point = ys[None, :] / ys[:, None].astype(float)

    def widths(kind):
        lower, upper = interval_table(kind, s, ys, ys)
        return point - lower if side == "lower" else upper - point

    num = widths(kind_a)
    den = num if EstimatorKind(kind_a) is EstimatorKind(kind_b) else widths(kind_b)
    out = np.full(num.shape, np.nan)
    ok = den != 0
    out[ok] = num[ok] / den[ok]
    return out
