"""Confidence intervals for the ratio ``lambda2 / lambda1`` of two Poisson means.

All nine estimators are computed from the observed pair ``(y1, y2)``. The
Wald, score, likelihood-ratio and exact intervals use the conditional
binomial reduction: given ``n = y1 + y2``, ``y2 ~ Bin(n, p)`` with
``p / (1 - p)`` equal to the ratio. The Firth and Kenne intervals are
obtained by fitting the two-parameter log-linear model

    log E[Y1] = beta0,    log E[Y2] = beta0 + beta1

with penalized or adjusted score equations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, NamedTuple

import numpy as np
from scipy import special

from . import kernels
from .errors import DomainError, NumericError, SeparationError
from .numerics import chisq1_quantile, cp_tail_solve, midp_tail_solve, normal_quantile

__all__ = [
    "EstimatorKind",
    "Counts",
    "ConfidenceSpec",
    "RatioInterval",
    "FitResult",
    "OffsetPair",
    "point_ml",
    "ci_wald",
    "ci_score",
    "ci_ml_lr",
    "fit_firth",
    "fit_firth_constrained",
    "ci_wald_firth",
    "ci_lr1_firth",
    "ci_lr2_firth",
    "fit_kenne",
    "ci_wald_kenne",
    "ci_hirji",
    "ci_hirji_midp",
    "compute_ci",
    "interval_table",
    "apply_offsets",
    "poisson_loglik",
    "firth_penalized_loglik",
    "firth_score",
    "kenne_adjusted_score",
]


class EstimatorKind(str, Enum):
    SCORE = "score"
    WALD = "wald"
    ML_LR = "ml_lr"
    WALD_FIRTH = "wald_firth"
    LR1_FIRTH = "lr1_firth"
    LR2_FIRTH = "lr2_firth"
    WALD_KENNE = "wald_kenne"
    HIRJI = "hirji"
    HIRJI_MIDP = "hirji_midp"

    def __str__(self):
        return self.value


class Counts(NamedTuple):
    """Observed events: ``y1`` in the reference (denominator) group, ``y2`` in the other."""

    y1: float
    y2: float


@dataclass(frozen=True)
class ConfidenceSpec:
    """Two-sided confidence level; each tail gets ``alpha = (1 - level) / 2``."""

    two_sided_level: float

    def __post_init__(self):
        if not 0.0 < self.two_sided_level < 1.0:
            raise DomainError(f"confidence level must lie in (0, 1), got {self.two_sided_level!r}")

    @property
    def alpha(self) -> float:
        return (1.0 - self.two_sided_level) / 2.0

    @property
    def z(self) -> float:
        """Normal quantile ``1 - alpha``."""
        return -normal_quantile(self.alpha)

    @property
    def crit(self) -> float:
        """Chi-square(1) quantile at the two-sided level."""
        return chisq1_quantile(self.two_sided_level)


@dataclass(frozen=True)
class RatioInterval:
    lower: float
    upper: float
    point_ml: float

    def __post_init__(self):
        if not (0.0 <= self.lower <= self.upper):
            raise NumericError(f"invalid interval bounds ({self.lower}, {self.upper})")


@dataclass(frozen=True)
class FitResult:
    beta0: float
    beta1: float
    converged: bool
    iterations: int

    @property
    def ratio(self) -> float:
        return math.exp(self.beta1)


@dataclass(frozen=True)
class OffsetPair:
    """Exposures (e.g. person-years) of the two groups."""

    r1: float
    r2: float

    def __post_init__(self):
        if not (self.r1 > 0 and self.r2 > 0):
            raise DomainError(f"offsets must be positive, got r1={self.r1!r}, r2={self.r2!r}")


def _spec(spec) -> ConfidenceSpec:
    if isinstance(spec, ConfidenceSpec):
        return spec
    return ConfidenceSpec(float(spec))


def _counts(counts) -> tuple[float, float]:
    y1, y2 = counts
    if y1 < 0 or y2 < 0:
        raise DomainError(f"counts must be nonnegative, got ({y1}, {y2})")
    if y1 == 0 or y2 == 0:
        raise SeparationError(
            f"no interval is computed when a count is zero (y1={y1}, y2={y2})"
        )
    return float(y1), float(y2)


def _interval(lower: float, upper: float, y1: float, y2: float) -> RatioInterval:
    if not (math.isfinite(lower) and math.isfinite(upper)):
        raise NumericError(f"non-finite bound for counts ({y1}, {y2}): ({lower}, {upper})")
    return RatioInterval(lower, upper, y2 / y1)


def point_ml(counts) -> float:
    y1, y2 = _counts(counts)
    return y2 / y1


# -- conditional binomial reduction ---------------------------------------------


def ci_wald(counts, spec) -> RatioInterval:
    """Wald interval on the log scale: ``exp(log(y2/y1) -+ z*sqrt(1/y1 + 1/y2))``."""
    y1, y2 = _counts(counts)
    s = _spec(spec)
    centre = math.log(y2 / y1)
    half = s.z * math.sqrt(1.0 / y1 + 1.0 / y2)
    return _interval(math.exp(centre - half), math.exp(centre + half), y1, y2)


def _wilson_lower_odds(y1: float, y2: float, z: float) -> float:
    # Lower Wilson bound mapped to odds, with the cancelling numerator rationalized.
    n = y1 + y2
    z2 = z * z
    root = z * math.sqrt(y1 * y2 / n + z2 / 4.0)
    num = y2 * y2 * (1.0 + z2 / n)
    return num / ((y2 + z2 / 2.0 + root) * (y1 + z2 / 2.0 + root))


def ci_score(counts, spec) -> RatioInterval:
    """Inverted score test: the Wilson interval for ``y2 / (y1 + y2)`` mapped to odds."""
    y1, y2 = _counts(counts)
    z = _spec(spec).z
    lower = _wilson_lower_odds(y1, y2, z)
    upper = 1.0 / _wilson_lower_odds(y2, y1, z)
    return _interval(lower, upper, y1, y2)


def ci_ml_lr(counts, spec) -> RatioInterval:
    """Profile likelihood-ratio interval.

    Bounds are the roots of ``2*[l(xhat) - l(x)] = chi2_1(level)`` with
    ``l(x) = y2*log(x) - (y1 + y2)*log(1 + x)``, found by Newton iteration on
    ``log(x)`` (see :mod:`poisratio.kernels`).
    """
    y1, y2 = _counts(counts)
    lower, upper, status = kernels.lr_bounds(np.array([y1]), np.array([y2]), _spec(spec).crit)
    if status[0] != 0:
        raise NumericError(f"likelihood-ratio inversion did not converge for ({y1}, {y2})")
    return _interval(float(lower[0]), float(upper[0]), y1, y2)


def _exact_lower_odds(y1: float, y2: float, alpha: float, mid: bool) -> float:
    n = int(round(y1 + y2))
    k = int(round(y2))
    if abs(n - (y1 + y2)) > 0 or abs(k - y2) > 0:
        raise DomainError("exact intervals need integer counts")
    solve = midp_tail_solve if mid else cp_tail_solve
    p = solve(n, k, alpha, "lower")
    return p / (1.0 - p)


def ci_hirji(counts, spec) -> RatioInterval:
    """Exact conditional interval (Clopper-Pearson on ``y2 | y1 + y2``) mapped to odds."""
    y1, y2 = _counts(counts)
    a = _spec(spec).alpha
    lower = _exact_lower_odds(y1, y2, a, mid=False)
    upper = 1.0 / _exact_lower_odds(y2, y1, a, mid=False)
    return _interval(lower, upper, y1, y2)


def ci_hirji_midp(counts, spec) -> RatioInterval:
    """Exact conditional interval with the mid-P correction."""
    y1, y2 = _counts(counts)
    a = _spec(spec).alpha
    lower = _exact_lower_odds(y1, y2, a, mid=True)
    upper = 1.0 / _exact_lower_odds(y2, y1, a, mid=True)
    return _interval(lower, upper, y1, y2)


# -- two-parameter log-linear model ------------------------------------------------

_DESIGN = np.array([[1.0, 0.0], [1.0, 1.0]])
_FIT_TOL = 1e-11
_MAX_FIT_ITER = 100


def _yvec(counts) -> np.ndarray:
    y1, y2 = counts
    if y1 < 0 or y2 < 0:
        raise DomainError(f"counts must be nonnegative, got ({y1}, {y2})")
    if y1 == 0 and y2 == 0:
        raise SeparationError("the model cannot be fitted when both counts are zero")
    return np.array([float(y1), float(y2)])


def _means(beta) -> np.ndarray:
    return np.exp(_DESIGN @ np.asarray(beta, dtype=float))


def _fisher(mu) -> np.ndarray:
    return _DESIGN.T @ (mu[:, None] * _DESIGN)


def poisson_loglik(counts, beta) -> float:
    """Poisson log-likelihood of ``counts`` at ``beta = (beta0, beta1)``."""
    y = _yvec(counts)
    eta = _DESIGN @ np.asarray(beta, dtype=float)
    return float(np.sum(y * eta - np.exp(eta) - special.gammaln(y + 1.0)))


def firth_penalized_loglik(counts, beta) -> float:
    """Log-likelihood plus half the log-determinant of the Fisher information."""
    mu = _means(beta)
    _, logdet = np.linalg.slogdet(_fisher(mu))
    return poisson_loglik(counts, beta) + 0.5 * logdet


def firth_score(counts, beta) -> np.ndarray:
    """Gradient of :func:`firth_penalized_loglik`: ``X'(y - mu + h/2)`` with ``h`` the leverages."""
    y = _yvec(counts)
    mu = _means(beta)
    inv = np.linalg.inv(_fisher(mu))
    lev = mu * np.einsum("ij,jk,ik->i", _DESIGN, inv, _DESIGN)
    return _DESIGN.T @ (y - mu + 0.5 * lev)


def kenne_adjusted_score(counts, beta) -> np.ndarray:
    """Median bias-reducing adjusted score for the log-linear Poisson model.

    ``s + A* - i @ F`` where ``A*_r = tr(i^-1 P_r)/2`` is the mean-bias
    adjustment and ``F_r = (i^-1)_r . [tr(h_r P_t)/3]_t`` with
    ``h_r = (i^-1)_r (i^-1)_r' / (i^-1)_rr``. ``P_r`` is the third-cumulant
    array ``sum_i x_ir mu_i x_i x_i'``; the ``Q_r`` terms vanish because the
    observed information is non-random under the canonical link.
    """
    y = _yvec(counts)
    mu = _means(beta)
    info = _fisher(mu)
    inv = np.linalg.inv(info)
    p = len(beta)
    cum3 = [_DESIGN.T @ ((mu * _DESIGN[:, r])[:, None] * _DESIGN) for r in range(p)]
    a_star = np.array([0.5 * np.trace(inv @ cum3[r]) for r in range(p)])
    f = np.empty(p)
    for r in range(p):
        col = inv[:, r]
        h = np.outer(col, col) / inv[r, r]
        f[r] = col @ np.array([np.trace(h @ cum3[t]) / 3.0 for t in range(p)])
    return _DESIGN.T @ (y - mu) + a_star - info @ f


def _numeric_jacobian(fn, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    jac = np.empty((len(fn(x)), len(x)))
    for j in range(len(x)):
        h = 1e-6 * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        jac[:, j] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return jac


def _newton(fn, start, what: str) -> tuple[np.ndarray, int]:
    """Newton-Raphson on ``fn(x) = 0`` with a central-difference Jacobian and step halving."""
    x = np.asarray(start, dtype=float)
    fx = fn(x)
    norm = float(np.max(np.abs(fx)))
    for it in range(1, _MAX_FIT_ITER + 1):
        try:
            step = np.linalg.solve(_numeric_jacobian(fn, x), fx)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"{what}: singular Jacobian") from exc
        lam = 1.0
        while True:
            xn = x - lam * step
            fn_x = fn(xn)
            nn = float(np.max(np.abs(fn_x)))
            if np.isfinite(nn) and (nn < norm or nn <= _FIT_TOL):
                break
            lam *= 0.5
            if lam < 1e-10:
                xn, fn_x, nn = x, fx, norm
                break
        moved = float(np.max(np.abs(xn - x)))
        x, fx, norm = xn, fn_x, nn
        if norm <= _FIT_TOL * max(1.0, float(np.max(np.abs(x)))) and moved < 1e-9:
            return x, it
        if moved == 0.0:
            if norm < 1e-10:
                return x, it
            raise NumericError(f"{what}: Newton iteration stalled at score norm {norm:.3g}")
    raise NumericError(f"{what}: no convergence after {_MAX_FIT_ITER} iterations")


def _start(y: np.ndarray) -> np.ndarray:
    # Poisson ML with a small continuity shift; keeps the start finite at zero counts.
    y1, y2 = y + 0.1
    return np.array([math.log(y1), math.log(y2 / y1)])


def _firth_score_fast(y1, y2, b0, b1):
    """Scalar form of :func:`firth_score` for the two-group design.

    The design is saturated, so the hat matrix is the identity and both
    leverages equal 1. Forming them from the inverse information instead
    cancels catastrophically once the two means differ by many orders.
    """
    mu1 = math.exp(b0)
    mu2 = math.exp(b0 + b1)
    r1 = y1 - mu1 + 0.5
    r2 = y2 - mu2 + 0.5
    return r1 + r2, r2


def _loglik_fast(y1, y2, b0, b1, penalized):
    # Kernel of the Poisson log-likelihood (the log-factorial constant is dropped).
    mu1 = math.exp(b0)
    mu2 = math.exp(b0 + b1)
    ll = y1 * b0 + y2 * (b0 + b1) - mu1 - mu2
    if penalized:
        ll += 0.5 * (2.0 * b0 + b1)  # log det I = log(mu1 * mu2)
    return ll


def fit_firth(counts) -> FitResult:
    """Firth penalized-likelihood fit of the two-group model."""
    y = _yvec(counts)
    y1, y2 = float(y[0]), float(y[1])
    beta, it = _newton(lambda b: np.array(_firth_score_fast(y1, y2, b[0], b[1])), _start(y),
                       "Firth fit")
    return FitResult(float(beta[0]), float(beta[1]), True, it)


def _newton1d(fn, x: float, what: str) -> tuple[float, int]:
    fx = fn(x)
    for it in range(1, _MAX_FIT_ITER + 1):
        h = 1e-6 * max(1.0, abs(x))
        slope = (fn(x + h) - fn(x - h)) / (2.0 * h)
        if slope == 0.0 or not math.isfinite(slope):
            raise NumericError(f"{what}: zero or non-finite derivative")
        xn = x - fx / slope
        fxn = fn(xn)
        lam = 1.0
        while not (abs(fxn) < abs(fx) or abs(fxn) <= _FIT_TOL):
            lam *= 0.5
            if lam < 1e-10:
                xn, fxn = x, fx
                break
            xn = x - lam * fx / slope
            fxn = fn(xn)
        moved = abs(xn - x)
        x, fx = xn, fxn
        if abs(fx) <= _FIT_TOL * max(1.0, abs(x)) and moved < 1e-9:
            return x, it
        if moved == 0.0:
            if abs(fx) < 1e-10:
                return x, it
            raise NumericError(f"{what}: Newton iteration stalled at score {fx:.3g}")
    raise NumericError(f"{what}: no convergence after {_MAX_FIT_ITER} iterations")


def _softplus(t: float) -> float:
    return t + math.log1p(math.exp(-t)) if t > 0 else math.log1p(math.exp(t))


def fit_firth_constrained(counts, beta1_fixed: float) -> FitResult:
    """Firth fit over ``beta0`` alone with ``beta1`` held at ``beta1_fixed``.

    The penalty is the full two-parameter ``log det`` evaluated at the
    constrained point, so the stationarity condition is
    ``mu1 + mu2 = y1 + y2 + 1``.
    """
    y = _yvec(counts)
    y1, y2 = float(y[0]), float(y[1])
    b1 = float(beta1_fixed)
    # Start at the unpenalized constrained optimum.
    start = math.log(y1 + y2) - _softplus(b1)
    beta0, it = _newton1d(lambda b: _firth_score_fast(y1, y2, b, b1)[0], start,
                          "constrained Firth fit")
    return FitResult(beta0, b1, True, it)


def fit_kenne(counts) -> FitResult:
    """Median bias-reduced fit (adjusted score of Kenne Pagui, Salvan and Sartori)."""
    y = _yvec(counts)
    beta, it = _newton(lambda b: kenne_adjusted_score(y, b), _start(y), "median bias-reduced fit")
    return FitResult(float(beta[0]), float(beta[1]), True, it)


def _wald_from_fit(fit: FitResult, z: float, y1: float, y2: float) -> RatioInterval:
    inv = np.linalg.inv(_fisher(_means((fit.beta0, fit.beta1))))
    half = z * math.sqrt(inv[1, 1])
    return _interval(math.exp(fit.beta1 - half), math.exp(fit.beta1 + half), y1, y2)


def ci_wald_firth(counts, spec) -> RatioInterval:
    """Wald interval around the Firth estimate, with the Fisher information at the fit."""
    y1, y2 = _counts(counts)
    return _wald_from_fit(fit_firth((y1, y2)), _spec(spec).z, y1, y2)


def ci_wald_kenne(counts, spec) -> RatioInterval:
    """Wald interval around the median bias-reduced estimate."""
    y1, y2 = _counts(counts)
    return _wald_from_fit(fit_kenne((y1, y2)), _spec(spec).z, y1, y2)


def _bracketed_root(g: Callable[[float], float], inner: float, outer: float) -> float:
    """Root of ``g`` between ``inner`` (g < 0) and ``outer`` (g > 0).

    Newton steps with a central-difference slope; any step leaving the
    bracket is replaced by bisection.
    """
    t = outer
    gt = g(t)
    for _ in range(200):
        if gt > 0:
            outer = t
        elif gt < 0:
            inner = t
        else:
            return t
        h = 1e-6 * max(1.0, abs(t))
        slope = (g(t + h) - g(t - h)) / (2.0 * h)
        lo, hi = min(inner, outer), max(inner, outer)
        tn = t - gt / slope if slope != 0 else 0.5 * (lo + hi)
        if not lo < tn < hi:
            tn = 0.5 * (lo + hi)
        if abs(tn - t) <= 1e-15 * max(1.0, abs(t)) or hi - lo <= 1e-15 * max(1.0, abs(t)):
            return tn
        t = tn
        gt = g(t)
        if abs(gt) < 1e-13:
            return t
    raise NumericError("profile-likelihood inversion did not converge")


def _profile_interval(stat: Callable[[float], float], centre: float, halfwidth: float,
                      crit: float, y1: float, y2: float) -> RatioInterval:
    g = lambda t: stat(t) - crit  # noqa: E731
    bounds = []
    for direction in (-1.0, 1.0):
        inner, w = centre, halfwidth
        outer = centre + direction * w
        while g(outer) <= 0:
            inner = outer
            w *= 2.0
            outer = centre + direction * w
            if w > 700:
                raise SeparationError(f"likelihood profile is monotone for counts ({y1}, {y2})")
        bounds.append(_bracketed_root(g, inner, outer))
    return _interval(math.exp(bounds[0]), math.exp(bounds[1]), y1, y2)


def _firth_lr(counts, spec, penalized: bool) -> RatioInterval:
    y1, y2 = _counts(counts)
    s = _spec(spec)
    free = fit_firth((y1, y2))
    top = _loglik_fast(y1, y2, free.beta0, free.beta1, penalized)

    def stat(t):
        fit = fit_firth_constrained((y1, y2), t)
        return 2.0 * (top - _loglik_fast(y1, y2, fit.beta0, t, penalized))

    se = math.sqrt(1.0 / (y1 + 0.5) + 1.0 / (y2 + 0.5))
    return _profile_interval(stat, free.beta1, s.z * se, s.crit, y1, y2)


def ci_lr1_firth(counts, spec) -> RatioInterval:
    """Unpenalized LR statistic between the free and constrained Firth fits, inverted."""
    return _firth_lr(counts, spec, penalized=False)


def ci_lr2_firth(counts, spec) -> RatioInterval:
    """Penalized LR statistic between the free and constrained Firth fits, inverted."""
    return _firth_lr(counts, spec, penalized=True)


_DISPATCH = {
    EstimatorKind.SCORE: ci_score,
    EstimatorKind.WALD: ci_wald,
    EstimatorKind.ML_LR: ci_ml_lr,
    EstimatorKind.WALD_FIRTH: ci_wald_firth,
    EstimatorKind.LR1_FIRTH: ci_lr1_firth,
    EstimatorKind.LR2_FIRTH: ci_lr2_firth,
    EstimatorKind.WALD_KENNE: ci_wald_kenne,
    EstimatorKind.HIRJI: ci_hirji,
    EstimatorKind.HIRJI_MIDP: ci_hirji_midp,
}


def compute_ci(kind, counts, spec) -> RatioInterval:
    """Interval of the given kind; raises :class:`SeparationError` on any zero count."""
    kind = EstimatorKind(kind)
    y1, y2 = counts
    if y1 == 0 or y2 == 0:
        raise SeparationError(
            f"no {kind.value} interval: a zero count was observed (y1={y1}, y2={y2}); "
            "intervals are only reported when both counts are positive"
        )
    return _DISPATCH[kind]((y1, y2), spec)


def interval_table(kind, spec, y1_values, y2_values) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper bounds for every pair in ``y1_values x y2_values``.

    Entries are bit-identical to :func:`compute_ci`. The likelihood-ratio
    kind is evaluated in one batched kernel call; other kinds loop.
    """
    kind = EstimatorKind(kind)
    s = _spec(spec)
    a = np.asarray(y1_values, dtype=float)
    b = np.asarray(y2_values, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0):
        raise SeparationError("interval tables only cover positive counts")
    shape = (len(a), len(b))
    if kind is EstimatorKind.ML_LR:
        ya, yb = np.meshgrid(a, b, indexing="ij")
        lower, upper, status = kernels.lr_bounds(ya.ravel(), yb.ravel(), s.crit)
        if np.any(status != 0):
            bad = np.argwhere(status.reshape(shape) != 0)[0]
            raise NumericError(
                f"likelihood-ratio inversion failed at counts ({a[bad[0]]}, {b[bad[1]]})"
            )
        return lower.reshape(shape), upper.reshape(shape)
    lower = np.empty(shape)
    upper = np.empty(shape)
    fn = _DISPATCH[kind]
    for i, y1 in enumerate(a):
        for j, y2 in enumerate(b):
            try:
                ci = fn((y1, y2), s)
            except NumericError as exc:
                raise NumericError(f"{kind.value} interval failed at counts ({y1}, {y2}): {exc}") from exc
            lower[i, j] = ci.lower
            upper[i, j] = ci.upper
    return lower, upper


def apply_offsets(interval: RatioInterval, offsets: OffsetPair) -> RatioInterval:
    """Convert a count-ratio interval to the rate-ratio scale (multiply by ``r1/r2``)."""
    if not isinstance(offsets, OffsetPair):
        offsets = OffsetPair(*offsets)
    f = offsets.r1 / offsets.r2
    return RatioInterval(interval.lower * f, interval.upper * f, interval.point_ml * f)
