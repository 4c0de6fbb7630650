"""Distribution kernels: Poisson pmf/quantiles, normal and chi-square(1)
quantiles, binomial tail inversion and log-normal discretization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .errors import DomainError, NumericError

__all__ = [
    "DiscretizedMixture",
    "pois_pmf",
    "pois_pmf_range",
    "pois_quantile",
    "normal_quantile",
    "chisq1_quantile",
    "binom_tail_ge",
    "binom_tail_le",
    "cp_tail_solve",
    "midp_tail_solve",
    "midp_tail",
    "lognormal_discretize",
]

# Beyond this rate the quantile scan is restricted to a normal-approximation window.
_SCAN_LIMIT = 1.0e4
_WINDOW_SD = 40.0


def pois_pmf(lam: float, k: int) -> float:
    """Poisson probability mass ``P(X = k)`` for ``X ~ Poisson(lam)``.

    Evaluated as ``exp(k*log(lam) - lam - lgamma(k+1))`` so large ``k`` does
    not overflow.
    """
    if not lam > 0:
        raise DomainError(f"Poisson rate must be positive, got {lam!r}")
    if k < 0:
        return 0.0
    return math.exp(k * math.log(lam) - lam - math.lgamma(k + 1))


def pois_pmf_range(lam: float, kmin: int, kmax: int) -> np.ndarray:
    """Vector of Poisson pmf values for ``k = kmin .. kmax`` inclusive."""
    if not lam > 0:
        raise DomainError(f"Poisson rate must be positive, got {lam!r}")
    if kmax < kmin:
        return np.zeros(0)
    k = np.arange(max(kmin, 0), kmax + 1, dtype=float)
    logp = k * math.log(lam) - lam - special.gammaln(k + 1.0)
    out = np.exp(logp)
    if kmin < 0:
        out = np.concatenate([np.zeros(-kmin), out])
    return out


def _scan_window(lam: float) -> tuple[int, int]:
    if lam <= _SCAN_LIMIT:
        hi = int(math.ceil(lam + _WINDOW_SD * math.sqrt(lam) + 60.0))
        return 0, hi
    sd = math.sqrt(lam)
    return int(max(0.0, math.floor(lam - _WINDOW_SD * sd))), int(math.ceil(lam + _WINDOW_SD * sd))


def pois_quantile(lam: float, q: float) -> int:
    """Smallest ``k`` with ``P(X <= k) >= q``.

    For ``q <= 0.5`` the lower tail is accumulated upward from the left end of
    the window; for ``q > 0.5`` the upper tail ``P(X > k)`` is accumulated
    downward from the right end and compared with ``1 - q``, which keeps full
    relative precision for quantiles like ``1 - 1e-9``.
    """
    if not lam > 0:
        raise DomainError(f"Poisson rate must be positive, got {lam!r}")
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {q!r}")
    lo, hi = _scan_window(lam)
    pmf = pois_pmf_range(lam, lo, hi)
    if q <= 0.5:
        cdf = np.cumsum(pmf)
        idx = int(np.searchsorted(cdf, q, side="left"))
        return lo + min(idx, len(pmf) - 1)
    # tail[i] = P(X > lo + i), summed from the far right so small terms come first
    tail = np.concatenate([np.cumsum(pmf[::-1])[::-1][1:], [0.0]])
    ok = np.nonzero(tail <= 1.0 - q)[0]
    if len(ok) == 0:
        raise NumericError(f"quantile scan window too small for lam={lam}, q={q}")
    return lo + int(ok[0])


def normal_quantile(p: float) -> float:
    """Standard normal inverse CDF."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p!r}")
    return float(special.ndtri(p))


def chisq1_quantile(p: float) -> float:
    """Quantile of the chi-square distribution with one degree of freedom.

    Computed as ``normal_quantile((1 - p) / 2) ** 2`` which equals
    ``normal_quantile((1 + p) / 2) ** 2`` but avoids forming ``1 + p`` when
    ``p`` is within 1e-6 of one.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p!r}")
    z = float(special.ndtri((1.0 - p) / 2.0))
    return z * z


def binom_tail_ge(n: int, k: int, p: float) -> float:
    """``P(X >= k)`` for ``X ~ Bin(n, p)``."""
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    return float(special.betainc(k, n - k + 1, p))


def binom_tail_le(n: int, k: int, p: float) -> float:
    """``P(X <= k)`` for ``X ~ Bin(n, p)``, evaluated through ``1 - p``."""
    if k < 0:
        return 0.0
    if k >= n:
        return 1.0
    return float(special.betainc(n - k, k + 1, 1.0 - p))


def midp_tail(n: int, k: int, p: float, side: str) -> float:
    """Mid-P tail: ``P(X > k) + P(X = k)/2`` (lower) or ``P(X < k) + P(X = k)/2`` (upper)."""
    if side == "lower":
        return 0.5 * (binom_tail_ge(n, k, p) + binom_tail_ge(n, k + 1, p))
    if side == "upper":
        return 0.5 * (binom_tail_le(n, k, p) + binom_tail_le(n, k - 1, p))
    raise DomainError(f"side must be 'lower' or 'upper', got {side!r}")


def _solve_unit(f, xtol: float) -> float:
    """Root of an increasing function on (0, 1) with f(0) < 0 < f(1)."""
    try:
        root = optimize.brentq(f, 0.0, 1.0, xtol=xtol, rtol=1e-15, maxiter=500)
    except (ValueError, RuntimeError) as exc:  # pragma: no cover - valid inputs always bracket
        raise NumericError(f"binomial tail root not bracketed: {exc}") from exc
    return float(root)


def _check_tail_args(n, k, alpha, side):
    if n < 1 or k < 0 or k > n:
        raise DomainError(f"need 0 <= k <= n and n >= 1, got n={n}, k={k}")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    if side not in ("lower", "upper"):
        raise DomainError(f"side must be 'lower' or 'upper', got {side!r}")


def _cp_lower(n: int, k: int, alpha: float, xtol: float) -> float:
    return _solve_unit(lambda p: special.betainc(k, n - k + 1, p) - alpha, xtol)


def cp_tail_solve(n: int, k: int, alpha: float, side: str, *, complement: bool = False,
                  xtol: float = 1e-300) -> float:
    """Clopper-Pearson tail inversion.

    ``side="lower"`` solves ``P(Bin(n, p) >= k) = alpha`` (requires ``k >= 1``),
    ``side="upper"`` solves ``P(Bin(n, p) <= k) = alpha`` (requires ``k <= n - 1``).

    The upper root is found on the ``1 - p`` scale. With ``complement=True``
    that value ``1 - p`` is returned instead of ``p``, which keeps relative
    precision when the bound is close to one.
    """
    _check_tail_args(n, k, alpha, side)
    if side == "lower":
        if k < 1:
            raise DomainError("lower Clopper-Pearson bound needs k >= 1")
        p = _cp_lower(n, k, alpha, xtol)
        return 1.0 - p if complement else p
    if k > n - 1:
        raise DomainError("upper Clopper-Pearson bound needs k <= n - 1")
    q = _cp_lower(n, n - k, alpha, xtol)
    return q if complement else 1.0 - q


def _midp_lower(n: int, k: int, alpha: float, xtol: float) -> float:
    if k == n:
        return _solve_unit(lambda p: 0.5 * special.betainc(n, 1, p) - alpha, xtol)
    return _solve_unit(
        lambda p: 0.5 * (special.betainc(k, n - k + 1, p) + special.betainc(k + 1, n - k, p)) - alpha,
        xtol,
    )


def midp_tail_solve(n: int, k: int, alpha: float, side: str, *, complement: bool = False,
                    xtol: float = 1e-300) -> float:
    """Mid-P analogue of :func:`cp_tail_solve`.

    lower: ``P(X > k) + P(X = k)/2 = alpha``; upper: ``P(X < k) + P(X = k)/2 = alpha``.
    """
    _check_tail_args(n, k, alpha, side)
    if side == "lower":
        if k < 1:
            raise DomainError("lower mid-P bound needs k >= 1")
        p = _midp_lower(n, k, alpha, xtol)
        return 1.0 - p if complement else p
    if k > n - 1:
        raise DomainError("upper mid-P bound needs k <= n - 1")
    q = _midp_lower(n, n - k, alpha, xtol)
    return q if complement else 1.0 - q


@dataclass(frozen=True)
class DiscretizedMixture:
    """Discrete approximation of a positive continuous law on a fixed grid.

    ``grid_index[i] * precision`` is ``support[i]``; the integer index is what
    callers should use as a cache key.
    """

    support: np.ndarray
    weights: np.ndarray
    grid_index: np.ndarray
    precision: float

    def __len__(self):
        return len(self.support)

    def mean(self) -> float:
        return float(np.dot(self.support, self.weights))


def lognormal_discretize(lam: float, gsd: float, n_points: int = 20,
                         grid_precision: float = 0.05) -> DiscretizedMixture:
    """Discretize a log-normal law with arithmetic mean ``lam``.

    The log-scale sd is ``log(gsd)`` and the log-scale location is
    ``log(lam) - sigma**2 / 2``. Support points sit at the quantiles
    ``(i + 0.5) / n_points`` and are snapped to the nearest multiple of
    ``grid_precision`` (never below one grid step); points that snap to the
    same value are merged.
    """
    if not lam > 0:
        raise DomainError(f"lam must be positive, got {lam!r}")
    if not gsd > 1.0:
        raise DomainError(f"geometric sd must exceed 1, got {gsd!r}")
    if n_points < 1:
        raise DomainError(f"n_points must be positive, got {n_points!r}")
    if not grid_precision > 0:
        raise DomainError(f"grid precision must be positive, got {grid_precision!r}")
    sigma = math.log(gsd)
    mu = math.log(lam) - 0.5 * sigma * sigma
    probs = (np.arange(n_points) + 0.5) / n_points
    values = np.exp(mu + sigma * special.ndtri(probs))
    idx = np.maximum(np.rint(values / grid_precision).astype(np.int64), 1)
    uniq, counts = np.unique(idx, return_counts=True)
    weights = counts / float(n_points)
    return DiscretizedMixture(
        support=uniq * grid_precision,
        weights=weights,
        grid_index=uniq,
        precision=grid_precision,
    )
