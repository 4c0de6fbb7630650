"""Pure-Python kernels. Same algorithms and signatures as the compiled
``_kernels`` extension; used when the extension is unavailable or disabled.
"""

import math

import numpy as np

MAX_ITER = 200


def _softplus(t):
    if t > 0:
        return t + math.log1p(math.exp(-t))
    return math.log1p(math.exp(t))


def _sigmoid(t):
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def lr_deviance(y1, y2, t, crit):
    """Conditional deviance at log-odds ``t`` minus ``crit``.

    ``2*[y2*log(phat/p) + y1*log((1-phat)/(1-p))] - crit`` with ``p = sigmoid(t)``.
    """
    n = y1 + y2
    return 2.0 * (y2 * (math.log(y2 / n) + _softplus(-t))
                  + y1 * (math.log(y1 / n) + _softplus(t))) - crit


def _lr_root(y1, y2, crit, direction):
    """One bound of the LR interval on the log-odds scale.

    Returns (t, status). The deviance is convex in t with its minimum at the
    ML estimate, so Newton started outside the root descends monotonically;
    iterates leaving the bracket fall back to bisection.
    """
    n = y1 + y2
    that = math.log(y2 / y1)
    step = math.sqrt(crit) * math.sqrt(1.0 / y1 + 1.0 / y2)
    inner = that
    outer = that + direction * step
    k = 0
    while lr_deviance(y1, y2, outer, crit) <= 0.0:
        inner = outer
        step *= 2.0
        outer = that + direction * step
        k += 1
        if k > 60:
            return outer, 2
    t = outer
    for _ in range(MAX_ITER):
        d = lr_deviance(y1, y2, t, crit)
        if d > 0.0:
            outer = t
        elif d < 0.0:
            inner = t
        else:
            return t, 0
        slope = 2.0 * (n * _sigmoid(t) - y2)
        tn = t - d / slope if slope != 0.0 else 0.5 * (inner + outer)
        lo, hi = (inner, outer) if inner < outer else (outer, inner)
        if not (lo < tn < hi):
            tn = 0.5 * (inner + outer)
        if abs(tn - t) <= 4e-16 * max(1.0, abs(t)):
            t = tn
            if abs(lr_deviance(y1, y2, t, crit)) < 1e-10 * max(1.0, crit):
                return t, 0
            return t, 1
        t = tn
    return t, 1


def lr_bounds(y1, y2, crit):
    """Likelihood-ratio interval on the odds scale for each count pair.

    ``y1``, ``y2`` are float64 arrays of equal length (all entries >= 1 in
    practice, fractional values accepted). Returns ``(lower, upper, status)``;
    status 0 means converged.
    """
    y1 = np.ascontiguousarray(y1, dtype=np.float64)
    y2 = np.ascontiguousarray(y2, dtype=np.float64)
    m = len(y1)
    lower = np.empty(m)
    upper = np.empty(m)
    status = np.zeros(m, dtype=np.int8)
    for i in range(m):
        a = float(y1[i])
        b = float(y2[i])
        tl, sl = _lr_root(a, b, crit, -1.0)
        tu, su = _lr_root(a, b, crit, 1.0)
        lower[i] = math.exp(tl)
        upper[i] = math.exp(tu)
        status[i] = max(sl, su)
    return lower, upper, status


def risk_sums(p1, p2, lower, upper, ratio):
    """Probability mass of cells whose interval lies strictly above / below ``ratio``.

    ``lower`` and ``upper`` are ``len(p1) x len(p2)`` bound tables.
    """
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    above = (np.asarray(lower) > ratio).astype(np.float64) @ p2
    below = (np.asarray(upper) < ratio).astype(np.float64) @ p2
    return float(np.dot(p1, above)), float(np.dot(p1, below))
