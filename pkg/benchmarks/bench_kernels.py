"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N]

The sweep timing runs each backend in a fresh interpreter, because the
backend is chosen once at import.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from scipy.stats import poisson

from poisratio import kernels
from poisratio.estimators import interval_table
from poisratio.numerics import chisq1_quantile

SWEEP = """
import time
from poisratio.coverage import MixingSpec
from poisratio.sweep import GridSpec, sweep_unconditional
g = GridSpec(1.0, 10.0, 1.0)
t = time.perf_counter()
sweep_unconditional("ml_lr", g, g, 0.95, MixingSpec())
print(time.perf_counter() - t)
"""


def _inputs():
    y = np.arange(1, 101, dtype=float)
    y1, y2 = (a.ravel() for a in np.meshgrid(y, y, indexing="ij"))
    ys = np.arange(0, 120)
    lo, hi = interval_table("ml_lr", 0.95, ys[1:], ys[1:])
    lo, hi = np.pad(lo, (1, 0), constant_values=np.nan), np.pad(hi, (1, 0), constant_values=np.nan)
    p1, p2 = poisson.pmf(ys, 40.0), poisson.pmf(ys, 55.0)
    return y1, y2, p1, p2, lo, hi


def _sweep_seconds(pure: bool) -> float:
    env = dict(os.environ, POISRATIO_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", SWEEP], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    y1, y2, p1, p2, lo, hi = _inputs()
    crit = chisq1_quantile(0.95)
    rows = []
    for name, mod in backends.items():
        lr = min(timeit.repeat(lambda: mod.lr_bounds(y1, y2, crit), number=1, repeat=args.repeat))
        rs = min(timeit.repeat(lambda: mod.risk_sums(p1, p2, lo, hi, 1.375), number=1, repeat=args.repeat))
        sw = min(_sweep_seconds(name == "python") for _ in range(args.repeat))
        rows.append((name, lr, rs, sw))

    print(f"{'backend':<10}{'lr_bounds 100^2':>18}{'risk_sums 120^2':>18}{'sweep 10x10':>14}")
    for name, lr, rs, sw in rows:
        print(f"{name:<10}{lr * 1e3:>15.2f} ms{rs * 1e3:>15.2f} ms{sw:>12.2f} s")
    if len(rows) == 2:
        (_, *py), (_, *cc) = sorted(rows, key=lambda r: r[0] != "python")
        print("speed-up  " + "".join(f"{a / b:>17.1f}x" for a, b in zip(py[:2], cc[:2])) + f"{py[2] / cc[2]:>13.1f}x")
    else:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
