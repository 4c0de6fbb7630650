import os
import subprocess
import sys

import numpy as np
import pytest

from poisratio import kernels
from poisratio.numerics import chisq1_quantile

BACKENDS = kernels.available_backends()


def test_python_backend_always_available():
    assert "python" in BACKENDS
    assert kernels.BACKEND in BACKENDS


@pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")
def test_lr_bounds_agree():
    y1, y2 = np.meshgrid(np.arange(1, 41.0), np.arange(1, 41.0), indexing="ij")
    for level in (0.8, 0.95, 1 - 1e-6):
        crit = chisq1_quantile(level)
        a = BACKENDS["python"].lr_bounds(y1.ravel(), y2.ravel(), crit)
        b = BACKENDS["compiled"].lr_bounds(y1.ravel(), y2.ravel(), crit)
        assert np.array_equal(a[2], b[2]) and not a[2].any()
        assert np.allclose(a[0], b[0], rtol=1e-13, atol=0)
        assert np.allclose(a[1], b[1], rtol=1e-13, atol=0)


@pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")
def test_risk_sums_agree():
    rng = np.random.default_rng(0)
    p1, p2 = rng.random(30), rng.random(45)
    lo = rng.random((30, 45)) * 2
    hi = lo + rng.random((30, 45))
    lo.setflags(write=False)
    a = BACKENDS["python"].risk_sums(p1, p2, lo, hi, 1.0)
    b = BACKENDS["compiled"].risk_sums(p1, p2, lo, hi, 1.0)
    assert a == pytest.approx(b, rel=1e-13)


def test_lr_deviance_vanishes_at_bounds():
    for mod in BACKENDS.values():
        crit = chisq1_quantile(0.95)
        lo, hi, status = mod.lr_bounds(np.array([3.0]), np.array([11.0]), crit)
        for b in (lo[0], hi[0]):
            assert abs(mod.lr_deviance(3.0, 11.0, np.log(b), crit)) < 1e-10


def test_env_forces_fallback():
    code = "import poisratio.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, POISRATIO_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
