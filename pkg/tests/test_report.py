import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from poisratio.errors import DomainError
from poisratio.estimators import ConfidenceSpec
from poisratio.report import (
    DEFAULT_PALETTE,
    INVALID_COLOR,
    BandSpec,
    band_matrix,
    classify_band,
    export_table,
    read_table,
    render_surface,
)
from poisratio.sweep import GridSpec, Surface, sweep_conditional

A = 0.025
B = BandSpec()


def uniform_surface(value, n1=3, n2=4, valid=True):
    g1, g2 = GridSpec(1.0, float(n1), 1.0), GridSpec(1.0, float(n2), 1.0)
    shape = (n1, n2)
    return Surface(g1, g2, "wald", ConfidenceSpec(0.95), None, np.full(shape, value),
                   np.full(shape, value), np.full(shape, valid))


def parse_ppm(data):
    parts = data.split(b"\n", 3)
    assert parts[0] == b"P6" and parts[2] == b"255"
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


def test_nominal_and_stated_examples():
    assert classify_band(A, A) == 0
    # 0.04 exceeds 1.5 * alpha = 0.0375 but not 2 * alpha
    assert classify_band(0.04, A) == 2
    assert classify_band(0.0, A) == -4
    assert classify_band(0.3, A) == 4
    assert classify_band(A / 3, A) == -3


def test_ties_go_inward():
    for k, t in enumerate(B.thresholds):
        assert classify_band(A * t, A) == k
        assert classify_band(A / t, A) == -k
        assert classify_band(A * t * (1 + 1e-9), A) == k + 1


@given(st.floats(0, 0.999), st.floats(0, 0.999))
def test_monotone(a, b):
    lo, hi = sorted((a, b))
    assert classify_band(lo, A) <= classify_band(hi, A)


def test_band_spec_validation():
    for bad in [(), (1.0, 2.0), (2.0, 1.5), (0.5,)]:
        with pytest.raises(DomainError):
            BandSpec(bad)
    with pytest.raises(DomainError):
        classify_band(0.1, 0.5)


def test_uniform_surface_single_color():
    px = parse_ppm(render_surface(uniform_surface(A), "lower"))
    assert px.shape == (4, 3, 3)
    assert np.all(px == DEFAULT_PALETTE[0])


def test_invalid_cells_use_reserved_color():
    px = parse_ppm(render_surface(uniform_surface(A, valid=False), "upper"))
    assert np.all(px == INVALID_COLOR)
    assert INVALID_COLOR not in DEFAULT_PALETTE.values()


def test_orientation():
    s = uniform_surface(A, 3, 4)
    s.alpha_l[2, 3] = 0.0        # largest lambda1, largest lambda2
    s.alpha_l[0, 0] = 0.3        # smallest of both
    px = parse_ppm(render_surface(s, "lower"))
    assert tuple(px[0, 2]) == DEFAULT_PALETTE[-4]   # top-right
    assert tuple(px[3, 0]) == DEFAULT_PALETTE[4]    # bottom-left


def test_render_is_deterministic():
    s = sweep_conditional("score", GridSpec(0.5, 3, 0.5), GridSpec(0.5, 3, 0.5), 0.95)
    assert render_surface(s, "lower") == render_surface(s, "lower")
    with pytest.raises(DomainError):
        render_surface(s, "sideways")
    with pytest.raises(DomainError):
        render_surface(s, "lower", palette={0: (0, 0, 0)})


def test_ml_lr_tolerated_above_one():
    g = GridSpec(1.0, 8.0, 1.0)
    s = sweep_conditional("ml_lr", g, g, 0.95)
    bl, bu = band_matrix(s, "lower"), band_matrix(s, "upper")
    # inflated risk never passes the 1.5 tolerance once both means reach 1
    assert bl.max() <= 2 and bu.max() <= 2


def test_export_round_trip(tmp_path):
    s = sweep_conditional("wald", GridSpec(0.5, 4, 0.5), GridSpec(1, 3, 1), 0.95)
    bands = BandSpec((1.1, 3.0))
    export_table(s, tmp_path / "t.csv", bands)
    back, b2, bl, bu = read_table(tmp_path / "t.csv")
    assert b2 == bands
    assert back.shape == s.shape
    assert np.allclose(back.alpha_l, s.alpha_l, rtol=1e-11, atol=0)
    assert np.array_equal(bl, band_matrix(back, "lower", bands))
    assert np.array_equal(bu, band_matrix(back, "upper", bands))
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[[r.startswith("lambda1") for r in rows].index(True)].endswith(",band_l,band_u")


def test_export_reports_path_on_failure(tmp_path):
    s = uniform_surface(A)
    with pytest.raises(OSError, match="nodir"):
        export_table(s, tmp_path / "nodir" / "t.csv")
