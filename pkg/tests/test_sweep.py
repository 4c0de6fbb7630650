import time

import numpy as np
import pytest

from poisratio.coverage import MixingSpec, conditional_risks
from poisratio.errors import DomainError, NumericError, SurfaceFormatError, SurfaceVersionError
from poisratio.estimators import ConfidenceSpec, compute_ci
from poisratio.numerics import lognormal_discretize, pois_quantile
from poisratio.sweep import (
    GRID_PRESETS,
    HIGH_RANGE,
    LOW_RANGE,
    GridSpec,
    build_ci_cache,
    load_surface,
    parse_surface,
    save_surface,
    surface_to_text,
    sweep_conditional,
    sweep_unconditional,
)

S95 = ConfidenceSpec(0.95)
SMALL = GridSpec(0.5, 5.0, 0.5)


def max_jump(a):
    return max(np.abs(np.diff(a, axis=0)).max(), np.abs(np.diff(a, axis=1)).max())


def test_grid_points():
    assert np.allclose(SMALL.points(), np.arange(1, 11) * 0.5)
    assert len(LOW_RANGE) == 800
    assert len(HIGH_RANGE) == 81
    log = GRID_PRESETS["wide-log"].points()
    assert log[0] == 0.5 and len(log) == 431 and log[-1] == pytest.approx(1e4, rel=0.025)
    log = GridSpec(1.0, 1e4, 0.5, "logarithmic")
    assert np.allclose(log.points(), 10.0 ** np.arange(0, 4.5, 0.5))


@pytest.mark.parametrize("args", [(0, 1, 0.1), (2, 1, 0.1), (1, 2, 0), (1, 2, 0.1, "cubic")])
def test_grid_validation(args):
    with pytest.raises(DomainError):
        GridSpec(*args)


def test_cache_bit_identical_and_parallel():
    serial = build_ci_cache("score", S95, 12, 9)
    parallel = build_ci_cache("score", S95, 12, 9, workers=3)
    assert np.array_equal(serial.lower, parallel.lower)
    assert np.array_equal(serial.upper, parallel.upper)
    ci = compute_ci("score", (7, 4), S95)
    assert serial.lower[6, 3] == ci.lower and serial.upper[6, 3] == ci.upper
    assert build_ci_cache("wald", S95, 0, 0).shape == (0, 0)


def test_cache_extent_for_high_range():
    assert pois_quantile(104, 1 - 1e-9) == 171


def test_single_cell_sweep():
    g = GridSpec(2.0, 2.2, 0.5)
    assert len(g) == 1
    surf = sweep_conditional("wald", g, GridSpec(3.0, 3.1, 1.0), S95)
    rp = conditional_risks("wald", (2.0, 3.0), S95)
    assert surf.risk(0, 0) == rp


def test_symmetric_grid_swaps_sides():
    surf = sweep_conditional("hirji_midp", SMALL, SMALL, S95)
    assert np.allclose(surf.alpha_l, surf.alpha_u.T, rtol=0, atol=1e-10)


def test_cache_coherence():
    a = sweep_conditional("ml_lr", SMALL, SMALL, S95)
    b = sweep_conditional("ml_lr", SMALL, SMALL, S95, use_cache=False)
    assert a == b


def test_worker_count_does_not_change_bytes():
    texts = {surface_to_text(sweep_unconditional("wald", SMALL, SMALL, S95, MixingSpec(), workers=w))
             for w in (1, 2, 3)}
    assert len(texts) == 1


def test_unconditional_degenerates_to_conditional():
    c = sweep_conditional("score", SMALL, SMALL, S95)
    u = sweep_unconditional("score", SMALL, SMALL, S95, MixingSpec(gsd=1.0001))
    assert np.allclose(c.alpha_l, u.alpha_l, atol=1e-10)
    assert np.allclose(c.alpha_u, u.alpha_u, atol=1e-10)


def test_memoization_bound():
    mix = MixingSpec()
    surf = sweep_unconditional("wald", SMALL, SMALL, S95, mix)
    idx = set()
    for lam in SMALL.points():
        idx.add(tuple(lognormal_discretize(float(lam), mix.gsd, mix.n_points,
                                           mix.grid_precision).grid_index))
    supports = {i for t in idx for i in t}
    # every support of one axis meets every support of the other, each evaluated once
    assert surf.stats["conditional_evaluations"] == len(supports) ** 2


def test_unconditional_is_smoother():
    g = GridSpec(0.5, 10.0, 0.5)
    c = sweep_conditional("ml_lr", g, g, S95)
    u = sweep_unconditional("ml_lr", g, g, S95, MixingSpec())
    assert c.shape == (20, 20)
    assert max_jump(u.alpha_l) < max_jump(c.alpha_l)
    assert max_jump(u.alpha_u) < max_jump(c.alpha_u)


def test_invalid_cells_are_recorded():
    tiny = GridSpec(1e-13, 2e-13, 1e-13)
    surf = sweep_conditional("wald", tiny, GridSpec(1.0, 2.0, 1.0), S95)
    assert not surf.valid.any()
    assert len(surf.errors) == surf.valid.size
    assert np.all(np.isfinite(surf.alpha_l))


def test_round_trip(tmp_path):
    surf = sweep_unconditional("score", SMALL, GridSpec(1.0, 3.0, 1.0), S95, MixingSpec(n_points=7))
    surf.errors.append("synthetic note")
    p = tmp_path / "s.txt"
    save_surface(surf, p)
    back = load_surface(p)
    assert back.grid1 == surf.grid1 and back.mixing == surf.mixing and back.kind is surf.kind
    assert back.spec == surf.spec and back.errors == surf.errors
    assert np.allclose(back.alpha_l, surf.alpha_l, rtol=1e-11, atol=0)
    save_surface(back, tmp_path / "t.txt")
    assert (tmp_path / "t.txt").read_bytes() == p.read_bytes()


def test_conditional_round_trip_has_no_mixing(tmp_path):
    surf = sweep_conditional("wald", GridSpec(1.0, 2.0, 0.5), GridSpec(1.0, 2.0, 0.5), S95)
    save_surface(surf, tmp_path / "c.txt")
    assert "# mixing" not in (tmp_path / "c.txt").read_text()
    assert load_surface(tmp_path / "c.txt").mixing is None


def test_truncated_file_is_rejected(tmp_path):
    surf = sweep_conditional("wald", SMALL, SMALL, S95)
    lines = surface_to_text(surf).splitlines()
    with pytest.raises(SurfaceFormatError, match="truncated"):
        parse_surface(lines[:-3])
    cut = tmp_path / "cut.txt"
    cut.write_text("\n".join(lines[:-1]) + "\n0.5,")
    with pytest.raises(SurfaceFormatError, match=r"line \d+"):
        load_surface(cut)


def test_version_mismatch(tmp_path):
    surf = sweep_conditional("wald", GridSpec(1.0, 2.0, 1.0), GridSpec(1.0, 2.0, 1.0), S95)
    text = surface_to_text(surf).replace("# surface-version 1", "# surface-version 9")
    (tmp_path / "v.txt").write_text(text)
    with pytest.raises(SurfaceVersionError):
        load_surface(tmp_path / "v.txt")


@pytest.mark.parametrize("mutate,needle", [
    (lambda t: t.replace("# estimator wald", "# estimator nope"), "unknown estimator"),
    (lambda t: t.replace("lambda1,lambda2", "l1,l2"), "CSV header"),
    (lambda t: t.replace(",1\n", ",x\n", 1), "malformed row"),
    (lambda t: t.replace("# grid2", "# gridX"), "grid2"),
])
def test_malformed_headers(mutate, needle):
    surf = sweep_conditional("wald", GridSpec(1.0, 2.0, 1.0), GridSpec(1.0, 2.0, 1.0), S95)
    with pytest.raises(SurfaceFormatError, match=needle):
        parse_surface(mutate(surface_to_text(surf)).splitlines())


def test_atomic_save_leaves_no_partial(tmp_path, monkeypatch):
    import poisratio.sweep as sw

    surf = sweep_conditional("wald", GridSpec(1.0, 2.0, 1.0), GridSpec(1.0, 2.0, 1.0), S95)

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(sw.os, "replace", boom)
    with pytest.raises(OSError):
        save_surface(surf, tmp_path / "x.txt")
    assert list(tmp_path.iterdir()) == []


def test_cache_errors_name_counts(monkeypatch):
    import poisratio.estimators as est

    def broken(counts, spec):
        if counts == (3.0, 2.0):
            raise NumericError("forced")
        return est.ci_wald(counts, spec)

    monkeypatch.setitem(est._DISPATCH, est.EstimatorKind.WALD, broken)
    with pytest.raises(NumericError, match=r"\(3\.0, 2\.0\)"):
        build_ci_cache("wald", S95, 4, 4)


def test_cost_is_roughly_linear():
    def timed(grid2):
        best = float("inf")
        for _ in range(3):
            t0 = time.perf_counter()
            sweep_conditional("ml_lr", GridSpec(20.0, 21.9, 0.1), grid2, S95)
            best = min(best, time.perf_counter() - t0)
        return best

    t1 = timed(GridSpec(20.0, 21.9, 0.1))
    t2 = timed(GridSpec(20.0, 23.9, 0.1))
    # twice the cells should cost about twice the time; allow a factor of 2 either way
    assert 1.0 <= t2 / t1 <= 4.0
