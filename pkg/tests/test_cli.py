import io

import pytest

from poisratio.cli import run
from poisratio.estimators import compute_ci


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), out=out, err=err)
    values = dict(line.split("=", 1) for line in out.getvalue().splitlines())
    return code, values, err.getvalue()


def test_ci_half_width():
    code, v, err = call("ci", "--estimator", "ml_lr", "--y1", "1", "--y2", "10", "--level", "0.95")
    assert code == 0
    assert round(float(v["upper"]) - 10, 1) == 173.4
    assert float(v["upper_hw"]) == float(v["upper"]) - 10
    assert "ml_lr" in err


def test_ci_zero_count_exit_3():
    code, v, err = call("ci", "--estimator", "wald", "--y1", "0", "--y2", "5", "--level", "0.95")
    assert code == 3
    assert v == {}
    assert "zero count" in err


def test_ci_offsets():
    code, v, _ = call("ci", "--estimator", "score", "--y1", "4", "--y2", "8", "--r1", "1", "--r2", "4")
    ci = compute_ci("score", (4, 8), 0.95)
    assert code == 0 and v["scale"] == "rate"
    assert float(v["lower"]) == pytest.approx(ci.lower / 4, rel=1e-15)


@pytest.mark.parametrize("argv", [
    ["ci", "--estimator", "wald", "--y1", "1", "--y2", "2", "--level", "1.5"],
    ["ci", "--estimator", "wald", "--y1", "-1", "--y2", "2"],
    ["ci", "--estimator", "bogus", "--y1", "1", "--y2", "2"],
    ["ci", "--estimator", "wald", "--y1", "1", "--y2", "2", "--r1", "2"],
    ["coverage", "--mode", "unconditional", "--estimator", "wald", "--lambda1", "1",
     "--lambda2", "1", "--gsd", "0.9"],
    ["sweep", "--mode", "conditional", "--estimator", "wald", "--grid1", "1,0.5,0.1",
     "--grid2", "1,2,0.5", "--out", "x"],
    ["sweep", "--mode", "conditional", "--estimator", "wald", "--grid1", "1,2,0.5",
     "--grid2", "1,2,0.5", "--out", "x", "--threads", "0"],
    ["render", "--in", "x", "--side", "lower", "--thresholds", "2,1.5", "--out", "y"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, v, err = call(*argv)
    assert code == 2
    assert v == {}
    assert list(tmp_path.iterdir()) == []


def test_coverage_conditional_score():
    code, v, _ = call("coverage", "--mode", "conditional", "--estimator", "score",
                      "--lambda1", "100", "--lambda2", "400", "--level", "0.999")
    alpha = float(v["alpha"])
    assert code == 0
    assert abs(float(v["alpha_l"]) / alpha - 0.63) <= 0.02
    assert abs(float(v["alpha_u"]) / alpha - 1.41) <= 0.02


def test_coverage_mc_prints_se():
    code, v, _ = call("coverage", "--mode", "mc", "--estimator", "wald", "--lambda1", "3",
                      "--lambda2", "7", "--sims", "5000", "--seed", "4")
    assert code == 0 and {"se_l", "se_u", "n_kept"} <= set(v)


def test_coverage_degenerate_exit_4():
    code, _, err = call("coverage", "--mode", "mc", "--estimator", "wald", "--lambda1", "1e-12",
                        "--lambda2", "1e-12", "--sims", "10")
    assert code == 4


def test_sweep_threads_do_not_change_output(tmp_path):
    outs = []
    for threads in ("1", "2"):
        p = tmp_path / f"s{threads}.txt"
        code, v, _ = call("sweep", "--mode", "unconditional", "--estimator", "score",
                          "--grid1", "0.5,3,0.5", "--grid2", "1,3,1", "--gsd", "1.2",
                          "--mix-points", "8", "--out", str(p), "--threads", threads)
        assert code == 0 and v["cells"] == "18"
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]


def test_render_and_table(tmp_path):
    surf = tmp_path / "s.txt"
    assert call("sweep", "--mode", "conditional", "--estimator", "wald", "--grid1", "1,3,1",
                "--grid2", "1,2,1", "--out", str(surf))[0] == 0
    code, v, _ = call("render", "--in", str(surf), "--side", "upper", "--thresholds",
                      "1.25,1.5,2,10", "--out", str(tmp_path / "s.ppm"),
                      "--table", str(tmp_path / "s.csv"))
    assert code == 0 and v["width"] == "3" and v["height"] == "2"
    assert (tmp_path / "s.ppm").read_bytes().startswith(b"P6\n3 2\n255\n")


def test_render_io_errors_exit_5(tmp_path):
    code, _, err = call("render", "--in", str(tmp_path / "missing.txt"), "--side", "lower",
                        "--out", str(tmp_path / "x.ppm"))
    assert code == 5
    bad = tmp_path / "bad.txt"
    bad.write_text("# surface-version 1\nnonsense\n")
    assert call("render", "--in", str(bad), "--side", "lower", "--out", str(tmp_path / "x.ppm"))[0] == 5


def test_halfwidth(tmp_path):
    out = tmp_path / "h.csv"
    code, v, _ = call("halfwidth", "--a", "ml_lr", "--b", "hirji_midp", "--side", "upper",
                      "--ymax", "10", "--level", "0.95", "--out", str(out))
    assert code == 0
    rows = out.read_text().splitlines()
    assert rows[1] == "y1,y2,ratio" and len(rows) == 102
    y1_10 = [r for r in rows if r.startswith("1,10,")][0]
    assert float(y1_10.split(",")[2]) == pytest.approx(0.83, abs=0.005)


def test_grid_presets_by_name():
    from poisratio.cli import build_parser
    from poisratio.sweep import HIGH_RANGE

    args = build_parser().parse_args(["sweep", "--mode", "conditional", "--estimator", "wald",
                                      "--grid1", "high", "--grid2", "1,2,0.5", "--out", "x"])
    assert args.grid1 == HIGH_RANGE


def test_coverage_unconditional_matches_library():
    from poisratio.coverage import MixingSpec, unconditional_risks

    code, v, _ = call("coverage", "--mode", "unconditional", "--estimator", "score", "--lambda1", "2",
                      "--lambda2", "5", "--gsd", "1.2", "--mix-points", "6")
    rp = unconditional_risks("score", (2, 5), 0.95, MixingSpec(1.2, 6))
    assert code == 0
    assert float(v["alpha_l"]) == rp.alpha_l and float(v["alpha_u"]) == rp.alpha_u
