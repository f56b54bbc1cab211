import csv

import numpy as np
import pytest

from conftest import DEFAULT_CONFIG, ROOT
from nandmacro import cli
from nandmacro import experiments as ex
from nandmacro.config import parse_config
from nandmacro.coupling import CouplingCaps
from nandmacro.extraction import read_reference

SMALL = """
[array]
rows = 3
cols = 3
n_wl = 6
[bias]
sweep_step = 0.1
[solver]
gmin = 1e-15
"""


def small(extra=""):
    return parse_config(SMALL + extra)


def crossing(v, i, level):
    """Gate voltage where a monotone curve reaches ``level`` (log interpolation)."""
    return float(np.interp(np.log10(level), np.log10(i), v))


def read_csv(text):
    rows = [r for r in text.splitlines() if not r.startswith("#")]
    return list(csv.reader(rows))


@pytest.fixture(scope="module")
def fresh_single():
    return ex.cmd_single_wl(small(), 2)


def test_curve_csv_shape_and_metadata(fresh_single):
    text = fresh_single.to_text()
    rows = read_csv(text)
    assert rows[0][0] == "v" and len(rows[0]) == 9 + 1
    assert all(len(r) == 10 for r in rows)
    v = np.array([float(r[0]) for r in rows[1:]])
    assert np.all(np.diff(v) > 0)
    assert "# v_pass=5.0" in text
    assert "# experiment=single-wl" in text
    assert "# failed_points=0" in text


def test_symmetry_of_end_layers_with_mirrored_string():
    cfg = small("")
    mirrored = cfg.replace(bias=cfg.bias.__class__(**{**cfg.bias.__dict__, "v_bl": 0.0, "v_sl": 0.5}))
    front = ex.cmd_single_wl(cfg, 0).column(1, 1)
    # mirrored string: layer n-1 sits next to the biased end, so its current
    # flows the other way with the same magnitude
    back = -ex.cmd_single_wl(mirrored, cfg.n_wl - 1).column(1, 1)
    # 1e-17 A is the rounding floor of KCL residuals on deep-off strings
    assert np.allclose(front, back, rtol=1e-6, atol=1e-17)


def test_end_layer_next_to_bit_line_is_source_degenerated():
    cfg = small()
    a = ex.cmd_single_wl(cfg, 0)
    b = ex.cmd_single_wl(cfg, cfg.n_wl - 1)
    ia, ib = a.column(1, 1), b.column(1, 1)
    # the layer next to the BL sees its source lifted by the pass cells below it
    on = a.v >= 0.6
    assert np.all(ia[on] <= ib[on] * (1 + 1e-9))
    assert (ib / ia).max() > 1.5
    sub = a.v <= 0.4
    assert np.allclose(ia[sub], ib[sub], rtol=1e-3)
    assert ia[-1] == pytest.approx(ib[-1], rel=1e-9)


def test_programmed_cell_shifts_curve(fresh_single):
    prog = ex.cmd_single_wl(small("[[states]]\nrow = 1\ncol = 1\nlayer = 2\ndelta_vt = 1.0\n"), 2)
    v = fresh_single.v
    step = 0.1
    for level in (1e-12, 1e-10, 1e-8, 1e-7):
        shift = crossing(v, prog.column(1, 1), level) - crossing(v, fresh_single.column(1, 1), level)
        assert abs(shift - 1.0) < 2 * step
    # the other strings are untouched
    assert np.array_equal(prog.column(0, 0), fresh_single.column(0, 0))


def test_multi_wl_dominates_single_wl_below_pass_voltage(fresh_single):
    multi = ex.cmd_multi_wl(small())
    i_m, i_s = multi.column(1, 1), fresh_single.column(1, 1)
    below = multi.v <= 5.0
    assert np.all(i_m[below] <= i_s[below] * (1 + 1e-9))
    assert np.all(np.diff(i_m) >= 0)
    assert "# probed_wl=all" in multi.to_text()


def test_multi_wl_uniform_shift():
    fresh = ex.cmd_multi_wl(small())
    states = "".join(
        f"[[states]]\nrow = {r}\ncol = {c}\nlayer = {l}\ndelta_vt = 1.0\n"
        for r in range(3) for c in range(3) for l in range(6)
    )
    prog = ex.cmd_multi_wl(small(states))
    for level in (1e-12, 1e-10, 1e-8):
        shift = crossing(fresh.v, prog.column(1, 1), level) - crossing(fresh.v, fresh.column(1, 1), level)
        assert shift == pytest.approx(1.0, abs=0.02)


def test_single_wl_rejects_bad_layer():
    with pytest.raises(ex.DomainError):
        ex.cmd_single_wl(small(), 6)


# -- disturb ---------------------------------------------------------------------

DISTURB = "[disturb]\nsteps = 100\n"


def test_disturb_zero_coupling_gives_zero_excursion():
    cfg = small(DISTURB + "[array.coupling]\nc_v = 0.0\nc_h = 0.0\nc_s = 0.0\nc_d = 0.0\n")
    res = ex.cmd_disturb(cfg)
    assert res.excursions
    for node in res.excursions:
        assert res.peak(node) < 1e-12


def test_disturb_matches_divider_in_all_off_regime():
    res = ex.cmd_disturb(small(DISTURB))
    for node, predicted in res.predicted_ratio.items():
        assert res.ratio(node) == pytest.approx(predicted, rel=0.05)


def test_vertical_only_divider_is_cv_over_total():
    spec = small(DISTURB).array_spec()
    caps = spec.coupling
    victim = (1, 1, 2)
    total = 2 * caps.c_v + 4 * caps.c_h + 8 * caps.c_s + 4 * caps.c_d
    expected = (caps.c_v + 4 * caps.c_s) / total
    assert ex.divider_prediction(spec, victim, 3) == pytest.approx(expected, rel=1e-12)
    only_v = spec.__class__(**{**spec.__dict__, "coupling": CouplingCaps(c_v=caps.c_v)})
    assert ex.divider_prediction(only_v, victim, 3) == pytest.approx(0.5, rel=1e-12)


def test_doubling_cv_increases_excursion():
    base = small(DISTURB)
    cv = base.coupling().c_v
    ratios = []
    for scale in (1.0, 2.0, 4.0):
        res = ex.cmd_disturb(small(DISTURB + f"[array.coupling]\nc_v = {scale * cv!r}\n"))
        ratios.append(res.ratio(next(iter(res.excursions))))
    assert ratios[0] < ratios[1] < ratios[2]


def test_disturb_csv(tmp_path):
    res = ex.cmd_disturb(small(DISTURB))
    path = tmp_path / "d.csv"
    res.write(path)
    rows = read_csv(path.read_text())
    assert rows[0][:2] == ["t", "v_ramp"]
    assert len(rows) == 1 + 101


# -- file commands ----------------------------------------------------------------


def test_export_netlist_twice_identical(tmp_path):
    cfg = parse_config("")
    a, b = tmp_path / "a.cir", tmp_path / "b.cir"
    ex.cmd_export_netlist(cfg, a)
    ex.cmd_export_netlist(cfg, b)
    assert a.read_bytes() == b.read_bytes()


def test_extract_caps_on_shipped_sample():
    m = ex.cmd_extract_caps(ROOT / "data" / "series_caps.net")
    assert -m["A", "B"] == 1e-15
    assert m["A", "A"] == 1e-15


def test_fit_round_trip_from_single_wl_curve(tmp_path):
    cfg = small("[fit]\nrestarts = 2\n[fit.initial]\nvt0 = 1.15\nk = 4.2e-4\nn = 1.6\n")
    curve = ex.cmd_single_wl(cfg, 2)
    path = tmp_path / "ref.csv"
    curve.write(path)
    ref = read_reference(path)
    assert ref.probed_wl == 2 and ref.v_pass == 5.0
    report, _ = ex.cmd_fit(cfg, path, tmp_path / "fit.csv")
    assert abs(report.params.vt0 - cfg.cell.vt0) < 5e-3
    assert report.params.k == pytest.approx(cfg.cell.k, rel=0.02)
    assert (tmp_path / "fit.csv").read_text().startswith("# fit summary")


# -- CLI ---------------------------------------------------------------------------


def test_cli_single_wl_writes_csv(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(SMALL)
    out = tmp_path / "o.csv"
    assert cli.main(["single-wl", "-c", str(cfg), "-l", "1", "-o", str(out)]) == cli.EXIT_OK
    assert out.read_text().count("\n") > 50


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[array]\nrows = -1\n")
    assert cli.main(["multi-wl", "-c", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["extract-caps", str(tmp_path / "nope.net")]) == cli.EXIT_IO
    junk = tmp_path / "junk.net"
    junk.write_text("A B\n")
    assert cli.main(["extract-caps", str(junk)]) == cli.EXIT_INPUT
    assert cli.main(["single-wl", "-l", "42"]) == cli.EXIT_INPUT
    with pytest.raises(SystemExit) as info:
        cli.main(["no-such-command"])
    assert info.value.code == 2


def test_cli_reports_unconverged_sweep(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(SMALL + "max_newton_iters = 1\nsource_steps = 1\n")
    out = tmp_path / "o.csv"
    assert cli.main(["single-wl", "-c", str(cfg), "-l", "1", "-o", str(out)]) == cli.EXIT_SOLVER
    assert "failed_points=" in out.read_text()


def test_cli_extract_and_export_to_stdout(capsys):
    assert cli.main(["extract-caps", str(ROOT / "data" / "series_caps.net")]) == 0
    assert "A,1.000000e-15,-1.000000e-15" in capsys.readouterr().out
    assert cli.main(["export-netlist", "-c", str(DEFAULT_CONFIG)]) == 0
    assert capsys.readouterr().out.endswith(".END\n")


def test_cli_synth_reference(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(SMALL)
    out = tmp_path / "r.csv"
    assert cli.main(["synth-reference", "-c", str(cfg), "-l", "2", "--noise", "0.03", "-o", str(out)]) == 0
    ref = read_reference(out)
    assert ref.probed_wl == 2 and len(ref.v_wl) == 51
