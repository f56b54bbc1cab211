import dataclasses

import pytest

from conftest import DEFAULT_CONFIG
from nandmacro.array import ArraySpec
from nandmacro.config import RunConfig, load_config, parse_config
from nandmacro.coupling import ArrayPitch, estimate_coupling_caps
from nandmacro.device import DeviceGeometry, DeviceModelParams
from nandmacro.errors import ConfigError
from nandmacro.mna import SolveOptions


def test_empty_config_is_the_documented_default():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert (cfg.rows, cfg.cols, cfg.n_wl) == (3, 3, 10)
    assert cfg.bias.v_pass == 5.0
    assert cfg.geometry == DeviceGeometry()


def test_shipped_default_matches_builtin_defaults_except_gmin(shipped_config):
    assert shipped_config.replace(solver=SolveOptions()) == RunConfig()
    assert shipped_config.solver.gmin == 1e-15


def test_geometry_section_values():
    g = DeviceGeometry()
    assert g.core_filler_diameter == 35e-9
    assert g.tunnel_oxide_thickness == 4e-9 and g.blocking_oxide_thickness == 4e-9
    assert g.wl_length == 50e-9 and g.spacer_thickness == 50e-9
    assert g.wl_thickness == 40e-9 and g.channel_thickness == 10e-9
    assert g.body_doping == 1e15 and g.drain_doping == 5e19 and g.source_doping == 5e19
    assert g.wl_workfunction == 4.8


def test_overrides_propagate():
    cfg = parse_config(
        """
        [device]
        wl_length = 60e-9
        [device.cell]
        vt0 = 1.3
        [array]
        rows = 2
        n_wl = 4
        pitch_x = 120e-9
        [array.coupling]
        c_v = 1e-17
        [bias]
        v_bl = 0.2
        sweep_step = 0.1
        [solver]
        reltol = 1e-7
        workers = 2
        [[states]]
        row = 1
        col = 0
        layer = 3
        delta_vt = 1
        """
    )
    assert cfg.cell.vt0 == 1.3 and cfg.cell.l == 60e-9
    assert cfg.bsl.l == 60e-9
    spec = cfg.array_spec()
    assert isinstance(spec, ArraySpec) and (spec.rows, spec.cols, spec.n_wl) == (2, 3, 4)
    est = estimate_coupling_caps(cfg.geometry, ArrayPitch(120e-9, 100e-9))
    assert spec.coupling.c_v == 1e-17 and spec.coupling.c_h == est.c_h
    assert cfg.bias.v_bl == 0.2 and cfg.solver.reltol == 1e-7 and cfg.workers == 2
    assert cfg.cell_states()[1, 0, 3] == 1.0


def test_default_cell_width_follows_geometry():
    cfg = parse_config("[device]\ncore_filler_diameter = 45e-9\n")
    assert cfg.cell.w == DeviceModelParams.from_geometry(cfg.geometry).w
    assert cfg.cell.w > DeviceModelParams().w


@pytest.mark.parametrize(
    "text",
    [
        "bogus = 1\n",
        "[device]\nfoo = 1\n",
        "[device.cell]\nvt = 1\n",
        "[array]\nrows = 0\n",
        "[array]\nrows = 2.5\n",
        "[array]\nneglect_cd = 1\n",
        "[array]\npitch_x = 80e-9\n",
        "[array.coupling]\nc_x = 1e-18\n",
        "[array.coupling]\nc_v = -1e-18\n",
        "[bias]\nsweep_step = 0\n",
        "[bias]\nv_bl = 'high'\n",
        "[solver]\nmax_newton_iters = 1.5\n",
        "[solver]\ngmin = 0\n",
        "[solver]\nworkers = 0\n",
        "[[states]]\nrow = 0\ncol = 0\nlayer = 0\n",
        "[[states]]\nrow = 0\ncol = 0\nlayer = 99\ndelta_vt = 1\n",
        "[[states]]\nrow = 0\ncol = 0\nlayer = 0\ndelta_vt = 1\nextra = 2\n",
        "[disturb]\nsteps = 0\n",
        "[fit]\ninitial = {vt1 = 1}\n",
        "[fit.bounds]\nvt0 = [1]\n",
        "not toml [",
    ],
)
def test_invalid_config_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_fit_section():
    cfg = parse_config("[fit]\nseed = 4\n[fit.initial]\nvt0 = 1.1\n[fit.bounds]\nk = [1e-5, 1e-3]\n")
    assert cfg.fit.seed == 4
    assert cfg.fit.initial == {"vt0": 1.1}
    assert cfg.fit.bounds == {"k": (1e-5, 1e-3)}


def test_integers_accepted_for_float_fields():
    cfg = parse_config("[bias]\nv_pass = 6\n")
    assert cfg.bias.v_pass == 6.0 and isinstance(cfg.bias.v_pass, float)


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_shipped_file_lists_every_section_key():
    text = DEFAULT_CONFIG.read_text(encoding="utf-8")
    for f in dataclasses.fields(DeviceGeometry):
        assert f"{f.name} =" in text
