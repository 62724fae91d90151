import math
from pathlib import Path

import numpy as np
import pytest

from mimosar import config as cfgmod
from mimosar.errors import ConfigError, LayoutError

DESK = Path(__file__).resolve().parents[1] / "configs" / "desk.ini"


@pytest.mark.parametrize("text,kind,value", [
    ("78.8 GHz", "frequency", 78.8e9),
    ("40 us", "time", 40e-6),
    ("30 cm", "length", 0.30),
    ("-10 mm", "length", -0.01),
    ("1.5e-3 m", "length", 1.5e-3),
    ("3e8 m/s", "speed", 3e8),
    ("180 deg", "angle", math.pi),
    (".5 rad", "angle", 0.5),
    ("20 dB", "ratio", 20.0),
])
def test_parse_quantity(text, kind, value):
    assert cfgmod.parse_quantity(text, kind) == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("text,kind", [
    ("30", "length"),           # bare number
    ("30 GHz", "length"),       # wrong dimension
    ("30 CM", "length"),        # unit names are case sensitive
    ("thirty cm", "length"),
    ("1 2 cm", "length"),
    ("", "time"),
])
def test_parse_quantity_strict(text, kind):
    with pytest.raises(ConfigError):
        cfgmod.parse_quantity(text, kind)


def test_quantity_list():
    assert cfgmod.parse_quantity_list("30 cm, 31 cm,32cm", "length") == pytest.approx([0.30, 0.31, 0.32])


def test_defaults_build():
    cfg = cfgmod.load_config()
    assert len(cfg.elements) == 86
    assert cfg.chirp.n_samples == 320
    assert cfg.chirp.c == 299792458.0
    assert cfg.errors is None and cfg.nonlinearity.is_ideal
    assert cfg.z_planes == [0.30]
    assert cfg.output == Path("out")


def test_desk_config():
    cfg = cfgmod.load_config(DESK)
    assert cfg.chirp.c == 3e8
    assert len(cfg.scan.x_positions) == 64
    assert cfg.scene.positions.shape == (2, 3)
    assert cfg.scene.reflectivity[1] == 0.5 + 0.2j
    assert cfg.errors is not None and len(cfg.errors.gains) == 86
    assert cfg.output == DESK.parent / "out"


def test_seeded_errors_reproducible():
    a = cfgmod.load_config(DESK)
    b = cfgmod.load_config(DESK)
    assert np.array_equal(a.errors.gains, b.errors.gains)
    c = cfgmod.load_config(DESK, ["run.seed=8"])
    assert not np.array_equal(a.errors.gains, c.errors.gains)
    assert cfgmod.config_hash(a) == cfgmod.config_hash(b) != cfgmod.config_hash(c)


def test_overrides():
    cfg = cfgmod.load_config(DESK, ["imaging.z_planes=29 cm, 30 cm", "imaging.algorithm=bp",
                                    "errors.nonlin_quadratic=2 rad", "errors.snr=30 dB",
                                    "chirp.n_samples=256", "run.workers=2"])
    assert cfg.z_planes == pytest.approx([0.29, 0.30])
    assert cfg.algorithm == "bp"
    assert not cfg.nonlinearity.is_ideal
    assert cfg.snr_db == 30.0
    assert cfg.chirp.n_samples == 256
    assert cfg.workers == 2
    assert cfgmod.load_config(DESK, output_override="/tmp/x").output == Path("/tmp/x")


@pytest.mark.parametrize("override", [
    "imaging.algorithm=stolt",
    "imaging.window=kaiser",
    "imaging.phase_mode=fuzzy",
    "imaging.z_planes=",
    "calibration.align=nearest",
    "calibration.weights=maybe",
    "errors.mode=gaussian",
    "errors.gain_min=3",
    "scan.x_step=1",
    "scan.x_count=two",
    "scan.x_stepp=1 mm",
    "scene.points=1 mm, 2 mm",
    "chirp.n_samples=400",
    "geometry.tdm_order=0-1",
    "nosuch.key=1",
    "missing_dot=1",
    "chirp.center",
])
def test_bad_overrides(override):
    with pytest.raises(ConfigError):
        cfgmod.load_config(DESK, [override])


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        cfgmod.load_config(tmp_path / "missing.ini")
    bad = tmp_path / "bad.ini"
    bad.write_text("[extra]\nx = 1\n")
    with pytest.raises(ConfigError):
        cfgmod.load_config(bad)
    bad.write_text("not an ini file")
    with pytest.raises(ConfigError):
        cfgmod.load_config(bad)
    bad.write_text("[geometry]\nlayout = nowhere.layout\n")
    with pytest.raises(ConfigError):
        cfgmod.load_config(bad)
    bad.write_text("[geometry]\nlayout = builtin:nope\n")
    with pytest.raises(LayoutError):
        cfgmod.load_config(bad)


def test_relative_paths(tmp_path):
    (tmp_path / "s.scene").write_text("0 0 0.3 1 0\n0.01 0 0.3 0 1\n")
    (tmp_path / "run.ini").write_text("[scene]\nfile = s.scene\n[geometry]\ntdm_order = 0:0, 0:1\n"
                                      "dedupe = no\n[run]\noutput = res\n")
    cfg = cfgmod.load_config(tmp_path / "run.ini")
    assert len(cfg.scene.reflectors) == 2
    assert len(cfg.elements) == 2
    assert cfg.output == tmp_path / "res"
