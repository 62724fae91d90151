"""Run configuration: an INI file with explicit unit suffixes.

Quantities are written as ``<number> <unit>`` (``78.8 GHz``, ``40 us``,
``0.95 mm``); a bare number is rejected wherever a unit is expected.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import (ApertureScan, builtin_layout, dedupe_elements, read_layout,
                       scan_positions, virtual_elements)
from .wavesim import ChannelError, ChirpConfig, NonlinearityModel, Scene, read_scene

UNITS = {
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9},
    "length": {"m": 1.0, "cm": 1e-2, "mm": 1e-3, "um": 1e-6},
    "angle": {"rad": 1.0, "deg": math.pi / 180},
    "speed": {"m/s": 1.0},
    "ratio": {"dB": 1.0},
}
_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z/]+)\s*$")


def parse_quantity(text, kind):
    """Value in SI base units of a ``number unit`` string."""
    m = _QUANTITY.match(str(text))
    if not m:
        raise ConfigError(f"expected '<number> <unit>' for a {kind}, got {text!r}")
    value, unit = m.groups()
    table = UNITS[kind]
    if unit not in table:
        raise ConfigError(f"unit {unit!r} is not a {kind} unit (use one of {', '.join(table)})")
    return float(value) * table[unit]


def parse_quantity_list(text, kind):
    return [parse_quantity(part, kind) for part in str(text).split(",") if part.strip()]


DEFAULTS = {
    "chirp": {"center": "78.8 GHz", "bandwidth": "3.5997 GHz", "duration": "40 us",
              "sample_rate": "8 MHz", "c": "299792458 m/s"},
    "geometry": {"layout": "builtin:tidep-01012", "tdm_order": "full", "dedupe": "yes",
                 "dedupe_axis": "y"},
    "scan": {"x_count": "1", "x_step": "1 mm", "y_count": "1"},
    "scene": {},
    "errors": {"mode": "none", "gain_min": "0.5", "gain_max": "2", "range_max": "0 m",
               "nonlin_quadratic": "0 rad", "snr": "none"},
    "calibration": {"reflector_x": "0 m", "reflector_y": "0 m", "reflector_z": "8.95 m",
                    "reference": "0", "align": "fractional", "weights": "yes"},
    "imaging": {"z_planes": "30 cm", "algorithm": "rma", "window": "rect", "bin_window": "0",
                "phase_mode": "approx"},
    "run": {"seed": "0", "output": "out"},
}

# keys that may appear without a default
OPTIONAL = {
    "chirp": {"f0", "n_samples"},
    "geometry": {"dedupe_tol"},
    "scan": {"y_step"},
    "scene": {"file", "points"},
    "imaging": {"n_fft"},
    "run": {"workers"},
}


@dataclass
class RunConfig:
    chirp: ChirpConfig
    layout_name: str
    elements: list
    scan: ApertureScan
    scene: Scene
    calibration_scene: Scene
    errors: ChannelError | None
    nonlinearity: NonlinearityModel
    snr_db: float | None
    reflector: tuple[float, float, float]
    reference: int
    align_mode: str
    use_weights: bool
    z_planes: list
    algorithm: str
    window: str
    n_fft: int | None
    bin_window: int
    exact_phase: bool
    seed: int
    workers: int | None
    output: Path
    source: dict = field(default_factory=dict)


def _bool(text):
    t = str(text).strip().lower()
    if t in ("yes", "true", "on", "1"):
        return True
    if t in ("no", "false", "off", "0"):
        return False
    raise ConfigError(f"expected yes/no, got {text!r}")


def _int(text, what):
    try:
        return int(str(text).strip())
    except ValueError:
        raise ConfigError(f"{what} must be an integer, got {text!r}") from None


def _float(text, what):
    try:
        return float(str(text).strip())
    except ValueError:
        raise ConfigError(f"{what} must be a number, got {text!r}") from None


def load_parser(path=None, overrides=()):
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_dict(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    unknown = set(cp.sections()) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, option = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        if not cp.has_section(section):
            raise ConfigError(f"override {item!r} names an unknown section")
        cp.set(section, option, value.strip())
    for section in cp.sections():
        allowed = set(DEFAULTS[section]) | OPTIONAL.get(section, set())
        extra = set(cp[section]) - allowed
        if extra:
            raise ConfigError(f"unknown option(s) in [{section}]: {', '.join(sorted(extra))}")
    return cp


def _tdm_order(text, layout):
    if text.strip() == "full":
        return layout.full_tdm_order()
    pairs = []
    for tok in text.replace(";", ",").split(","):
        tok = tok.strip()
        if not tok:
            continue
        t, colon, r = tok.partition(":")
        if not colon:
            raise ConfigError(f"TDM pair {tok!r} must be written tx:rx")
        pairs.append((_int(t, "tx index"), _int(r, "rx index")))
    return pairs


def _resolve(base, p):
    p = Path(p)
    return p if p.is_absolute() or base is None else base / p


def build_config(cp: configparser.ConfigParser, base_dir=None, output_override=None) -> RunConfig:
    ch = cp["chirp"]
    c = parse_quantity(ch["c"], "speed")
    fs = parse_quantity(ch["sample_rate"], "frequency")
    T = parse_quantity(ch["duration"], "time")
    b = parse_quantity(ch["bandwidth"], "frequency")
    n = _int(ch["n_samples"], "n_samples") if "n_samples" in ch else None
    if "f0" in ch:
        if n is None:
            n = int(math.floor(fs * T * (1 + 1e-12)))
        chirp = ChirpConfig(parse_quantity(ch["f0"], "frequency"), b, T, fs, n, c)
    else:
        chirp = ChirpConfig.from_center(parse_quantity(ch["center"], "frequency"), b, T, fs, n, c)

    geo = cp["geometry"]
    lay = geo["layout"].strip()
    if lay.startswith("builtin:"):
        layout = builtin_layout(lay.split(":", 1)[1])
    else:
        lp = _resolve(base_dir, lay)
        if not lp.is_file():
            raise ConfigError(f"layout file {lp} not found")
        layout = read_layout(lp)
    elements = virtual_elements(layout, _tdm_order(geo["tdm_order"], layout))
    if _bool(geo["dedupe"]):
        tol = parse_quantity(geo["dedupe_tol"], "length") if "dedupe_tol" in geo else chirp.wavelength / 100
        axis = geo["dedupe_axis"].strip()
        elements = dedupe_elements(elements, tol, None if axis in ("", "none", "xy") else axis)

    sc = cp["scan"]
    x_count = _int(sc["x_count"], "x_count")
    y_count = _int(sc["y_count"], "y_count")
    x_step = parse_quantity(sc["x_step"], "length")
    y_step = parse_quantity(sc["y_step"], "length") if "y_step" in sc else None
    scan = scan_positions(x_count, x_step, y_count, y_step)

    scene = Scene()
    sc_sec = cp["scene"]
    if "file" in sc_sec:
        sp = _resolve(base_dir, sc_sec["file"])
        if not sp.is_file():
            raise ConfigError(f"scene file {sp} not found")
        scene = read_scene(sp)
    if "points" in sc_sec:
        for tok in sc_sec["points"].split(";"):
            if tok.strip():
                vals = [v.strip() for v in tok.split(",")]
                if len(vals) not in (3, 5):
                    raise ConfigError(f"scene point {tok!r} needs 'x, y, z[, re, im]'")
                x, y, z = (parse_quantity(v, "length") for v in vals[:3])
                p = complex(_float(vals[3], "re"), _float(vals[4], "im")) if len(vals) == 5 else 1.0
                scene = scene + Scene.point(x, y, z, p)

    cal = cp["calibration"]
    reflector = tuple(parse_quantity(cal[f"reflector_{a}"], "length") for a in "xyz")
    align = cal["align"].strip()
    if align not in ("integer", "fractional"):
        raise ConfigError(f"calibration.align must be integer or fractional, got {align!r}")

    err = cp["errors"]
    mode = err["mode"].strip()
    seed = _int(cp["run"]["seed"], "seed")
    errors = None
    n_chan = len(elements) * y_count
    if mode == "random":
        rng = np.random.default_rng(seed)
        gmin, gmax = _float(err["gain_min"], "gain_min"), _float(err["gain_max"], "gain_max")
        if not 0 < gmin <= gmax:
            raise ConfigError("errors.gain_min/gain_max must satisfy 0 < min <= max")
        errors = ChannelError.random(n_chan, rng, (gmin, gmax), parse_quantity(err["range_max"], "length"))
    elif mode != "none":
        raise ConfigError(f"errors.mode must be none or random, got {mode!r}")
    quad = parse_quantity(err["nonlin_quadratic"], "angle")
    nonlin = NonlinearityModel([[0.0, 0.0, quad]]) if quad else NonlinearityModel.zero()
    snr = err["snr"].strip()
    snr_db = None if snr in ("none", "") else parse_quantity(snr, "ratio")

    img = cp["imaging"]
    z_planes = parse_quantity_list(img["z_planes"], "length")
    if not z_planes:
        raise ConfigError("imaging.z_planes is empty")
    algorithm = img["algorithm"].strip()
    if algorithm not in ("rma", "bp"):
        raise ConfigError(f"imaging.algorithm must be rma or bp, got {algorithm!r}")
    window = img["window"].strip()
    if window not in ("rect", "hann", "taylor"):
        raise ConfigError(f"imaging.window must be rect, hann or taylor, got {window!r}")
    n_fft = _int(img["n_fft"], "n_fft") if "n_fft" in img else None
    phase_mode = img["phase_mode"].strip()
    if phase_mode not in ("approx", "exact"):
        raise ConfigError(f"imaging.phase_mode must be approx or exact, got {phase_mode!r}")

    run = cp["run"]
    workers = _int(run["workers"], "workers") if "workers" in run else None
    output = Path(output_override) if output_override else _resolve(base_dir, run["output"])

    return RunConfig(
        chirp=chirp, layout_name=layout.name, elements=elements, scan=scan, scene=scene,
        calibration_scene=Scene.point(*reflector), errors=errors, nonlinearity=nonlin,
        snr_db=snr_db, reflector=reflector, reference=_int(cal["reference"], "reference"),
        align_mode=align, use_weights=_bool(cal["weights"]), z_planes=z_planes,
        algorithm=algorithm, window=window, n_fft=n_fft,
        bin_window=_int(img["bin_window"], "bin_window"), exact_phase=phase_mode == "exact",
        seed=seed, workers=workers, output=output,
        source={s: dict(cp[s]) for s in cp.sections()},
    )


def load_config(path=None, overrides=(), output_override=None) -> RunConfig:
    cp = load_parser(path, overrides)
    base = Path(path).parent if path is not None else None
    return build_config(cp, base, output_override)


def config_hash(cfg: RunConfig):
    return hashlib.sha256(json.dumps(cfg.source, sort_keys=True).encode()).hexdigest()[:16]
