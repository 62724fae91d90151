"""Command-line front end.

Every subcommand reads the same run-config file; ``--set section.key=value``
overrides single keys. Output goes to ``--output``, else to
``$MIMOSAR_OUTPUT_DIR``, else to ``[run] output`` of the config.

Exit codes: 0 ok, 2 configuration or input error, 3 calibration failure,
4 analysis failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import calib, fileio, imaging, rangeproc, render, wavesim
from .config import RunConfig, config_hash, load_config
from .errors import AlignmentError, CalibrationError, MetricError, MimoSarError
from .rangeproc import RangeProfileSet
from .wavesim import DataCube, Stage

EXIT_OK, EXIT_CONFIG, EXIT_CALIBRATION, EXIT_ANALYSIS = 0, 2, 3, 4
OUTPUT_ENV = "MIMOSAR_OUTPUT_DIR"


# -- pipeline steps shared by the subcommands ---------------------------------

def simulate_cube(cfg: RunConfig, target="scene") -> DataCube:
    scene = cfg.calibration_scene if target == "calibration" else cfg.scene
    cube = wavesim.simulate_beat(scene, cfg.elements, cfg.scan, cfg.chirp, workers=cfg.workers)
    if cfg.errors is not None:
        cube = wavesim.inject_channel_errors(cube, cfg.errors)
    cube = wavesim.inject_nonlinearity(cube, cfg.nonlinearity)
    if cfg.snr_db is not None:
        # independent, reproducible noise per target
        cube = wavesim.add_noise(cube, cfg.snr_db, [cfg.seed, 1 if target == "calibration" else 2])
    return cube


def prepare(cube: DataCube, cfg: RunConfig) -> DataCube:
    """Undo the known chirp non-linearity of a raw cube."""
    if cube.stage == Stage.RAW and not cfg.nonlinearity.is_ideal:
        return rangeproc.compensate_nonlinearity(cube, cfg.nonlinearity)
    return cube


def calibrate_cube(cube: DataCube, cfg: RunConfig) -> calib.CalibrationProfile:
    profile = calib.calibrate(prepare(cube, cfg), cfg.reference, cfg.align_mode, cfg.reflector,
                              cfg.n_fft, weights=cfg.use_weights)
    meta = dict(profile.metadata, config_hash=config_hash(cfg))
    return calib.CalibrationProfile(profile.gain, profile.phase, profile.shifts, profile.n_fft,
                                    profile.reference, profile.weights, profile.reflector,
                                    profile.k_c, meta)


def reconstruct_cube(cube: DataCube, cfg: RunConfig, profile=None) -> imaging.ImageVolume:
    cube = prepare(cube, cfg)
    if profile is not None:
        cube = calib.apply_calibration(cube, profile, cfg.use_weights)
    return imaging.reconstruct(cube, cfg.z_planes, cfg.algorithm, cfg.window, cfg.n_fft,
                               cfg.exact_phase, cfg.bin_window, workers=cfg.workers)


def render_volume(vol: imaging.ImageVolume, out_dir: Path, stem="plane", dynamic_range=40.0):
    written = []
    for i, z in enumerate(vol.z_planes):
        base = out_dir / f"{stem}_{i:03d}"
        written += render.write_image(base, vol.data[i], dynamic_range)
        cuts = base.with_name(base.name + "_cuts.csv")
        render.write_cuts(cuts, vol.data[i], vol.x_axis, vol.y_axis)
        written.append(cuts)
    return written


def render_profiles(prof: RangeProfileSet, out_dir: Path, stem="range", azimuth=None,
                    dynamic_range=40.0):
    if azimuth is None:
        azimuth = int(np.argmin(np.abs(np.asarray(prof.scan.x_positions))))
    half = prof.profiles[:, :, azimuth]
    written = render.write_image(out_dir / f"{stem}_image", half.T, dynamic_range)
    db = render.magnitude_db(half, 120.0)
    table = out_dir / f"{stem}_profiles.csv"
    header = ["range_m"] + [f"ch{c}_db" for c in range(prof.n_channels)]
    render.write_table(table, header, ([r, *row] for r, row in zip(prof.ranges, db)))
    return written + [table]


# -- subcommands ----------------------------------------------------------

def _out_dir(args, cfg):
    d = Path(args.output) if args.output else Path(os.environ[OUTPUT_ENV]) if os.environ.get(OUTPUT_ENV) \
        else cfg.output
    d.mkdir(parents=True, exist_ok=True)
    return d


def _target_path(args, out_dir, default):
    return Path(args.out) if getattr(args, "out", None) else out_dir / default


def cmd_simulate(args, cfg):
    out_dir = _out_dir(args, cfg)
    cube = simulate_cube(cfg, args.target)
    path = _target_path(args, out_dir, f"{args.target}.cube")
    fileio.write_cube(path, cube)
    return {"cube": str(path), "dims": list(cube.shape), "stage": cube.stage.tag,
            "reflectors": len(cfg.calibration_scene if args.target == "calibration" else cfg.scene)}


def cmd_calibrate(args, cfg):
    out_dir = _out_dir(args, cfg)
    cube = fileio.read_cube(args.cube, chirp=cfg.chirp)
    profile = calibrate_cube(cube, cfg)
    path = _target_path(args, out_dir, "calibration.profile")
    calib.write_profile(path, profile)
    return {"profile": str(path), "channels": profile.n_channels,
            "max_shift_bins": float(np.max(np.abs(profile.shifts)))}


def cmd_apply_cal(args, cfg):
    out_dir = _out_dir(args, cfg)
    data = fileio.read_any(args.data)
    profile = calib.read_profile(args.profile)
    if isinstance(data, DataCube):
        out = calib.apply_calibration(prepare(data, cfg), profile, cfg.use_weights)
        path = _target_path(args, out_dir, Path(args.data).stem + ".cal.cube")
        fileio.write_cube(path, out)
    else:
        out = calib.apply_calibration(data, profile, cfg.use_weights)
        path = _target_path(args, out_dir, Path(args.data).stem + ".cal.prof")
        fileio.write_profiles(path, out)
    return {"output": str(path), "stage": out.stage.tag}


def cmd_range_compress(args, cfg):
    out_dir = _out_dir(args, cfg)
    cube = prepare(fileio.read_cube(args.cube), cfg)
    prof = rangeproc.range_compress(cube, cfg.n_fft, cfg.window)
    path = _target_path(args, out_dir, Path(args.cube).stem + ".prof")
    fileio.write_profiles(path, prof)
    files = render_profiles(prof, out_dir, Path(args.cube).stem)
    return {"profiles": str(path), "n_fft": prof.n_fft, "bin_spacing_m": prof.bin_spacing,
            "files": [str(f) for f in files]}


def cmd_align(args, cfg):
    out_dir = _out_dir(args, cfg)
    data = fileio.read_any(args.data)
    if isinstance(data, DataCube):
        data = rangeproc.range_compress(prepare(data, cfg), cfg.n_fft, cfg.window)
    aligned, report = rangeproc.range_align(data, cfg.reference, cfg.align_mode)
    stem = Path(args.data).stem
    path = _target_path(args, out_dir, stem + ".aligned.prof")
    fileio.write_profiles(path, aligned)
    table = out_dir / f"{stem}_alignment.csv"
    render.write_table(table, ["channel", "shift_bins", "shift_m"],
                       ([c, s, m] for c, (s, m) in enumerate(zip(report.shifts, report.shifts_m))))
    return {"profiles": str(path), "shifts": str(table), "reference": report.reference}


def cmd_reconstruct(args, cfg):
    out_dir = _out_dir(args, cfg)
    cube = fileio.read_cube(args.cube, chirp=cfg.chirp)
    profile = calib.read_profile(args.profile) if args.profile else None
    vol = reconstruct_cube(cube, cfg, profile)
    path = _target_path(args, out_dir, "volume.vol")
    fileio.write_volume(path, vol)
    files = render_volume(vol, out_dir)
    iz, iy, ix = vol.peak()
    return {"volume": str(path), "dims": list(vol.shape),
            "peak": [float(vol.x_axis[ix]), float(vol.y_axis[iy]), float(vol.z_planes[iz])],
            "files": [str(f) for f in files]}


def analyze_ipr(data, cfg, out_dir, channel=0, azimuth=None):
    if isinstance(data, imaging.ImageVolume):
        iz = int(data.peak()[0])
        plane = data.data[iz]
        m = imaging.ipr_metrics(plane, axes=[data.y_axis, data.x_axis])
        render.write_cuts(out_dir / "ipr_cuts.csv", plane, data.x_axis, data.y_axis)
        result = {"kind": "cross-range", "z": float(data.z_planes[iz]),
                  "peak_y": m.peak_location[0], "peak_x": m.peak_location[1],
                  "width_y_m": m.widths[0], "width_x_m": m.widths[1]}
    else:
        if isinstance(data, DataCube):
            data = rangeproc.range_compress(prepare(data, cfg), cfg.n_fft, "rect")
        if azimuth is None:
            azimuth = int(np.argmin(np.abs(np.asarray(data.scan.x_positions))))
        cut = data.profiles[:, channel, azimuth]
        m = imaging.ipr_metrics(cut, axes=[data.ranges])
        render.write_table(out_dir / "ipr_range_cut.csv", ["range_m", "magnitude_db"],
                           zip(data.ranges, render.magnitude_db(cut, 120.0)))
        result = {"kind": "range", "peak_range_m": m.peak_location[0], "width_m": m.widths[0]}
    result.update(pslr_db=m.pslr_db, islr_db=m.islr_db)
    render.write_table(out_dir / "ipr_metrics.csv", ["metric", "value"], sorted(result.items()))
    return result


def analyze_spectrogram(cube, out_dir, channel, azimuth, window_len):
    t, f, mag = rangeproc.spectrogram(cube, channel, azimuth, window_len)
    if not np.any(mag):
        raise MetricError("beat signal is zero")
    db = render.magnitude_db(mag, 120.0)
    render.write_table(out_dir / "spectrogram.csv", ["time_s", "freq_hz", "magnitude_db"],
                       ((t[i], f[j], db[i, j]) for i in range(t.size) for j in range(f.size)))
    ridge = rangeproc.ridge(mag) * (f[1] - f[0])
    render.write_table(out_dir / "spectrogram_ridge.csv", ["time_s", "ridge_freq_hz"], zip(t, ridge))
    render.write_image(out_dir / "spectrogram", db.T, 60.0)
    slope, curvature = np.polyfit(t, ridge, 2)[1::-1] if t.size >= 3 else (0.0, 0.0)
    return {"frames": int(t.size), "ridge_slope_hz_per_s": float(slope),
            "ridge_curvature_hz_per_s2": float(curvature),
            "ridge_span_hz": float(np.ptp(ridge))}


def analyze_spectrum(cube, out_dir, channel, azimuth):
    f, mag = rangeproc.power_spectrum(cube, channel, azimuth)
    if not np.any(mag):
        raise MetricError("beat signal is zero")
    db = render.magnitude_db(mag, 120.0)
    render.write_table(out_dir / "spectrum.csv", ["freq_hz", "magnitude_db"], zip(f, db))
    return {"peak_freq_hz": float(f[int(np.argmax(mag))])}


def cmd_analyze(args, cfg):
    out_dir = _out_dir(args, cfg)
    with open(args.data, "rb") as fh:
        magic = fh.read(8)
    data = fileio.read_volume(args.data) if magic == fileio.VOLUME_MAGIC else fileio.read_any(args.data)
    if args.what == "ipr":
        return analyze_ipr(data, cfg, out_dir, args.channel, args.azimuth)
    if not isinstance(data, DataCube):
        raise MetricError(f"{args.what} needs a fast-time cube")
    az = args.azimuth if args.azimuth is not None else int(np.argmin(np.abs(np.asarray(data.scan.x_positions))))
    if args.what == "spectrogram":
        return analyze_spectrogram(data, out_dir, args.channel, az, args.window_len)
    return analyze_spectrum(data, out_dir, args.channel, az)


def cmd_render(args, cfg):
    out_dir = _out_dir(args, cfg)
    with open(args.data, "rb") as fh:
        magic = fh.read(8)
    stem = Path(args.data).stem
    if magic == fileio.VOLUME_MAGIC:
        files = render_volume(fileio.read_volume(args.data), out_dir, stem, args.dynamic_range)
    else:
        data = fileio.read_any(args.data)
        if isinstance(data, DataCube):
            data = rangeproc.range_compress(data, cfg.n_fft, cfg.window)
        files = render_profiles(data, out_dir, stem, dynamic_range=args.dynamic_range)
    return {"files": [str(f) for f in files]}


def cmd_run(args, cfg):
    """simulate -> calibrate -> reconstruct (raw and calibrated) -> analyze."""
    out_dir = _out_dir(args, cfg)
    cal_cube = simulate_cube(cfg, "calibration")
    scene_cube = simulate_cube(cfg, "scene")
    fileio.write_cube(out_dir / "calibration.cube", cal_cube)
    fileio.write_cube(out_dir / "scene.cube", scene_cube)
    profile = calibrate_cube(cal_cube, cfg)
    calib.write_profile(out_dir / "calibration.profile", profile)
    summary = {"config_hash": config_hash(cfg)}
    for tag, prof in (("uncalibrated", None), ("calibrated", profile)):
        vol = reconstruct_cube(scene_cube, cfg, prof)
        fileio.write_volume(out_dir / f"volume_{tag}.vol", vol)
        render_volume(vol, out_dir, f"{tag}_plane")
        sub = out_dir / f"analysis_{tag}"
        sub.mkdir(exist_ok=True)
        try:
            summary[tag] = analyze_ipr(vol, cfg, sub)
        except MetricError as exc:
            summary[tag] = {"error": str(exc)}
    summary["range"] = analyze_ipr(scene_cube, cfg, out_dir)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


# -- argument parsing ---------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="run-config file (INI)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--output", help=f"output directory (overrides ${OUTPUT_ENV} and the config)")
    common.add_argument("--workers", type=int, help="worker threads for the compute kernels")

    p = argparse.ArgumentParser(prog="mimosar", description="Near-field MIMO-SAR simulation, "
                                "calibration and imaging.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate a raw data cube")
    s.add_argument("--target", choices=("scene", "calibration"), default="scene")
    s.add_argument("-o", "--out", help="cube file to write")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("calibrate", parents=[common], help="estimate a calibration profile")
    s.add_argument("cube")
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("apply-cal", parents=[common], help="apply a calibration profile")
    s.add_argument("data", help="cube or range-profile file")
    s.add_argument("profile")
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_apply_cal)

    s = sub.add_parser("range-compress", parents=[common], help="range-compress a cube")
    s.add_argument("cube")
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_range_compress)

    s = sub.add_parser("align", parents=[common], help="align range profiles across channels")
    s.add_argument("data", help="cube or range-profile file")
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("reconstruct", parents=[common], help="form a 3-D image volume")
    s.add_argument("cube")
    s.add_argument("--profile", help="calibration profile to apply first")
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("analyze", parents=[common], help="impulse-response and beat diagnostics")
    s.add_argument("data", help="volume, cube or range-profile file")
    s.add_argument("--what", choices=("ipr", "spectrogram", "spectrum"), default="ipr")
    s.add_argument("--channel", type=int, default=0)
    s.add_argument("--azimuth", type=int)
    s.add_argument("--window-len", type=int, default=64)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("render", parents=[common], help="write images and CSV cuts")
    s.add_argument("data", help="volume, cube or range-profile file")
    s.add_argument("--dynamic-range", type=float, default=40.0, help="dB below peak shown")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("run", parents=[common], help="full pipeline from one config")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        sets = list(args.set)
        if args.workers is not None:
            sets.append(f"run.workers={args.workers}")
        cfg = load_config(args.config, sets)
        result = args.func(args, cfg)
    except (CalibrationError, AlignmentError) as exc:
        print(f"mimosar: calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except MetricError as exc:
        print(f"mimosar: analysis failed: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except (MimoSarError, OSError) as exc:
        print(f"mimosar: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
