"""Grayscale images and CSV tables for diagnostics and reconstructions."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

try:
    from PIL import Image
except ImportError:  # PNG output is optional
    Image = None


def magnitude_db(values, dynamic_range=40.0):
    """``20 log10 |v| / max``, floored at ``-dynamic_range``."""
    mag = np.abs(np.asarray(values))
    peak = mag.max() if mag.size else 0.0
    if peak == 0:
        return np.full(mag.shape, -float(dynamic_range))
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(mag / peak)
    return np.maximum(db, -float(dynamic_range))


def to_gray(values, dynamic_range=40.0):
    db = magnitude_db(values, dynamic_range)
    return np.round((db + dynamic_range) / dynamic_range * 255).astype(np.uint8)


def write_pgm(path, gray):
    gray = np.asarray(gray, dtype=np.uint8)
    if gray.ndim != 2:
        raise ValueError("PGM images are 2-D")
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        # row 0 at the top; images are flipped so +y points up
        fh.write(np.ascontiguousarray(gray[::-1]).tobytes())


def read_pgm(path):
    raw = Path(path).read_bytes()
    magic, size, _maxval, data = raw.split(b"\n", 3)
    if magic != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    w, h = (int(v) for v in size.split())
    return np.frombuffer(data[:w * h], dtype=np.uint8).reshape(h, w)[::-1]


def write_image(stem, values, dynamic_range=40.0):
    """Write ``stem.pgm`` and, when Pillow is installed, ``stem.png``."""
    gray = to_gray(values, dynamic_range)
    stem = Path(stem)
    written = [stem.with_suffix(".pgm")]
    write_pgm(written[0], gray)
    if Image is not None:
        written.append(stem.with_suffix(".png"))
        Image.fromarray(np.ascontiguousarray(gray[::-1])).save(written[1])
    return written


def write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_cuts(path, plane, x_axis, y_axis, peak=None, dynamic_range=80.0):
    """x and y magnitude cuts (dB) through the plane's peak."""
    mag = np.abs(np.asarray(plane))
    if peak is None:
        peak = np.unravel_index(int(np.argmax(mag)), mag.shape)
    iy, ix = peak
    db = magnitude_db(mag, dynamic_range)
    rows = [("x", float(x), float(db[iy, i])) for i, x in enumerate(x_axis)]
    rows += [("y", float(y), float(db[j, ix])) for j, y in enumerate(y_axis)]
    write_table(path, ["axis", "position_m", "magnitude_db"], rows)
