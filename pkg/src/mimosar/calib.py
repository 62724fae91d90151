"""Virtual-array calibration.

A corner reflector seen by every channel gives one complex snapshot per
channel at the aligned peak bin. Dividing by the reference channel fixes the
gauge, dividing out the expected propagation phase of the reflector removes
the geometry, and what is left is the channel error to be undone. Residual
weights then flatten what remains of the array response in a least-squares
sense.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CalibrationError, ConfigError, DomainError, FormatError, StageError
from .geometry import antenna_arrays
from .rangeproc import (DOMINANCE_DB, RangeProfileSet, apply_shifts, range_align,
                        range_compress, shift_ramp)
from .wavesim import DataCube, Stage

PROFILE_MAGIC = "mimosar-calibration-profile"
PROFILE_VERSION = 1


@dataclass(frozen=True, eq=False)
class CalibrationProfile:
    """Per-channel complex correction ``gain * phase`` plus alignment shifts
    (bins of an ``n_fft``-point range transform) and optional weights."""

    gain: np.ndarray
    phase: np.ndarray
    shifts: np.ndarray
    n_fft: int
    reference: int = 0
    weights: np.ndarray | None = None
    reflector: tuple[float, float, float] | None = None
    k_c: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        gain = np.asarray(self.gain, dtype=float).reshape(-1)
        phase = np.asarray(self.phase, dtype=complex).reshape(-1)
        shifts = np.asarray(self.shifts, dtype=float).reshape(-1)
        n = gain.size
        if phase.size != n or shifts.size != n:
            raise ConfigError("gain, phase and shifts need one entry per channel")
        if n == 0:
            raise ConfigError("calibration profile has no channels")
        if not (np.all(np.isfinite(gain)) and np.all(gain > 0)):
            raise DomainError("gain corrections must be finite and positive")
        if not np.allclose(np.abs(phase), 1.0, rtol=0, atol=1e-9):
            raise DomainError("phase corrections must have unit magnitude")
        if not 0 <= self.reference < n:
            raise ConfigError(f"reference channel {self.reference} out of range")
        if int(self.n_fft) < 1:
            raise ConfigError("n_fft must be positive")
        object.__setattr__(self, "gain", gain)
        object.__setattr__(self, "phase", phase)
        object.__setattr__(self, "shifts", shifts)
        object.__setattr__(self, "n_fft", int(self.n_fft))
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=complex).reshape(-1)
            if w.size != n:
                raise ConfigError(f"{w.size} weights for {n} channels")
            object.__setattr__(self, "weights", w)
        if self.reflector is not None:
            object.__setattr__(self, "reflector", tuple(float(v) for v in self.reflector))

    @property
    def n_channels(self):
        return self.gain.size

    @property
    def corrections(self):
        return self.gain * self.phase

    @classmethod
    def identity(cls, n_channels, n_fft=1):
        return cls(np.ones(n_channels), np.ones(n_channels, complex), np.zeros(n_channels), n_fft)

    @classmethod
    def from_corrections(cls, corrections, shifts, n_fft, **kw):
        c = np.asarray(corrections, dtype=complex)
        mag = np.abs(c)
        if np.any(mag == 0):
            raise DomainError("corrections must be non-zero")
        return cls(mag, c / mag, shifts, n_fft, **kw)

    def with_weights(self, weights):
        return CalibrationProfile(self.gain, self.phase, self.shifts, self.n_fft, self.reference,
                                  weights, self.reflector, self.k_c, dict(self.metadata))

    def factors(self, use_weights=True):
        f = self.corrections
        if use_weights and self.weights is not None:
            f = f * self.weights
        return f


def peak_snapshot(profiles: RangeProfileSet, range_bin=None, azimuth=None):
    """Complex values of every channel at one range bin and azimuth column.

    The bin defaults to the strongest bin of the channel-summed magnitude and
    the column to the one nearest x = 0.
    """
    if azimuth is None:
        azimuth = int(np.argmin(np.abs(np.asarray(profiles.scan.x_positions))))
    col = profiles.profiles[:, :, azimuth]
    if range_bin is None:
        range_bin = int(np.argmax(np.abs(col).sum(axis=1)))
    if not 0 <= range_bin < profiles.n_fft:
        raise DomainError(f"range bin {range_bin} outside [0, {profiles.n_fft})")
    return col[range_bin].copy(), int(range_bin), int(azimuth)


def reflector_paths(elements, position, x_offset=0.0):
    """Exact two-way path from every channel to a point reflector."""
    tx, rx = antenna_arrays(elements)
    x, y, z = position
    d_tx = np.sqrt((tx[:, 0] + x_offset - x) ** 2 + (tx[:, 1] - y) ** 2 + z ** 2)
    d_rx = np.sqrt((rx[:, 0] + x_offset - x) ** 2 + (rx[:, 1] - y) ** 2 + z ** 2)
    return d_tx + d_rx


def estimate_phase_gain(aligned: RangeProfileSet, reflector_range_bin=None, report=None,
                        reflector=None, azimuth=None, threshold_db=DOMINANCE_DB) -> CalibrationProfile:
    """Per-channel correction from an aligned corner-reflector capture.

    ``reflector`` (x, y, z) divides out the reflector's own propagation
    phase; without it the reflector is assumed at boresight in the far field,
    where every channel should see the same phase.
    """
    if aligned.stage != Stage.ALIGNED:
        raise StageError(f"calibration needs aligned profiles, got stage '{aligned.stage.tag}'")
    v, rbin, az = peak_snapshot(aligned, reflector_range_bin, azimuth)
    mag = np.abs(aligned.profiles[:, :, az])
    med = np.median(mag, axis=0)
    level = np.abs(v)
    with np.errstate(divide="ignore"):
        ratio_db = 20 * np.log10(level / np.where(med > 0, med, np.nan))
    bad = [ch for ch in range(aligned.n_channels)
           if level[ch] == 0 or (med[ch] > 0 and not ratio_db[ch] >= threshold_db)]
    if bad:
        raise CalibrationError(f"reflector is not {threshold_db:g} dB above the median at bin {rbin}", bad)

    reference = 0 if report is None else report.reference
    if reflector is not None:
        paths = reflector_paths(aligned.elements, reflector, aligned.scan.x_positions[az])
        model = np.exp(-1j * aligned.chirp.k_c * paths)
    else:
        model = np.ones(aligned.n_channels, complex)
    corr = (v[reference] / model[reference]) * model / v
    shifts = np.zeros(aligned.n_channels) if report is None else report.shifts
    meta = {"range_bin": rbin, "azimuth": az}
    return CalibrationProfile.from_corrections(
        corr, shifts, aligned.n_fft, reference=reference, reflector=reflector,
        k_c=aligned.chirp.k_c, metadata=meta)


def apply_calibration(data, profile: CalibrationProfile, use_weights=True):
    """Apply shifts, complex corrections and (optionally) weights.

    Works on a fast-time cube or on range profiles; profiles that are already
    aligned only receive the complex factors.
    """
    if data.n_channels != profile.n_channels:
        raise ConfigError(f"profile has {profile.n_channels} channels, data has {data.n_channels}")
    if data.stage >= Stage.CALIBRATED:
        raise StageError("data is already calibrated")
    f = profile.factors(use_weights)
    if isinstance(data, DataCube):
        n = data.chirp.n_samples
        t = shift_ramp(profile.shifts, n, profile.n_fft) * f[None, :]
        return data.evolve(data.samples * t[:, :, None], Stage.CALIBRATED)
    if isinstance(data, RangeProfileSet):
        prof = data.profiles
        if data.stage < Stage.ALIGNED and np.any(profile.shifts):
            prof = apply_shifts(data, profile.shifts * data.n_fft / profile.n_fft)
        return data.evolve(prof * f[None, :, None], Stage.CALIBRATED)
    raise TypeError(f"cannot calibrate {type(data).__name__}")


def element_snapshot(profiles: RangeProfileSet, reflector=None, range_bin=None, reference=0,
                     azimuth=None):
    """Reference-normalised element responses to the calibration reflector,
    with the reflector's own propagation phase divided out. A perfectly
    calibrated array gives all ones."""
    v, _, az = peak_snapshot(profiles, range_bin, azimuth)
    if reflector is not None:
        paths = reflector_paths(profiles.elements, reflector, profiles.scan.x_positions[az])
        v = v * np.exp(1j * profiles.chirp.k_c * paths)
    if v[reference] == 0:
        raise CalibrationError("reference channel has no response", [reference])
    return v / v[reference]


def calibrate_from_cube(cube: DataCube, reference=0, mode="fractional", reflector=None,
                        n_fft=None, window="rect", reflector_range_bin=None):
    """Range compress, align and estimate in one go.

    Returns ``(profile, aligned_profiles, alignment_report)``.
    """
    prof = range_compress(cube, n_fft=n_fft, window=window)
    aligned, report = range_align(prof, reference=reference, mode=mode)
    profile = estimate_phase_gain(aligned, reflector_range_bin, report, reflector)
    return profile, aligned, report


# -- residual weights -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ArrayManifold:
    """Steering matrix ``A[l, t] = exp(-j 2 k_c u_t y_l)``."""

    matrix: np.ndarray
    element_y: np.ndarray
    direction_sines: np.ndarray
    k_c: float

    @property
    def shape(self):
        return self.matrix.shape


def default_angle_grid(n=181):
    return np.linspace(-1.0, 1.0, n)


def build_manifold(element_y, k_c, angle_grid=None) -> ArrayManifold:
    y = np.asarray(element_y, dtype=float).reshape(-1)
    u = default_angle_grid() if angle_grid is None else np.asarray(angle_grid, dtype=float).reshape(-1)
    if y.size == 0 or u.size == 0:
        raise DomainError("manifold needs at least one element and one direction")
    if np.any(np.abs(u) > 1):
        raise DomainError("direction sines must lie in [-1, 1]")
    if not (math.isfinite(k_c) and k_c > 0):
        raise DomainError("k_c must be positive")
    A = np.exp(-2j * k_c * y[:, None] * u[None, :])
    return ArrayManifold(A, y, u, float(k_c))


def _matrix(A):
    return A.matrix if isinstance(A, ArrayManifold) else np.asarray(A, dtype=complex)


def weights_objective(s, w, A):
    """``||(w * s) A - 1^T A||_2``."""
    M = _matrix(A)
    s = np.asarray(s, dtype=complex)
    w = np.asarray(w, dtype=complex)
    return float(np.linalg.norm((w * s) @ M - M.sum(axis=0)))


def residual_weights(s, A):
    """Least-squares weights flattening the array response of snapshot ``s``.

    The objective is linear in ``w``, so the minimiser is the (minimum-norm)
    least-squares solution of ``A^T diag(s) w = A^T 1``. Elements with
    ``s_l = 0`` carry no information; they are left at weight 1.
    """
    M = _matrix(A)
    s = np.asarray(s, dtype=complex).reshape(-1)
    if M.ndim != 2 or M.shape[0] != s.size:
        raise ConfigError(f"snapshot has {s.size} elements, manifold has {M.shape[0]} rows")
    if np.linalg.matrix_rank(M) == 0:
        raise DomainError("array manifold is degenerate (rank 0)")
    live = s != 0
    w = np.ones(s.size, complex)
    if not live.all():
        warnings.warn(f"snapshot is zero on elements {np.flatnonzero(~live).tolist()}; "
                      "their weights are left at 1", RuntimeWarning, stacklevel=2)
    if not live.any():
        return w
    lhs = M[live].T * s[live][None, :]
    rhs = M.sum(axis=0)
    sol, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    w[live] = sol
    return w


def ipr_after_weights(s, w, A):
    """Array response ``(w * s) A``."""
    M = _matrix(A)
    return (np.asarray(w, dtype=complex) * np.asarray(s, dtype=complex)) @ M


# -- profile files ----------------------------------------------------------

def format_profile(profile: CalibrationProfile) -> str:
    refl = profile.reflector
    lines = [
        f"{PROFILE_MAGIC} {PROFILE_VERSION}",
        f"channels {profile.n_channels}",
        f"reference {profile.reference}",
        "reflector none" if refl is None else "reflector " + " ".join(repr(float(v)) for v in refl),
        f"k_c {float(profile.k_c)!r}",
        f"n_fft {profile.n_fft}",
    ]
    for key in sorted(profile.metadata):
        val = str(profile.metadata[key])
        if not key.isidentifier() or "\n" in val:
            raise FormatError(f"metadata entry {key!r} cannot be stored")
        lines.append(f"meta {key} {val}")
    lines.append("# l re(c) im(c) gain shift_bins")
    for l, (c, g, s) in enumerate(zip(profile.phase, profile.gain, profile.shifts)):
        lines.append(f"{l} {float(c.real)!r} {float(c.imag)!r} {float(g)!r} {float(s)!r}")
    if profile.weights is not None:
        lines.append(f"weights {profile.weights.size}")
        for l, w in enumerate(profile.weights):
            lines.append(f"{l} {float(w.real)!r} {float(w.imag)!r}")
    return "\n".join(lines) + "\n"


def parse_profile(text) -> CalibrationProfile:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        magic, version = lines[0].split()
        if magic != PROFILE_MAGIC:
            raise FormatError("not a calibration profile")
        if int(version) != PROFILE_VERSION:
            raise FormatError(f"unsupported profile version {version}")
        header = {}
        meta = {}
        i = 1
        while i < len(lines) and not lines[i].split()[0].lstrip("-").isdigit():
            key, _, rest = lines[i].partition(" ")
            if key == "meta":
                mk, _, mv = rest.partition(" ")
                meta[mk] = mv
            else:
                header[key] = rest.split()
            i += 1
        n = int(header["channels"][0])
        phase = np.empty(n, complex)
        gain = np.empty(n)
        shifts = np.empty(n)
        for l in range(n):
            parts = lines[i + l].split()
            if int(parts[0]) != l or len(parts) != 5:
                raise FormatError(f"bad channel line {lines[i + l]!r}")
            phase[l] = complex(float(parts[1]), float(parts[2]))
            gain[l] = float(parts[3])
            shifts[l] = float(parts[4])
        i += n
        weights = None
        if i < len(lines):
            tag, count = lines[i].split()
            if tag != "weights" or int(count) != n:
                raise FormatError(f"bad weights header {lines[i]!r}")
            weights = np.empty(n, complex)
            for l in range(n):
                parts = lines[i + 1 + l].split()
                if int(parts[0]) != l or len(parts) != 3:
                    raise FormatError(f"bad weight line {lines[i + 1 + l]!r}")
                weights[l] = complex(float(parts[1]), float(parts[2]))
            if i + 1 + n != len(lines):
                raise FormatError("trailing data after weights")
        refl = header["reflector"]
        reflector = None if refl == ["none"] else tuple(float(v) for v in refl)
        return CalibrationProfile(gain, phase, shifts, int(header["n_fft"][0]),
                                  int(header["reference"][0]), weights, reflector,
                                  float(header["k_c"][0]), meta)
    except FormatError:
        raise
    except (IndexError, KeyError, ValueError) as exc:
        raise FormatError(f"malformed calibration profile: {exc}") from None


def write_profile(path, profile: CalibrationProfile):
    Path(path).write_text(format_profile(profile))


def read_profile(path) -> CalibrationProfile:
    return parse_profile(Path(path).read_text())


def calibrate(cube: DataCube, reference=0, mode="fractional", reflector=None, n_fft=None,
              weights=True, angle_grid=None) -> CalibrationProfile:
    """Full estimate: alignment, phase/gain and (optionally) residual weights
    solved on the calibrated snapshot."""
    profile, aligned, _ = calibrate_from_cube(cube, reference, mode, reflector, n_fft)
    if not weights:
        return profile
    cal = apply_calibration(aligned, profile)
    s = element_snapshot(cal, reflector, profile.metadata["range_bin"], reference,
                         profile.metadata["azimuth"])
    y = [e.midpoint[1] for e in cube.elements]
    w = residual_weights(s, build_manifold(y, cube.chirp.k_c, angle_grid))
    return profile.with_weights(w)
