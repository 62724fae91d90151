"""Fast-time processing: non-linearity compensation, range compression,
cross-channel range alignment and time-frequency diagnostics.

The range transform is referenced to the centre of the sweep,

    X(m) = sum_n w_n x_n exp(+j 2 pi m (n - (N-1)/2) / n_fft),

so a reflector with two-way path ``L`` peaks at bin ``L dk n_fft / (2 pi)``
with phase ``-k_c L``, and a fast-time ramp ``exp(-j 2 pi s n' / n_fft)``
moves every profile by exactly ``s`` bins.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import windows

from .errors import AlignmentError, ConfigError, DomainError, StageError
from .geometry import ApertureScan, VirtualElement
from .wavesim import ChirpConfig, DataCube, NonlinearityModel, Stage, _frozen, advance

WINDOWS = ("rect", "hann", "taylor")
DOMINANCE_DB = 6.0


def make_window(name, n):
    if name == "rect":
        return np.ones(n)
    if name == "hann":
        return windows.hann(n, sym=True)
    if name == "taylor":
        return windows.taylor(n, nbar=4, sll=30, norm=True, sym=True)
    raise ConfigError(f"unknown window {name!r}; choose from {', '.join(WINDOWS)}")


def default_nfft(n_samples):
    return 1 << int(np.ceil(np.log2(4 * n_samples)))


def _centered_index(n):
    return np.arange(n) - (n - 1) / 2


def _center_phase(n_samples, n_fft):
    m = np.arange(n_fft)
    return np.exp(-1j * np.pi * m * (n_samples - 1) / n_fft)


def shift_ramp(shifts, n_samples, n_fft):
    """Fast-time factors moving each channel's profile by ``shifts`` bins,
    shape (n_samples, n_chan)."""
    shifts = np.asarray(shifts, dtype=float)
    return np.exp(-2j * np.pi * _centered_index(n_samples)[:, None] * shifts[None, :] / n_fft)


@dataclass(frozen=True, eq=False)
class RangeProfileSet:
    profiles: np.ndarray  # (range_bin, channel, azimuth)
    chirp: ChirpConfig
    elements: tuple[VirtualElement, ...]
    scan: ApertureScan
    window: str = "rect"
    stage: Stage = Stage.RANGE_COMPRESSED

    def __post_init__(self):
        p = np.asarray(self.profiles)
        if p.ndim != 3 or p.shape[1] != len(self.elements) or p.shape[2] != len(self.scan.x_positions):
            raise ConfigError("profile set does not match its geometry")
        if p.shape[0] < self.chirp.n_samples:
            raise ConfigError("profile set is shorter than the fast-time record")
        make_window(self.window, 2)
        object.__setattr__(self, "profiles", _frozen(p.astype(np.complex128, copy=False)))
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "stage", Stage(self.stage))

    @property
    def n_fft(self):
        return self.profiles.shape[0]

    @property
    def n_channels(self):
        return self.profiles.shape[1]

    @property
    def bin_spacing(self):
        """One-way range per bin, meters."""
        return self.chirp.range_bin(self.n_fft)

    @property
    def ranges(self):
        return np.arange(self.n_fft) * self.bin_spacing

    @property
    def window_gain(self):
        return float(make_window(self.window, self.chirp.n_samples).sum())

    def range_to_bin(self, r):
        return r / self.bin_spacing

    def evolve(self, profiles, stage=None):
        if stage is not None and stage != self.stage:
            advance(self.stage, stage)
        return replace(self, profiles=profiles, stage=self.stage if stage is None else stage)

    def time_samples(self):
        """Windowed fast-time samples recovered from the profiles."""
        n = self.chirp.n_samples
        spectrum = self.profiles / _center_phase(n, self.n_fft)[:, None, None]
        return np.fft.fft(spectrum, axis=0)[:n] / self.n_fft


def _transform(samples, n_fft):
    n = samples.shape[0]
    out = n_fft * np.fft.ifft(samples, n_fft, axis=0)
    out *= _center_phase(n, n_fft)[:, None, None]
    return out


def compensate_nonlinearity(cube: DataCube, model: NonlinearityModel) -> DataCube:
    """Remove a known per-channel excess chirp phase."""
    if cube.stage != Stage.RAW:
        raise StageError("non-linearity compensation applies to raw cubes")
    ph = model.phase(cube.n_channels, cube.chirp.n_samples)
    return cube.evolve(cube.samples * np.exp(-1j * ph)[:, :, None], Stage.NONLIN_COMPENSATED)


def range_compress(cube: DataCube, n_fft=None, window="rect") -> RangeProfileSet:
    """Windowed range transform along fast time.

    Cubes already aligned or calibrated in fast time keep their stage.
    """
    n = cube.chirp.n_samples
    n_fft = default_nfft(n) if n_fft is None else int(n_fft)
    if n_fft < n:
        raise ConfigError(f"n_fft={n_fft} is shorter than the {n} fast-time samples")
    w = make_window(window, n)
    prof = _transform(cube.samples * w[:, None, None], n_fft)
    stage = max(cube.stage, Stage.RANGE_COMPRESSED)
    return RangeProfileSet(prof, cube.chirp, cube.elements, cube.scan, window, stage)


def apply_shifts(profiles: RangeProfileSet, shifts, fractional=True):
    """Move each channel by ``shifts`` bins (fractional via a fast-time ramp)."""
    shifts = np.asarray(shifts, dtype=float)
    if shifts.shape != (profiles.n_channels,):
        raise ConfigError("one shift per channel is required")
    if not fractional:
        out = np.empty_like(profiles.profiles)
        for ch, s in enumerate(np.rint(shifts).astype(int)):
            out[:, ch] = np.roll(profiles.profiles[:, ch], s, axis=0)
        return out
    t = profiles.time_samples() * shift_ramp(shifts, profiles.chirp.n_samples, profiles.n_fft)[:, :, None]
    return _transform(t, profiles.n_fft)


@dataclass(frozen=True, eq=False)
class AlignmentReport:
    shifts: np.ndarray   # correction applied to each channel, bins
    reference: int
    n_fft: int
    mode: str = "fractional"
    extra: dict = field(default_factory=dict)

    @property
    def shifts_m(self):
        """Corrections in meters of one-way range (needs ``extra['bin_spacing']``)."""
        return self.shifts * self.extra.get("bin_spacing", np.nan)


def _magnitudes(profiles: RangeProfileSet):
    return np.abs(profiles.profiles).sum(axis=2)


def check_dominance(mag, threshold_db=DOMINANCE_DB):
    """Channels whose peak is less than ``threshold_db`` above the median."""
    peak = mag.max(axis=0)
    med = np.median(mag, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio_db = 20 * np.log10(peak / med)
    return [ch for ch, r in enumerate(ratio_db) if not (r >= threshold_db or (med[ch] == 0 and peak[ch] > 0))]


def _xcorr_lags(mag, reference):
    """Displacement of every channel relative to the reference, in bins."""
    n = mag.shape[0]
    spectrum = np.fft.fft(mag, axis=0)
    corr = np.fft.ifft(spectrum * np.conj(spectrum[:, reference:reference + 1]), axis=0).real
    lags = np.empty(mag.shape[1])
    for ch in range(mag.shape[1]):
        c = corr[:, ch]
        i = int(np.argmax(c))
        cm, c0, cp = c[(i - 1) % n], c[i], c[(i + 1) % n]
        den = cm - 2 * c0 + cp
        frac = 0.5 * (cm - cp) / den if den != 0 else 0.0
        lag = i + frac
        if lag > n / 2:
            lag -= n
        lags[ch] = lag
    return lags


def range_align(profiles: RangeProfileSet, reference=0, mode="fractional", iterations=4):
    """Shift every channel so its magnitude profile lines up with the reference.

    Fractional mode refines the correlation-peak estimate over a few passes
    (quadratic interpolation is biased away from the sample grid).
    """
    if mode not in ("integer", "fractional"):
        raise ConfigError(f"alignment mode must be 'integer' or 'fractional', got {mode!r}")
    if not 0 <= reference < profiles.n_channels:
        raise DomainError(f"reference channel {reference} out of range")
    if profiles.stage >= Stage.ALIGNED:
        raise StageError(f"profiles are already at stage '{profiles.stage.tag}'")
    mag = _magnitudes(profiles)
    weak = check_dominance(mag)
    if weak:
        raise AlignmentError(f"no scatterer {DOMINANCE_DB:g} dB above the median on channels {weak}")

    if mode == "integer":
        shifts = -np.rint(_xcorr_lags(mag, reference))
        aligned = apply_shifts(profiles, shifts, fractional=False)
    else:
        shifts = -_xcorr_lags(mag, reference)
        aligned = apply_shifts(profiles, shifts)
        for _ in range(iterations - 1):
            resid = _xcorr_lags(np.abs(aligned).sum(axis=2), reference)
            if np.max(np.abs(resid)) < 1e-9:
                break
            shifts = shifts - resid
            aligned = apply_shifts(profiles, shifts)
    shifts = shifts - shifts[reference]
    report = AlignmentReport(shifts, int(reference), profiles.n_fft, mode,
                             {"bin_spacing": profiles.bin_spacing})
    return profiles.evolve(aligned, Stage.ALIGNED), report


def spectrogram(cube: DataCube, channel=0, azimuth=0, window_len=64, hop=None, n_fft=None):
    """Short-time magnitude of one beat signal.

    Returns ``(times_s, beat_freqs_hz, magnitude[time, freq])``; the frequency
    axis uses the range-transform sign convention, so a reflector appears at
    ``2 R slope / c``.
    """
    x = np.asarray(cube.samples[:, channel, azimuth])
    n = x.size
    window_len = int(window_len)
    if window_len > n or window_len < 2:
        raise DomainError(f"window length {window_len} must be in [2, {n}]")
    hop = max(1, window_len // 4) if hop is None else int(hop)
    n_fft = window_len if n_fft is None else int(n_fft)
    frames = np.lib.stride_tricks.sliding_window_view(x, window_len)[::hop]
    w = windows.hann(window_len, sym=False) if window_len > 2 else np.ones(window_len)
    mag = np.abs(n_fft * np.fft.ifft(frames * w, n_fft, axis=1))
    fs = cube.chirp.fs
    times = (np.arange(frames.shape[0]) * hop + (window_len - 1) / 2) / fs
    freqs = np.arange(n_fft) * fs / n_fft
    return times, freqs, mag


def power_spectrum(cube: DataCube, channel=0, azimuth=0, n_fft=None):
    """``(beat_freqs_hz, |X|)`` of one channel, rect window."""
    x = np.asarray(cube.samples[:, channel, azimuth])
    n_fft = x.size if n_fft is None else int(n_fft)
    mag = np.abs(n_fft * np.fft.ifft(x, n_fft))
    return np.arange(n_fft) * cube.chirp.fs / n_fft, mag


def beat_frequency(chirp, r):
    """Beat frequency of a monostatic reflector at one-way range ``r``."""
    return 2 * r * chirp.slope / chirp.c


def ridge(magnitude):
    """Peak frequency index per spectrogram frame, refined quadratically."""
    idx = np.argmax(magnitude, axis=1)
    out = idx.astype(float)
    n = magnitude.shape[1]
    for t, i in enumerate(idx):
        cm, c0, cp = magnitude[t, (i - 1) % n], magnitude[t, i], magnitude[t, (i + 1) % n]
        den = cm - 2 * c0 + cp
        if den != 0:
            out[t] += 0.5 * (cm - cp) / den
    return out
