"""Forward model: multistatic FMCW beat-signal cubes from point scenes.

The cube is expressed directly in the dechirped wavenumber domain: sample
``n`` of a channel observes ``k_n = 2 pi (f0 + beta n / fs) / c`` and a
reflector contributes ``p exp(-j k_n (|tx - r| + |rx - r|))``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, DomainError, StageError
from .geometry import ApertureScan, VirtualElement, antenna_arrays, expand_channels

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ChirpConfig:
    f0: float
    b: float
    T: float
    fs: float
    n_samples: int
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if not (self.b > 0 and self.T > 0 and self.fs > 0 and self.f0 > 0 and self.c > 0):
            raise ConfigError("chirp needs positive f0, bandwidth, duration, sample rate and c")
        n = int(self.n_samples)
        if n < 2 or n != self.n_samples:
            raise ConfigError("n_samples must be an integer >= 2")
        # fs*T is often a float like 319.99999999999994
        if n > math.floor(self.fs * self.T * (1 + 1e-12)):
            raise ConfigError(f"n_samples={n} exceeds fs*T={self.fs * self.T:g}")
        object.__setattr__(self, "n_samples", n)

    @classmethod
    def from_center(cls, fc, b, T, fs, n_samples=None, c=SPEED_OF_LIGHT):
        """Chirp whose sampled sweep is centred on ``fc``."""
        if n_samples is None:
            n_samples = int(math.floor(fs * T * (1 + 1e-12)))
        slope = b / T
        f0 = fc - slope * (n_samples - 1) / (2 * fs)
        return cls(f0=f0, b=b, T=T, fs=fs, n_samples=n_samples, c=c)

    @property
    def slope(self):
        return self.b / self.T

    @property
    def k0(self):
        return 2 * math.pi * self.f0 / self.c

    @property
    def dk(self):
        """Wavenumber step between fast-time samples."""
        return 2 * math.pi * self.slope / (self.c * self.fs)

    @property
    def center_frequency(self):
        return self.f0 + self.slope * (self.n_samples - 1) / (2 * self.fs)

    @property
    def k_c(self):
        """Wavenumber at the centre of the sampled sweep."""
        return 2 * math.pi * self.center_frequency / self.c

    @property
    def wavelength(self):
        return self.c / self.center_frequency

    @property
    def sampled_bandwidth(self):
        return self.slope * self.n_samples / self.fs

    @property
    def range_resolution(self):
        return self.c / (2 * self.sampled_bandwidth)

    def range_bin(self, n_fft):
        """Meters of one-way range per bin of an ``n_fft`` range transform."""
        return self.c * self.fs / (2 * self.slope * n_fft)

    def as_dict(self):
        return {"f0": self.f0, "b": self.b, "T": self.T, "fs": self.fs,
                "n_samples": self.n_samples, "c": self.c}


def wavenumber_grid(chirp: ChirpConfig):
    """Fast-time wavenumbers ``k_n`` and the centre wavenumber ``k_c``."""
    k = chirp.k0 + chirp.dk * np.arange(chirp.n_samples)
    return k, chirp.k_c


@dataclass(frozen=True)
class Reflector:
    x: float
    y: float
    z: float
    p: complex = 1.0


@dataclass(frozen=True)
class Scene:
    reflectors: tuple[Reflector, ...] = ()

    def __post_init__(self):
        refl = tuple(r if isinstance(r, Reflector) else Reflector(*r) for r in self.reflectors)
        for r in refl:
            if not r.z > 0:
                raise DomainError(f"reflector depth must be positive, got z={r.z}")
            vals = (r.x, r.y, r.z, complex(r.p).real, complex(r.p).imag)
            if not all(math.isfinite(v) for v in vals):
                raise DomainError("reflector coordinates and reflectivity must be finite")
        object.__setattr__(self, "reflectors", refl)

    def __len__(self):
        return len(self.reflectors)

    def __add__(self, other):
        return Scene(self.reflectors + other.reflectors)

    @property
    def positions(self):
        return np.array([(r.x, r.y, r.z) for r in self.reflectors], dtype=float).reshape(-1, 3)

    @property
    def reflectivity(self):
        return np.array([complex(r.p) for r in self.reflectors], dtype=complex)

    @classmethod
    def point(cls, x, y, z, p=1.0):
        return cls((Reflector(x, y, z, p),))


def parse_scene(text) -> Scene:
    """``x_m y_m z_m re(p) im(p)`` per line, ``#`` comments."""
    refl = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ConfigError(f"scene line {lineno}: expected 'x y z re im'")
        try:
            x, y, z, re, im = map(float, parts)
        except ValueError as exc:
            raise ConfigError(f"scene line {lineno}: {exc}") from None
        refl.append(Reflector(x, y, z, complex(re, im)))
    return Scene(tuple(refl))


def read_scene(path) -> Scene:
    return parse_scene(Path(path).read_text())


def format_scene(scene: Scene) -> str:
    lines = ["# x_m y_m z_m re(p) im(p)"]
    for r in scene.reflectors:
        p = complex(r.p)
        lines.append(f"{r.x!r} {r.y!r} {r.z!r} {p.real!r} {p.imag!r}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class ChannelError:
    """Per-channel complex gain ``g`` and range error ``R`` (meters)."""

    gains: np.ndarray
    range_errors: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=complex).reshape(-1)
        r = np.asarray(self.range_errors, dtype=float).reshape(-1)
        if g.shape != r.shape:
            raise ConfigError("gains and range errors need one entry per channel")
        if np.any(np.abs(g) == 0) or not np.all(np.isfinite(g)):
            raise DomainError("channel gains must be finite and non-zero")
        if not np.all(np.isfinite(r)):
            raise DomainError("range errors must be finite")
        object.__setattr__(self, "gains", g)
        object.__setattr__(self, "range_errors", r)

    def __len__(self):
        return self.gains.size

    @classmethod
    def identity(cls, n):
        return cls(np.ones(n, complex), np.zeros(n))

    @classmethod
    def random(cls, n, rng, gain_range=(0.5, 2.0), range_max=0.0):
        rng = np.random.default_rng(rng)
        mag = rng.uniform(*gain_range, size=n)
        phase = rng.uniform(-np.pi, np.pi, size=n)
        rerr = rng.uniform(-range_max, range_max, size=n) if range_max > 0 else np.zeros(n)
        return cls(mag * np.exp(1j * phase), rerr)


@dataclass(frozen=True, eq=False)
class NonlinearityModel:
    """Excess chirp phase per channel as a polynomial in normalised fast
    time ``tau = n / n_samples`` (radians, lowest order first, degree <= 4).
    A single row applies to every channel."""

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coefficients, dtype=float))
        if c.ndim != 2 or c.shape[1] > 5:
            raise ConfigError("non-linearity polynomials are limited to degree 4")
        if not np.all(np.isfinite(c)):
            raise DomainError("non-linearity coefficients must be finite")
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def zero(cls):
        return cls(np.zeros((1, 1)))

    @property
    def is_ideal(self):
        return not np.any(self.coefficients)

    def phase(self, n_chan, n_samples):
        """Excess phase, shape (n_samples, n_chan)."""
        c = self.coefficients
        if c.shape[0] not in (1, n_chan):
            raise ConfigError(f"model has {c.shape[0]} channels, cube has {n_chan}")
        tau = np.arange(n_samples) / n_samples
        powers = tau[:, None] ** np.arange(c.shape[1])[None, :]
        ph = powers @ c.T
        return np.broadcast_to(ph, (n_samples, n_chan))


class Stage(enum.IntEnum):
    RAW = 0
    NONLIN_COMPENSATED = 1
    RANGE_COMPRESSED = 2
    ALIGNED = 3
    CALIBRATED = 4

    @property
    def tag(self):
        return self.name.lower()

    @classmethod
    def from_tag(cls, tag):
        try:
            return cls[tag.upper()]
        except KeyError:
            raise ConfigError(f"unknown stage tag {tag!r}") from None


def advance(current: Stage, new: Stage) -> Stage:
    if new <= current:
        raise StageError(f"cannot go from stage '{current.tag}' to '{new.tag}'")
    return new


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DataCube:
    """Fast-time samples indexed ``(sample, channel, azimuth)``."""

    samples: np.ndarray
    chirp: ChirpConfig
    elements: tuple[VirtualElement, ...]
    scan: ApertureScan
    stage: Stage = Stage.RAW

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 3:
            raise ConfigError("cube samples must be 3-D (sample, channel, azimuth)")
        if s.shape[0] != self.chirp.n_samples:
            raise ConfigError(f"cube has {s.shape[0]} fast-time samples, chirp has {self.chirp.n_samples}")
        if s.shape[1] != len(self.elements):
            raise ConfigError(f"cube has {s.shape[1]} channels, geometry has {len(self.elements)}")
        if s.shape[2] != len(self.scan.x_positions):
            raise ConfigError(f"cube has {s.shape[2]} azimuth positions, scan has {len(self.scan.x_positions)}")
        object.__setattr__(self, "samples", _frozen(s.astype(np.complex128, copy=False)))
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "stage", Stage(self.stage))

    @property
    def shape(self):
        return self.samples.shape

    @property
    def n_channels(self):
        return self.samples.shape[1]

    def evolve(self, samples, stage=None, **changes):
        """New cube with fresh samples; ``stage`` must move forward."""
        if stage is not None and stage != self.stage:
            advance(self.stage, stage)
        return replace(self, samples=samples, stage=self.stage if stage is None else stage, **changes)


def simulate_beat(scene: Scene, elements, scan: ApertureScan, chirp: ChirpConfig,
                  *, workers=None, backend=None) -> DataCube:
    """Exact bistatic beat-signal cube for a point scene.

    The array is replicated at every scanner elevation (see
    :func:`geometry.expand_channels`) and translated along x for every
    azimuth position.
    """
    channels = expand_channels(elements, scan)
    tx, rx = antenna_arrays(channels)
    out = kernels.simulate(chirp.k0, chirp.dk, chirp.n_samples, tx, rx,
                           np.asarray(scan.x_positions), scene.positions, scene.reflectivity,
                           workers=workers, backend=backend)
    return DataCube(np.transpose(out, (2, 0, 1)), chirp, tuple(channels), scan, Stage.RAW)


def error_factors(chirp: ChirpConfig, errors: ChannelError):
    """``g_l exp(-j 2 k_n R_l)``, shape (n_samples, n_chan)."""
    k, _ = wavenumber_grid(chirp)
    return errors.gains[None, :] * np.exp(-2j * k[:, None] * errors.range_errors[None, :])


def inject_channel_errors(cube: DataCube, errors: ChannelError) -> DataCube:
    if cube.stage != Stage.RAW:
        raise StageError("channel errors are injected into raw cubes only")
    if len(errors) != cube.n_channels:
        raise ConfigError(f"{len(errors)} channel errors for a {cube.n_channels}-channel cube")
    return cube.evolve(cube.samples * error_factors(cube.chirp, errors)[:, :, None])


def inject_nonlinearity(cube: DataCube, model: NonlinearityModel) -> DataCube:
    if cube.stage != Stage.RAW:
        raise StageError("chirp non-linearity is injected into raw cubes only")
    if model.is_ideal:
        return cube
    ph = model.phase(cube.n_channels, cube.chirp.n_samples)
    return cube.evolve(cube.samples * np.exp(1j * ph)[:, :, None])


def add_noise(cube: DataCube, snr_db, rng=None) -> DataCube:
    """Complex white noise at ``snr_db`` relative to the mean sample power."""
    rng = np.random.default_rng(rng)
    power = np.mean(np.abs(cube.samples) ** 2)
    if power == 0:
        return cube
    sigma = math.sqrt(power / 10 ** (snr_db / 10) / 2)
    noise = sigma * (rng.standard_normal(cube.shape) + 1j * rng.standard_normal(cube.shape))
    return cube.evolve(cube.samples + noise)
