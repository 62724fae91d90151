"""Image formation: midpoint transform, single-wavenumber range migration,
the back-projection oracle and impulse-response metrics.

Volumes are indexed ``(z, y, x)``. Aperture rows follow the virtual array
(y), columns follow the scanner (x).
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import ConfigError, DomainError, MetricError, OutOfSwathError, ResampleRequiredError
from .geometry import antenna_arrays, midpoint_phase, monostatic_elements
from .rangeproc import RangeProfileSet, range_compress
from .wavesim import DataCube, wavenumber_grid

PITCH_RTOL = 1e-6


# -- aperture bookkeeping ---------------------------------------------------

def _uniform_step(values, what):
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0.0
    d = np.diff(v)
    step = (v[-1] - v[0]) / (v.size - 1)
    if step <= 0 or np.max(np.abs(d - step)) > PITCH_RTOL * abs(step) + 1e-12:
        raise ResampleRequiredError(f"{what} positions are not on a uniform grid")
    return float(step)


def aperture_axes(elements, scan):
    """``(x_axis, y_axis)`` of a monostatic, uniformly sampled aperture."""
    mx = np.array([e.midpoint[0] for e in elements])
    my = np.array([e.midpoint[1] for e in elements])
    if np.ptp(mx) > 1e-9:
        raise ResampleRequiredError("virtual midpoints are not collinear along y")
    _uniform_step(my, "virtual element")
    x = np.asarray(scan.x_positions) + mx[0]
    return x, my


def mono_transform(cube: DataCube, z_ref, elements=None, exact=False, reorder=True) -> DataCube:
    """Collapse every bistatic pair onto a monostat at its midpoint.

    The bistatic path to a boresight point at ``z_ref`` exceeds the monostatic
    one by ``Phi / k``; multiplying by ``exp(+j Phi(k_n))`` removes it. The
    channels are then sorted by midpoint y and checked for a uniform pitch.
    """
    elements = cube.elements if elements is None else tuple(elements)
    if len(elements) != cube.n_channels:
        raise ConfigError(f"{len(elements)} elements for a {cube.n_channels}-channel cube")
    k, _ = wavenumber_grid(cube.chirp)
    samples = np.array(cube.samples)
    for ch, e in enumerate(elements):
        if not e.is_monostatic:
            samples[:, ch] *= np.exp(1j * midpoint_phase(e, k, z_ref, exact=exact))[:, None]
    mono = monostatic_elements(elements)
    if reorder:
        order = sorted(range(len(mono)), key=lambda i: mono[i].midpoint[1])
        samples = samples[:, order]
        mono = [replace(mono[i], channel_id=j) for j, i in enumerate(order)]
    out = replace(cube, samples=samples, elements=tuple(mono))
    aperture_axes(out.elements, out.scan)
    return out


def resample_uniform(cube: DataCube, pitch=None) -> DataCube:
    """Band-limited (sinc) interpolation of a monostatic array onto a uniform
    y grid spanning the original extent."""
    if not all(e.is_monostatic for e in cube.elements):
        raise ConfigError("resampling needs monostatic elements; run mono_transform first")
    y = np.array([e.midpoint[1] for e in cube.elements])
    mx = np.array([e.midpoint[0] for e in cube.elements])
    if np.ptp(mx) > 1e-9:
        raise ResampleRequiredError("virtual midpoints are not collinear along y")
    order = np.argsort(y, kind="stable")
    y = y[order]
    if np.any(np.diff(y) <= 0):
        raise ResampleRequiredError("coincident midpoints; dedupe the array first")
    d_in = float(np.median(np.diff(y))) if y.size > 1 else 1.0
    pitch = d_in if pitch is None else pitch
    if not pitch > 0:
        raise DomainError("pitch must be positive")
    n_out = int(math.floor((y[-1] - y[0]) / pitch * (1 + 1e-9))) + 1
    y_out = y[0] + pitch * np.arange(n_out)
    # band limit set by the input sampling
    kern = np.sinc((y_out[:, None] - y[None, :]) / d_in)
    samples = np.einsum("jl,nla->nja", kern, cube.samples[:, order])
    proto = cube.elements[order[0]]
    elems = tuple(replace(proto, channel_id=j, tx_index=-1, rx_index=-1, midpoint=(mx[0], yy))
                  for j, yy in enumerate(y_out))
    return replace(cube, samples=samples, elements=elems)


# -- spectral grid ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralGrid:
    kx: np.ndarray
    ky: np.ndarray
    k_c: float

    @classmethod
    def for_aperture(cls, nx, dx, ny, dy, k_c):
        kx = 2 * np.pi * np.fft.fftfreq(nx, dx) if nx > 1 else np.zeros(1)
        ky = 2 * np.pi * np.fft.fftfreq(ny, dy) if ny > 1 else np.zeros(1)
        return cls(kx, ky, float(k_c))

    @property
    def shape(self):
        return (self.ky.size, self.kx.size)

    def _k2(self):
        return self.kx[None, :] ** 2 + self.ky[:, None] ** 2

    @property
    def evanescent(self):
        return self._k2() > 4 * self.k_c ** 2

    def kz(self):
        return np.sqrt(np.maximum(4 * self.k_c ** 2 - self._k2(), 0.0))

    def propagator(self, z, sign=1):
        """``exp(sign j z kz)`` with the evanescent region zeroed."""
        return np.where(self.evanescent, 0.0, np.exp(sign * 1j * z * self.kz()))

    def support_taper(self, k_max, rolloff=0.3):
        """Raised-cosine taper over ``|k_perp|`` from ``(1 - rolloff) k_max``
        to ``k_max``."""
        kr = np.sqrt(self._k2())
        k_in = k_max * (1 - rolloff)
        if rolloff <= 0:
            return (kr <= k_max).astype(float)
        t = np.clip((kr - k_in) / (k_max - k_in), 0.0, 1.0)
        return 0.5 * (1 + np.cos(np.pi * t))


def phase_compensate(spectrum, grid: SpectralGrid, z, sign=1):
    return spectrum * grid.propagator(z, sign)


def _support_angle(nx, dx, ny, dy, z, factor):
    diag = math.hypot((nx - 1) * dx, (ny - 1) * dy)
    return factor * diag / math.hypot(factor * diag, z)


def _pow2(n):
    return 1 << int(math.ceil(math.log2(max(n, 1))))


def rma_plane(S, dx, dy, k_c, z, pad=None, support=2.0, rolloff=0.3):
    """Focus one monochromatic aperture plane ``S[y, x]`` at depth ``z``.

    The spectral support is limited to the directions the aperture can
    actually see from the plane (``support`` times the aperture diagonal,
    with a raised-cosine edge); this keeps the steep-angle part of the
    propagator, which the finite aperture cannot sample, from wrapping around
    the padded grid. ``support=None`` keeps the whole propagating disc.
    Output is cropped back to the aperture grid.
    """
    S = np.asarray(S, dtype=complex)
    ny, nx = S.shape
    if support is None:
        sin_t = 1.0
        margin = 0
    else:
        sin_t = _support_angle(nx, dx, ny, dy, z, support)
        tan_t = sin_t / math.sqrt(max(1 - sin_t ** 2, 1e-12))
        margin = int(math.ceil(z * tan_t / min(dx if nx > 1 else dy, dy if ny > 1 else dx)))
    if pad is None:
        px = _pow2(max(2 * nx, nx + 2 * margin)) if nx > 1 else 1
        py = _pow2(max(2 * ny, ny + 2 * margin)) if ny > 1 else 1
    else:
        px, py = (int(pad), int(pad)) if np.isscalar(pad) else (int(pad[1]), int(pad[0]))
        if px < nx or py < ny:
            raise ConfigError("padding smaller than the aperture")
    grid = SpectralGrid.for_aperture(px, dx or 1.0, py, dy or 1.0, k_c)
    H = grid.propagator(z)
    if support is not None:
        H = H * grid.support_taper(2 * k_c * sin_t, rolloff)
    P = np.zeros((py, px), complex)
    P[:ny, :nx] = S
    return np.fft.ifft2(np.fft.fft2(P) * H)[:ny, :nx]


@dataclass(frozen=True, eq=False)
class ImageVolume:
    data: np.ndarray          # (z, y, x), complex
    x_axis: np.ndarray
    y_axis: np.ndarray
    z_planes: np.ndarray
    algorithm: str = "rma"

    def __post_init__(self):
        d = np.asarray(self.data, dtype=complex)
        x = np.asarray(self.x_axis, dtype=float).reshape(-1)
        y = np.asarray(self.y_axis, dtype=float).reshape(-1)
        z = np.asarray(self.z_planes, dtype=float).reshape(-1)
        if d.shape != (z.size, y.size, x.size):
            raise ConfigError(f"volume data {d.shape} does not match axes {(z.size, y.size, x.size)}")
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "x_axis", x)
        object.__setattr__(self, "y_axis", y)
        object.__setattr__(self, "z_planes", z)

    @property
    def shape(self):
        return self.data.shape

    def plane(self, z):
        i = int(np.argmin(np.abs(self.z_planes - z)))
        return self.data[i]

    def peak(self):
        """``(iz, iy, ix)`` of the strongest voxel."""
        return np.unravel_index(int(np.argmax(np.abs(self.data))), self.data.shape)


def _select_bin(profiles: RangeProfileSet, z, bin_window):
    if not z > 0:
        raise DomainError(f"image plane depth must be positive, got {z}")
    b = int(round(z / profiles.bin_spacing))
    if b - bin_window < 0 or b + bin_window >= profiles.n_fft:
        swath = profiles.bin_spacing * (profiles.n_fft - 1)
        raise OutOfSwathError(f"plane z={z:g} m is outside the range swath (0, {swath:g}] m")
    return profiles.profiles[b - bin_window:b + bin_window + 1].sum(axis=0)


def _check_sampling(dx, dy, wavelength):
    limit = wavelength / 4
    for name, d in (("x", dx), ("y", dy)):
        if d > limit * (1 + 1e-9):
            warnings.warn(f"aperture {name} pitch {d * 1e3:.3f} mm exceeds lambda/4 = "
                          f"{limit * 1e3:.3f} mm; the image may alias", RuntimeWarning, stacklevel=3)


def rma_reconstruct(profiles: RangeProfileSet, z_planes, bin_window=0, pad=None,
                    support=2.0, rolloff=0.3, workers=None) -> ImageVolume:
    """Single-wavenumber range migration of monostatic, uniformly sampled
    range profiles: for every plane take the range bin at ``z``, transform
    over the aperture, propagate with ``exp(j z sqrt(4 k_c^2 - kx^2 - ky^2))``
    and transform back. Planes are in relative amplitude units.
    """
    if not all(e.is_monostatic for e in profiles.elements):
        raise ConfigError("range migration needs monostatic elements; run mono_transform first")
    x, y = aperture_axes(profiles.elements, profiles.scan)
    dx = _uniform_step(x, "scan")
    dy = _uniform_step(y, "virtual element")
    _check_sampling(dx, dy, profiles.chirp.wavelength)
    z_planes = np.atleast_1d(np.asarray(z_planes, dtype=float))
    k_c = profiles.chirp.k_c
    gain = profiles.window_gain

    def one(z):
        S = _select_bin(profiles, z, bin_window) / gain
        return rma_plane(S, dx, dy, k_c, z, pad=pad, support=support, rolloff=rolloff)

    workers = kernels.default_workers() if workers is None else max(1, int(workers))
    if workers > 1 and len(z_planes) > 1:
        with ThreadPoolExecutor(workers) as ex:
            planes = list(ex.map(one, z_planes))
    else:
        planes = [one(z) for z in z_planes]
    return ImageVolume(np.stack(planes), x, y, z_planes, "rma")


def bp_reconstruct(data, x_axis, y_axis, z_planes, workers=None, backend=None) -> ImageVolume:
    """Back-projection over every channel, scan position and wavenumber,
    using the exact bistatic path to each voxel. Normalised so that a unit
    reflector at a voxel images to 1 there."""
    if isinstance(data, RangeProfileSet):
        samples = data.time_samples()
        scale = data.window_gain
    elif isinstance(data, DataCube):
        samples = data.samples
        scale = data.chirp.n_samples
    else:
        raise TypeError(f"cannot back-project {type(data).__name__}")
    chirp = data.chirp
    tx, rx = antenna_arrays(data.elements)
    az = np.asarray(data.scan.x_positions, dtype=float)
    x = np.asarray(x_axis, dtype=float).reshape(-1)
    y = np.asarray(y_axis, dtype=float).reshape(-1)
    z = np.atleast_1d(np.asarray(z_planes, dtype=float))
    if np.any(z <= 0):
        raise DomainError("image planes must lie in front of the aperture")
    Z, Y, X = np.meshgrid(z, y, x, indexing="ij")
    voxels = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    cube = np.ascontiguousarray(np.transpose(samples, (1, 2, 0)))
    out = kernels.backproject(chirp.k0, chirp.dk, cube, tx, rx, az, voxels,
                              workers=workers, backend=backend)
    out /= scale * cube.shape[0] * cube.shape[1]
    return ImageVolume(out.reshape(Z.shape), x, y, z, "bp")


def reconstruct(cube: DataCube, z_planes, algorithm="rma", window="rect", n_fft=None,
                exact_phase=False, bin_window=0, workers=None, backend=None, **rma_kw) -> ImageVolume:
    """Image a fast-time cube.

    RMA re-evaluates the midpoint transform at every plane depth. BP uses the
    true bistatic geometry and images on the virtual aperture grid.
    """
    z_planes = np.atleast_1d(np.asarray(z_planes, dtype=float))
    if algorithm == "bp":
        ref = mono_transform(cube, float(z_planes[0]), exact=exact_phase)
        x, y = aperture_axes(ref.elements, ref.scan)
        return bp_reconstruct(range_compress(cube, n_fft, window), x, y, z_planes, workers, backend)
    if algorithm != "rma":
        raise ConfigError(f"algorithm must be 'rma' or 'bp', got {algorithm!r}")
    planes = []
    x = y = None
    all_mono = all(e.is_monostatic for e in cube.elements)
    shared = range_compress(mono_transform(cube, float(z_planes[0])), n_fft, window) if all_mono else None
    for z in z_planes:
        prof = shared if shared is not None else \
            range_compress(mono_transform(cube, z, exact=exact_phase), n_fft, window)
        vol = rma_reconstruct(prof, [z], bin_window=bin_window, workers=1, **rma_kw)
        planes.append(vol.data[0])
        x, y = vol.x_axis, vol.y_axis
    return ImageVolume(np.stack(planes), x, y, z_planes, "rma")


def nrms(a, b):
    """``||alpha a - b|| / ||b||`` with the least-squares complex ``alpha``."""
    a = np.asarray(a, dtype=complex).ravel()
    b = np.asarray(b, dtype=complex).ravel()
    nb = np.linalg.norm(b)
    if nb == 0:
        return 0.0 if not np.any(a) else math.inf
    aa = np.vdot(a, a)
    alpha = np.vdot(a, b) / aa if aa != 0 else 0.0
    return float(np.linalg.norm(alpha * a - b) / nb)


# -- impulse-response metrics -----------------------------------------------

@dataclass(frozen=True)
class CutMetrics:
    width: float        # 3 dB width, axis units
    pslr_db: float
    islr_db: float
    mainlobe: tuple[int, int]


@dataclass(frozen=True)
class IPRMetrics:
    peak_index: tuple[int, ...]
    peak_location: tuple[float, ...]
    widths: tuple[float, ...]      # per axis, in axis order
    pslr_db: float                 # worst over the cuts
    islr_db: float
    cuts: tuple[CutMetrics | None, ...]

    def as_dict(self):
        return {"peak_index": list(self.peak_index), "peak_location": list(self.peak_location),
                "widths": list(self.widths), "pslr_db": self.pslr_db, "islr_db": self.islr_db}


def _crossing(mag_db, i, j, level=-3.0):
    """Fractional position where the cut crosses ``level`` between samples
    ``i`` (above) and ``j`` (below, adjacent), via a quadratic through three
    samples."""
    step = j - i
    k = j + step if 0 <= j + step < mag_db.size else i - step
    xs = np.array([i, j, k], dtype=float)
    coef = np.polyfit(xs, mag_db[[i, j, k]], 2)
    coef[-1] -= level
    roots = np.roots(coef)
    lo, hi = min(i, j), max(i, j)
    good = [r.real for r in roots if abs(r.imag) < 1e-12 and lo - 1e-9 <= r.real <= hi + 1e-9]
    if good:
        return min(good, key=lambda r: abs(r - i))
    a, b = mag_db[i], mag_db[j]
    return i + step * (a - level) / (a - b)


def cut_metrics(cut, peak, spacing=1.0) -> CutMetrics | None:
    mag = np.abs(np.asarray(cut))
    n = mag.size
    if n < 3:
        return None
    pk = mag[peak]
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(mag / pk)
    lo = peak
    while lo > 0 and db[lo - 1] >= -3.0:
        lo -= 1
    hi = peak
    while hi < n - 1 and db[hi + 1] >= -3.0:
        hi += 1
    if lo == 0 or hi == n - 1:
        raise MetricError("main lobe is not resolved inside the cut")
    left = _crossing(db, lo, lo - 1)
    right = _crossing(db, hi, hi + 1)
    width = (right - left) * spacing
    # main lobe runs out to the first minima
    a = peak
    while a > 0 and mag[a - 1] < mag[a]:
        a -= 1
    b = peak
    while b < n - 1 and mag[b + 1] < mag[b]:
        b += 1
    side = np.r_[mag[:a], mag[b + 1:]]
    main_e = float(np.sum(mag[a:b + 1] ** 2))
    if side.size == 0 or not np.any(side):
        return CutMetrics(width, -math.inf, -math.inf, (a, b))
    pslr = 20 * math.log10(side.max() / pk)
    islr = 10 * math.log10(float(np.sum(side ** 2)) / main_e)
    return CutMetrics(float(width), pslr, islr, (int(a), int(b)))


def _climb(mag, start):
    idx = tuple(int(i) for i in start)
    while True:
        best = idx
        for ax in range(mag.ndim):
            for d in (-1, 1):
                j = list(idx)
                j[ax] += d
                if 0 <= j[ax] < mag.shape[ax] and mag[tuple(j)] > mag[best]:
                    best = tuple(j)
        if best == idx:
            return idx
        idx = best


def ipr_metrics(plane, peak_hint=None, axes=None, dominance_db=6.0) -> IPRMetrics:
    """Peak location, 3 dB widths, PSLR and ISLR of a 1-D or 2-D response.

    Cuts run through the peak along every axis of length >= 3. ``axes`` gives
    the coordinate vector of each array axis (default: sample index).
    """
    arr = np.asarray(plane)
    mag = np.abs(arr)
    if mag.size == 0 or not np.all(np.isfinite(mag)) or mag.max() <= 0:
        raise MetricError("response has no peak")
    med = float(np.median(mag))
    if med > 0 and mag.max() < med * 10 ** (dominance_db / 20):
        raise MetricError(f"no peak {dominance_db:g} dB above the median")
    if peak_hint is None:
        peak = np.unravel_index(int(np.argmax(mag)), mag.shape)
    else:
        peak = _climb(mag, np.atleast_1d(peak_hint))
    if axes is None:
        axes = [np.arange(s, dtype=float) for s in mag.shape]
    axes = [np.asarray(a, dtype=float) for a in axes]
    cuts, widths, loc = [], [], []
    for ax in range(mag.ndim):
        sl = list(peak)
        sl[ax] = slice(None)
        cut = mag[tuple(sl)]
        coords = axes[ax]
        spacing = (coords[-1] - coords[0]) / (coords.size - 1) if coords.size > 1 else 1.0
        cm = cut_metrics(cut, peak[ax], spacing)
        cuts.append(cm)
        widths.append(cm.width if cm else math.nan)
        loc.append(float(coords[peak[ax]]))
    valid = [c for c in cuts if c is not None]
    if not valid:
        raise MetricError("response is too small for impulse-response cuts")
    return IPRMetrics(tuple(int(i) for i in peak), tuple(loc), tuple(widths),
                      max(c.pslr_db for c in valid), max(c.islr_db for c in valid), tuple(cuts))
