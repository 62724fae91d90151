"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise (or when
``MIMOSAR_PURE_PYTHON=1``) the numpy fallback runs. Both release the work
in chunks to a thread pool sized by ``workers``.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _fallback

_compiled = None
if os.environ.get("MIMOSAR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"


def available_backends():
    return ["cython", "numpy"] if _compiled is not None else ["numpy"]


def _impl(backend):
    backend = backend or BACKEND
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this build")
        return _compiled
    if backend == "numpy":
        return _fallback
    raise ValueError(f"unknown backend {backend!r}")


def default_workers():
    return os.cpu_count() or 1


def _chunks(n, parts):
    parts = max(1, min(parts, n))
    edges = np.linspace(0, n, parts + 1).astype(int)
    return [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def simulate(k0, dk, n_k, tx, rx, az, reflectors, reflectivity, *, workers=None, backend=None):
    """Sum of point-reflector echoes, returned as ``(n_chan, n_az, n_k)`` complex128."""
    impl = _impl(backend)
    tx = np.ascontiguousarray(tx, dtype=np.float64)
    rx = np.ascontiguousarray(rx, dtype=np.float64)
    az = np.ascontiguousarray(az, dtype=np.float64)
    refl = np.ascontiguousarray(np.reshape(reflectors, (-1, 3)), dtype=np.float64)
    p = np.asarray(reflectivity, dtype=np.complex128).reshape(-1)
    p_re, p_im = np.ascontiguousarray(p.real), np.ascontiguousarray(p.imag)
    out = np.zeros((tx.shape[0], az.shape[0], int(n_k)), dtype=np.complex128)
    if refl.shape[0] == 0 or out.size == 0:
        return out

    def run(span):
        a, b = span
        impl.simulate(float(k0), float(dk), int(n_k), tx[a:b], rx[a:b], az, refl, p_re, p_im, out[a:b])

    spans = _chunks(tx.shape[0], workers or default_workers())
    if len(spans) == 1:
        run(spans[0])
    else:
        with ThreadPoolExecutor(len(spans)) as pool:
            list(pool.map(run, spans))
    return out


def backproject(k0, dk, data, tx, rx, az, voxels, *, workers=None, backend=None):
    """Matched-filter image values for ``voxels`` (n, 3) from ``data`` (n_chan, n_az, n_k)."""
    impl = _impl(backend)
    data = np.ascontiguousarray(data, dtype=np.complex128)
    tx = np.ascontiguousarray(tx, dtype=np.float64)
    rx = np.ascontiguousarray(rx, dtype=np.float64)
    az = np.ascontiguousarray(az, dtype=np.float64)
    voxels = np.ascontiguousarray(np.reshape(voxels, (-1, 3)), dtype=np.float64)
    out = np.zeros(voxels.shape[0], dtype=np.complex128)
    if voxels.shape[0] == 0:
        return out

    def run(span):
        a, b = span
        impl.backproject(float(k0), float(dk), data, tx, rx, az, voxels[a:b], out[a:b])

    spans = _chunks(voxels.shape[0], workers or default_workers())
    if len(spans) == 1:
        run(spans[0])
    else:
        with ThreadPoolExecutor(len(spans)) as pool:
            list(pool.map(run, spans))
    return out
