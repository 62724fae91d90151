import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import rel_err
from mimosar import kernels

needs_compiled = pytest.mark.skipif("cython" not in kernels.available_backends(),
                                    reason="compiled extension not built")
K0, DK = 1612.7, 0.3


def _setup(seed, n_chan=7, n_az=5, n_refl=3):
    rng = np.random.default_rng(seed)
    tx = rng.uniform(-0.02, 0.02, (n_chan, 2))
    rx = rng.uniform(-0.02, 0.02, (n_chan, 2))
    az = np.linspace(-0.01, 0.01, n_az)
    refl = np.c_[rng.uniform(-0.03, 0.03, (n_refl, 2)), rng.uniform(0.1, 0.6, n_refl)]
    p = rng.normal(size=n_refl) + 1j * rng.normal(size=n_refl)
    return tx, rx, az, refl, p


def _direct(tx, rx, az, refl, p, n_k):
    out = np.zeros((len(tx), len(az), n_k), complex)
    k = K0 + DK * np.arange(n_k)
    for c in range(len(tx)):
        for a, x0 in enumerate(az):
            for r, pr in zip(refl, p):
                L = (math.dist((tx[c, 0] + x0, tx[c, 1], 0.0), r)
                     + math.dist((rx[c, 0] + x0, rx[c, 1], 0.0), r))
                out[c, a] += pr * np.exp(-1j * k * L)
    return out


@pytest.mark.parametrize("backend", kernels.available_backends())
def test_simulate_matches_direct_sum(backend):
    tx, rx, az, refl, p = _setup(0)
    got = kernels.simulate(K0, DK, 11, tx, rx, az, refl, p, backend=backend, workers=1)
    assert rel_err(got, _direct(tx, rx, az, refl, p, 11)) < 1e-12


@pytest.mark.parametrize("backend", kernels.available_backends())
def test_backproject_matches_direct_sum(backend):
    tx, rx, az, refl, _ = _setup(1)
    rng = np.random.default_rng(2)
    data = rng.normal(size=(7, 5, 9)) + 1j * rng.normal(size=(7, 5, 9))
    vox = refl
    got = kernels.backproject(K0, DK, data, tx, rx, az, vox, backend=backend, workers=1)
    # the matched filter is the adjoint of the forward model
    ref = np.array([np.vdot(_direct(tx, rx, az, v[None], [1.0], 9), data) for v in vox])
    assert rel_err(got, ref) < 1e-12


@needs_compiled
@given(st.integers(0, 2**32 - 1), st.integers(1, 9), st.integers(1, 6))
def test_backends_agree(seed, n_chan, workers):
    tx, rx, az, refl, p = _setup(seed, n_chan=n_chan)
    a = kernels.simulate(K0, DK, 16, tx, rx, az, refl, p, backend="cython", workers=workers)
    b = kernels.simulate(K0, DK, 16, tx, rx, az, refl, p, backend="numpy", workers=1)
    assert rel_err(a, b) < 1e-12
    vox = np.c_[np.linspace(-0.01, 0.01, 13), np.zeros(13), np.full(13, 0.3)]
    x = kernels.backproject(K0, DK, b, tx, rx, az, vox, backend="cython", workers=workers)
    y = kernels.backproject(K0, DK, b, tx, rx, az, vox, backend="numpy", workers=1)
    assert rel_err(x, y) < 1e-12


@pytest.mark.parametrize("workers", [1, 2, 3, 64])
def test_worker_split_is_exact(workers):
    tx, rx, az, refl, p = _setup(4, n_chan=10)
    one = kernels.simulate(K0, DK, 8, tx, rx, az, refl, p, workers=1)
    many = kernels.simulate(K0, DK, 8, tx, rx, az, refl, p, workers=workers)
    assert np.array_equal(one, many)
    vox = np.c_[np.zeros((6, 2)), np.linspace(0.2, 0.4, 6)]
    assert np.array_equal(kernels.backproject(K0, DK, one, tx, rx, az, vox, workers=1),
                          kernels.backproject(K0, DK, one, tx, rx, az, vox, workers=workers))


def test_empty_inputs():
    tx, rx, az, _, _ = _setup(0)
    assert not kernels.simulate(K0, DK, 4, tx, rx, az, np.zeros((0, 3)), [], workers=2).any()
    assert kernels.backproject(K0, DK, np.zeros((7, 5, 4)), tx, rx, az, np.zeros((0, 3))).shape == (0,)


def test_backend_selection():
    assert kernels.BACKEND in kernels.available_backends()
    with pytest.raises(ValueError):
        kernels.simulate(K0, DK, 4, *_setup(0), backend="fortran")
    assert kernels.default_workers() >= 1


def test_pure_python_switch():
    env = dict(os.environ, MIMOSAR_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import mimosar.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
