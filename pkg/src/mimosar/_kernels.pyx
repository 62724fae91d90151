# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the forward model and back-projection.

Both kernels walk the uniform wavenumber grid with a complex rotation
instead of calling sin/cos per sample, re-seeding every ``_RESEED`` steps
to keep the accumulated rounding below 1e-13.
"""
from libc.math cimport cos, sin, sqrt

import numpy as np

cdef int _RESEED = 32


cdef inline double _dist(double ax, double ay, double bx, double by, double bz) noexcept nogil:
    cdef double dx = ax - bx
    cdef double dy = ay - by
    return sqrt(dx * dx + dy * dy + bz * bz)


def simulate(double k0, double dk, Py_ssize_t n_k,
             const double[:, ::1] tx, const double[:, ::1] rx,
             const double[::1] az,
             const double[:, ::1] refl, const double[::1] p_re, const double[::1] p_im,
             double complex[:, :, ::1] out):
    """Accumulate ``sum_r p_r exp(-j k_n L_r)`` into ``out[chan, az, n]``."""
    cdef Py_ssize_t n_chan = tx.shape[0]
    cdef Py_ssize_t n_az = az.shape[0]
    cdef Py_ssize_t n_refl = refl.shape[0]
    cdef Py_ssize_t c, a, r, n
    cdef double L, ph, rot_re, rot_im, cur_re, cur_im, tmp, acc_re, acc_im
    with nogil:
        for c in range(n_chan):
            for a in range(n_az):
                for r in range(n_refl):
                    L = (_dist(tx[c, 0] + az[a], tx[c, 1], refl[r, 0], refl[r, 1], refl[r, 2])
                         + _dist(rx[c, 0] + az[a], rx[c, 1], refl[r, 0], refl[r, 1], refl[r, 2]))
                    rot_re = cos(dk * L)
                    rot_im = -sin(dk * L)
                    for n in range(n_k):
                        if n % _RESEED == 0:
                            ph = (k0 + n * dk) * L
                            cur_re = cos(ph)
                            cur_im = -sin(ph)
                        acc_re = p_re[r] * cur_re - p_im[r] * cur_im
                        acc_im = p_re[r] * cur_im + p_im[r] * cur_re
                        out[c, a, n] = out[c, a, n] + (acc_re + 1j * acc_im)
                        tmp = cur_re * rot_re - cur_im * rot_im
                        cur_im = cur_re * rot_im + cur_im * rot_re
                        cur_re = tmp


def backproject(double k0, double dk,
                const double complex[:, :, ::1] data,
                const double[:, ::1] tx, const double[:, ::1] rx,
                const double[::1] az,
                const double[:, ::1] voxels,
                double complex[::1] out):
    """Matched-filter sum ``sum_{c,a,n} data[c,a,n] exp(+j k_n L_v)`` per voxel."""
    cdef Py_ssize_t n_chan = data.shape[0]
    cdef Py_ssize_t n_az = data.shape[1]
    cdef Py_ssize_t n_k = data.shape[2]
    cdef Py_ssize_t n_vox = voxels.shape[0]
    cdef Py_ssize_t v, c, a, n
    cdef double L, ph, rot_re, rot_im, cur_re, cur_im, tmp, acc_re, acc_im
    cdef double complex d
    with nogil:
        for v in range(n_vox):
            acc_re = 0.0
            acc_im = 0.0
            for c in range(n_chan):
                for a in range(n_az):
                    L = (_dist(tx[c, 0] + az[a], tx[c, 1], voxels[v, 0], voxels[v, 1], voxels[v, 2])
                         + _dist(rx[c, 0] + az[a], rx[c, 1], voxels[v, 0], voxels[v, 1], voxels[v, 2]))
                    rot_re = cos(dk * L)
                    rot_im = sin(dk * L)
                    for n in range(n_k):
                        if n % _RESEED == 0:
                            ph = (k0 + n * dk) * L
                            cur_re = cos(ph)
                            cur_im = sin(ph)
                        d = data[c, a, n]
                        acc_re = acc_re + d.real * cur_re - d.imag * cur_im
                        acc_im = acc_im + d.real * cur_im + d.imag * cur_re
                        tmp = cur_re * rot_re - cur_im * rot_im
                        cur_im = cur_re * rot_im + cur_im * rot_re
                        cur_re = tmp
            out[v] = acc_re + 1j * acc_im
