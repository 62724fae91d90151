import numpy as np


def rel_err(a, b):
    """Max abs deviation relative to the max magnitude of ``b``."""
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def brute_dft_centered(x, n_fft):
    """Direct O(N n_fft) evaluation of the sweep-centred range transform."""
    n = len(x)
    npr = np.arange(n) - (n - 1) / 2
    m = np.arange(n_fft)
    return np.array([np.sum(x * np.exp(2j * np.pi * mm * npr / n_fft)) for mm in m])


def half_power_width(f, lo, hi, tol=1e-12):
    """Width of the -3 dB main lobe of a symmetric |f|, by bisection."""
    peak = abs(f(0.0))
    target = peak / np.sqrt(2)
    a, b = lo, hi
    while b - a > tol:
        mid = 0.5 * (a + b)
        if abs(f(mid)) > target:
            a = mid
        else:
            b = mid
    return a + b
