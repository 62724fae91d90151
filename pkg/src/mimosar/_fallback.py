"""Pure-numpy versions of the compiled kernels (same signatures, same layout)."""
import numpy as np

# complex elements per temporary block in back-projection
_BLOCK = 1 << 22


def _path_sums(tx, rx, az, points):
    """Two-way path length, shape (n_points, n_chan, n_az)."""
    px = points[:, 0][:, None, None]
    py = points[:, 1][:, None, None]
    pz2 = (points[:, 2] ** 2)[:, None, None]
    ax = az[None, None, :]
    d_tx = np.sqrt((tx[None, :, 0, None] + ax - px) ** 2 + (tx[None, :, 1, None] - py) ** 2 + pz2)
    d_rx = np.sqrt((rx[None, :, 0, None] + ax - px) ** 2 + (rx[None, :, 1, None] - py) ** 2 + pz2)
    return d_tx + d_rx


def simulate(k0, dk, n_k, tx, rx, az, refl, p_re, p_im, out):
    k = k0 + dk * np.arange(n_k)
    p = np.asarray(p_re) + 1j * np.asarray(p_im)
    for r in range(refl.shape[0]):
        L = _path_sums(tx, rx, az, refl[r:r + 1])[0]
        out += p[r] * np.exp(-1j * L[:, :, None] * k)


def backproject(k0, dk, data, tx, rx, az, voxels, out):
    n_chan, n_az, n_k = data.shape
    k = k0 + dk * np.arange(n_k)
    step = max(1, _BLOCK // (n_chan * n_az * n_k))
    flat = data.reshape(-1)
    for start in range(0, voxels.shape[0], step):
        vox = voxels[start:start + step]
        L = _path_sums(tx, rx, az, vox).reshape(len(vox), -1)
        phase = np.exp(1j * L[:, :, None] * k).reshape(len(vox), -1)
        # row-wise sum, not BLAS: the result must not depend on how voxels are split
        out[start:start + len(vox)] = (phase * flat).sum(axis=1)
