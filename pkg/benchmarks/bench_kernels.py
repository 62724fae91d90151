"""Time the compiled and numpy kernels on the same problem.

    python benchmarks/bench_kernels.py [--channels 86] [--azimuth 32] [--workers N]
"""
import argparse
import time

import numpy as np

from mimosar import kernels


def problem(n_chan, n_az, n_refl, n_vox, seed=0):
    rng = np.random.default_rng(seed)
    tx = np.c_[np.zeros(n_chan), rng.uniform(-0.04, 0.04, n_chan)]
    rx = np.c_[np.zeros(n_chan), rng.uniform(-0.04, 0.04, n_chan)]
    az = np.linspace(-0.03, 0.03, n_az)
    refl = np.c_[rng.uniform(-0.02, 0.02, (n_refl, 2)), rng.uniform(0.25, 0.35, n_refl)]
    p = rng.normal(size=n_refl) + 1j * rng.normal(size=n_refl)
    g = np.linspace(-0.02, 0.02, int(round(n_vox ** 0.5)))
    vox = np.c_[np.repeat(g, g.size), np.tile(g, g.size), np.full(g.size ** 2, 0.3)]
    return tx, rx, az, refl, p, vox


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--channels", type=int, default=86)
    ap.add_argument("--azimuth", type=int, default=32)
    ap.add_argument("--samples", type=int, default=320)
    ap.add_argument("--reflectors", type=int, default=5)
    ap.add_argument("--voxels", type=int, default=256)
    ap.add_argument("--workers", type=int, default=kernels.default_workers())
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    k0, dk = 1612.7, 0.47
    tx, rx, az, refl, p, vox = problem(args.channels, args.azimuth, args.reflectors, args.voxels)
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (default {kernels.BACKEND}), workers {args.workers}")
    print(f"simulate: {args.channels} ch x {args.azimuth} az x {args.samples} samples, {len(refl)} reflectors")
    print(f"backproject: {len(vox)} voxels over the same cube")

    rows, ref = [], {}
    for b in backends:
        t_sim, cube = best_of(lambda: kernels.simulate(k0, dk, args.samples, tx, rx, az, refl, p,
                                                       backend=b, workers=args.workers), args.repeat)
        t_bp, img = best_of(lambda: kernels.backproject(k0, dk, cube, tx, rx, az, vox,
                                                        backend=b, workers=args.workers), args.repeat)
        ref.setdefault("cube", cube)
        ref.setdefault("img", img)
        err = max(np.max(np.abs(cube - ref["cube"])) / np.max(np.abs(ref["cube"])),
                  np.max(np.abs(img - ref["img"])) / np.max(np.abs(ref["img"])))
        rows.append((b, t_sim, t_bp, err))

    base = {r[0]: r for r in rows}.get("numpy", rows[0])
    print(f"\n{'backend':<8} {'simulate s':>11} {'speedup':>8} {'backproject s':>14} {'speedup':>8} {'max rel diff':>13}")
    for b, t_sim, t_bp, err in rows:
        print(f"{b:<8} {t_sim:>11.4f} {base[1] / t_sim:>7.1f}x {t_bp:>14.4f} {base[2] / t_bp:>7.1f}x {err:>13.1e}")


if __name__ == "__main__":
    main()
