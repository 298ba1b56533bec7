"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from pglio import _kernels_py

try:
    from pglio import _kernels as compiled
except ImportError:
    compiled = None


def admission_case(n=20000, voxels=2000, cap=20, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 5, (n, 3))
    vid = rng.integers(0, voxels, n).astype(np.int64)
    return pts, vid, cap, voxels


def run_admission(mod, case):
    pts, vid, cap, voxels = case
    slots = np.zeros((voxels, cap, 3))
    counts = np.zeros(voxels, dtype=np.int64)
    mod.admit_points(pts, vid, slots, counts, 0.05**2)


def sampling_case(n=120 * 121, seed=0):
    # 120 features of 11x11 patches on a 64 x 1024 image, as in one photometric factor
    rng = np.random.default_rng(seed)
    img = rng.uniform(size=(64, 1024))
    mask = np.ones(img.shape, bool)
    return img, mask, rng.uniform(0, 1024, n), rng.uniform(0, 63, n)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    adm, smp = admission_case(), sampling_case()
    mods = [("python", _kernels_py)] + ([("cython", compiled)] if compiled else [])
    results = {}
    for name, mod in mods:
        results[name] = (
            min(timeit.repeat(lambda: run_admission(mod, adm), number=1, repeat=args.repeat)),
            min(timeit.repeat(lambda: mod.bilinear_sample(*smp), number=1, repeat=args.repeat)),
        )
    print(f"{'kernel':<18}" + "".join(f"{n:>12}" for n, _ in mods) + ("     speedup" if compiled else ""))
    for k, label in enumerate(["admit_points", "bilinear_sample"]):
        row = f"{label:<18}" + "".join(f"{results[n][k] * 1e3:>10.2f}ms" for n, _ in mods)
        if compiled:
            row += f"{results['python'][k] / results['cython'][k]:>11.1f}x"
        print(row)
    if not compiled:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
