"""Time the numba kernels against their pure-numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from frsbackdoor import _kernels


def _cases(rng):
    src = rng.random((3, 256, 256))
    ang = np.deg2rad(17.0)
    m = np.array([[np.cos(ang) * 1.7, -np.sin(ang) * 1.7, 20.0],
                  [np.sin(ang) * 1.7, np.cos(ang) * 1.7, -5.0]])
    true_ids = rng.integers(0, 64, 128)
    pred_ids = np.where(rng.random(128) < 0.5, true_ids, rng.integers(0, 64, 128))
    hits, counts = np.zeros(64, np.int64), np.zeros(64, np.int64)
    return {
        "warp 3x256x256 -> 224x224": (
            lambda: _kernels.warp_bilinear_numpy(src, m, 224, 224, _kernels.BORDER_ZERO),
            lambda: _kernels.warp_bilinear_numba(src, m, 224, 224, _kernels.BORDER_ZERO),
        ),
        "tally batch of 128": (
            lambda: _kernels.tally_numpy(hits, counts, true_ids, pred_ids),
            lambda: _kernels.tally_numba(hits, counts, true_ids, pred_ids),
        ),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>10}")
    for name, (np_fn, nb_fn) in _cases(rng).items():
        t_np = min(timeit.repeat(np_fn, number=1, repeat=args.repeat)) * 1e3
        if _kernels.HAVE_NUMBA:
            nb_fn()  # compile outside the timed region
            t_nb = min(timeit.repeat(nb_fn, number=1, repeat=args.repeat)) * 1e3
            print(f"{name:<28}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>9.1f}x")
        else:
            print(f"{name:<28}{t_np:>12.3f}{'n/a':>12}{'':>10}")


if __name__ == "__main__":
    main()
