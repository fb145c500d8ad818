"""Time the numba and numpy kernel backends on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--batch 64]

Prints per-call timings for im2col, max pooling (forward and backward) and
one desk-profile training step, and checks the two backends agree bitwise.
"""

import argparse
import time

import numpy as np

from oscifit.model import ArchConfig, build_model
from oscifit.ndnet import _kernels, set_backend


def best_of(fn, repeat):
    fn()  # warm-up, includes numba compilation
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(batch, rng):
    xpad = rng.standard_normal((batch, 256 + 4, 32)).astype(np.float32)
    x = rng.standard_normal((batch, 256, 32)).astype(np.float32)
    dy = rng.standard_normal((batch, 128, 32)).astype(np.float32)
    _, idx = _kernels.maxpool_forward_numpy(x, 2)
    model = build_model(ArchConfig.desk(), 0)
    xs = rng.random((batch, 256)).astype(np.float32)
    lat = rng.random((batch, 7)).astype(np.float32)
    return {
        "im2col K=5": lambda: _kernels.im2col(xpad, 5, 256),
        "maxpool fwd": lambda: _kernels.maxpool_forward(x, 2),
        "maxpool bwd": lambda: _kernels.maxpool_backward(dy, idx, 2, 256),
        "train step": lambda: model.loss_and_grads(xs, xs, lat, 0.5),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=64)
    args = ap.parse_args()
    results = {}
    outputs = {}
    for name in ("numba", "numpy"):
        set_backend(name)
        fns = cases(args.batch, np.random.default_rng(0))
        results[name] = {k: best_of(f, args.repeat) for k, f in fns.items()}
        outputs[name] = [fns[k]() for k in ("im2col K=5", "maxpool fwd", "maxpool bwd")]
    same = all(
        np.array_equal(a, b)
        for ra, rb in zip(outputs["numba"], outputs["numpy"])
        for a, b in zip(ra if isinstance(ra, tuple) else (ra,), rb if isinstance(rb, tuple) else (rb,))
    )
    print(f"{'kernel':<14}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for k in results["numba"]:
        a, b = results["numba"][k] * 1e3, results["numpy"][k] * 1e3
        print(f"{k:<14}{a:>10.3f}{b:>10.3f}{b / a:>9.2f}")
    print(f"backends bit-identical: {same}")


if __name__ == "__main__":
    main()
