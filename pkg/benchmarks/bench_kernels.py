"""Time the hot kernels under both backends.

Each backend runs in its own interpreter because ``HAL_USE_NUMBA`` is read
at import time::

    python benchmarks/bench_kernels.py            # both backends, table
    python benchmarks/bench_kernels.py --repeat 50
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np


def _cases():
    from hal import _kernels as K
    from hal.model import NetworkSpec, ResNet
    from hal.superclass import onehot_batch
    from hal.tensor import Rng

    rng = Rng(0, "bench")
    x = rng.normal((128, 28, 28, 16))
    cols = np.empty((128 * 28 * 28, 9 * 16), np.float32)
    xpad = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    dx = np.empty_like(xpad)
    flat = x.reshape(-1, 16)
    gamma, beta = np.ones(16, np.float32), np.zeros(16, np.float32)
    y = np.abs(rng.normal((128, 64)))
    w = rng.normal((64, 2))
    xs = onehot_batch(rng.integers(0, 2, 128), 2)
    z, a = K.aux_forward(y, w, xs)[:2]
    chi = np.where(z > xs, 1, -1).astype(np.float32)
    g = rng.normal((128, 64))
    small = rng.normal((8, 3, 12, 12), dtype=np.float64)
    kern = rng.normal((4, 3, 3, 3), dtype=np.float64)

    model = ResNet(NetworkSpec(depth=10, aux_enabled=True, aux_superclass_count=2), Rng(0, "init"))
    images = rng.normal((128, 1, 28, 28))
    labels = onehot_batch(rng.integers(0, 10, 128), 10)

    def step():
        logits = model.forward(images, xs, train=True)
        model.backward(logits - labels)

    return {
        "im2col 128x28x28x16 k3": lambda: K.im2col_nhwc(xpad, 3, 3, 1, 28, 28, cols),
        "col2im 128x28x28x16 k3": lambda: K.col2im_nhwc(cols, 3, 3, 1, 28, 28, dx),
        "bn_forward 100352x16": lambda: K.bn_forward(flat, gamma, beta, 1e-5),
        "conv2d_direct 8x3x12x12": lambda: K.conv2d_direct(small, kern, 1, 10, 10),
        "aux_forward b128 l64 s2": lambda: K.aux_forward(y, w, xs),
        "aux_backward b128 l64 s2": lambda: K.aux_backward(g, y, w, chi, a),
        "resnet10 fwd+bwd b128": step,
    }


def measure(repeat):
    """Best-of-``repeat`` seconds per case for the backend of this process."""
    from hal import _kernels as K

    out = {}
    for name, fn in _cases().items():
        fn()  # warm-up triggers JIT compilation
        n = 1 if name.startswith("resnet") else 5
        out[name] = min(timeit.repeat(fn, number=n, repeat=repeat)) / n
    return K.BACKEND, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--repeat", type=int, default=10)
    p.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = p.parse_args(argv)
    if args.worker:
        backend, times = measure(args.repeat)
        print(json.dumps({"backend": backend, "times": times}))
        return 0

    results = {}
    for flag in ("1", "0"):
        env = dict(os.environ, HAL_USE_NUMBA=flag)
        proc = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(args.repeat)],
                              env=env, capture_output=True, text=True, check=True)
        res = json.loads(proc.stdout.strip().splitlines()[-1])
        results[res["backend"]] = res["times"]
    nb, npy = results.get("numba", {}), results["numpy"]
    print(f"{'kernel':<28} {'numba (ms)':>11} {'numpy (ms)':>11} {'speedup':>8}")
    for name, t in npy.items():
        tn = nb.get(name, float("nan"))
        print(f"{name:<28} {tn * 1e3:11.3f} {t * 1e3:11.3f} {t / tn:8.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
