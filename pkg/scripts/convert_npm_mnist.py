"""Convert the digits bundled in the npm ``mnist`` package to IDX files.

The package ships 10,000 MNIST digits as per-class JSON arrays of pixel
intensities in [0, 1]. This writes a class-balanced training split (the first
``--train-per-class`` digits of each class) and a test split holding the rest.

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/convert_npm_mnist.py package/src/digits data/mnist10k
"""
import argparse
import json
from pathlib import Path

import numpy as np

from hal.data import write_idx


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--train-per-class", type=int, default=600)
    args = ap.parse_args()

    train_x, train_y, test_x, test_y = [], [], [], []
    for digit in range(10):
        with open(args.digits_dir / f"{digit}.json") as fh:
            flat = np.asarray(json.load(fh)["data"], dtype=np.float64)
        pixels = np.clip(np.rint(flat * 255.0), 0, 255).astype(np.uint8).reshape(-1, 28, 28)
        k = args.train_per_class
        train_x.append(pixels[:k])
        train_y.append(np.full(min(k, len(pixels)), digit, dtype=np.uint8))
        test_x.append(pixels[k:])
        test_y.append(np.full(len(pixels) - len(pixels[:k]), digit, dtype=np.uint8))

    args.out_dir.mkdir(parents=True, exist_ok=True)
    # interleave classes so file order is not sorted by label
    for split, xs, ys in (("train", train_x, train_y), ("test", test_x, test_y)):
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        order = np.random.default_rng(20190101).permutation(len(y))
        write_idx(args.out_dir / f"{split}-images-idx3-ubyte.gz", x[order])
        write_idx(args.out_dir / f"{split}-labels-idx1-ubyte.gz", y[order])
        print(f"{split}: {len(y)} images, per class {np.bincount(y, minlength=10).tolist()}")


if __name__ == "__main__":
    main()
