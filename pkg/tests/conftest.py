import os
from pathlib import Path

import numpy as np
import pytest

from hal.data import LabeledDataset, compute_channel_stats
from hal.tensor import Rng

ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = ROOT / "data" / "mnist10k"
MNIST_PATHS = {
    "train_images": str(MNIST_DIR / "train-images-idx3-ubyte.gz"),
    "train_labels": str(MNIST_DIR / "train-labels-idx1-ubyte.gz"),
    "test_images": str(MNIST_DIR / "test-images-idx3-ubyte.gz"),
    "test_labels": str(MNIST_DIR / "test-labels-idx1-ubyte.gz"),
}
# Set to a directory holding the four official MNIST files to run the full-size loader checks.
OFFICIAL_MNIST = os.environ.get("HAL_MNIST_DIR")


@pytest.fixture
def rng():
    return Rng(1234, "tests")


@pytest.fixture(scope="session")
def mnist_paths():
    return dict(MNIST_PATHS)


def synthetic_dataset(n=40, c=1, hw=8, seed=0, split="train"):
    """Small random dataset with every class present."""
    r = Rng(seed, "synthetic", split)
    images = r.uniform((n, c, hw, hw)).astype(np.float32)
    labels = np.arange(n) % 10
    return LabeledDataset(images=images, labels=labels, split=split)


@pytest.fixture
def tiny_data():
    train = synthetic_dataset(40, split="train")
    test = synthetic_dataset(20, seed=1, split="test")
    stats = compute_channel_stats(train)
    return train.with_stats(stats), test.with_stats(stats)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
