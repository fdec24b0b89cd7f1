"""Auxiliary block: superclass-driven per-sample feature scaling.

Forward, per batch row ``r``::

    z[r, j] = sum_i w[i, j] * y[r, i]
    a[r]    = sum_j |z[r, j] - x_star[r, j]|
    out[r]  = y[r] * a[r]

Backward uses the sign indicator ``chi = +1 if z > x_star else -1`` (ties go
to -1) rather than a smoothed subgradient.
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DataError, DimensionError, StateError
from .layers import Layer, he_init

SCORE_HEADER = ("index", "superclass", "score")


@dataclass
class AuxBlockState:
    """Weights ``w`` [l, s] plus the intermediates cached by a forward pass."""

    w: np.ndarray
    y_prev: np.ndarray = field(default=None, repr=False)
    x_star: np.ndarray = field(default=None, repr=False)
    z: np.ndarray = field(default=None, repr=False)
    chi: np.ndarray = field(default=None, repr=False)
    a: np.ndarray = field(default=None, repr=False)

    @classmethod
    def init(cls, features, superclasses, rng, dtype=np.float32):
        return cls(w=he_init((features, superclasses), features, rng, dtype))

    @property
    def ready(self):
        return self.a is not None


def validate_onehot(x_star, s=None):
    x_star = np.asarray(x_star)
    if x_star.ndim != 2:
        raise DimensionError(f"one-hot batch must be rank 2, got {x_star.shape}")
    if s is not None and x_star.shape[1] != s:
        raise DimensionError(f"one-hot width {x_star.shape[1]} != {s} superclasses")
    if not np.all((x_star == 0) | (x_star == 1)) or not np.all(x_star.sum(axis=1) == 1):
        raise DataError("superclass rows must be one-hot (entries in {0,1}, row sum 1)")
    return x_star


def aux_forward(y_prev, x_star, state):
    """Scale each feature row by its auxiliary score; fills the state cache."""
    w = state.w
    if y_prev.ndim != 2 or y_prev.shape[1] != w.shape[0]:
        raise DimensionError(f"features {y_prev.shape} do not match aux weights {w.shape}")
    x_star = validate_onehot(x_star, w.shape[1])
    if x_star.shape[0] != y_prev.shape[0]:
        raise DimensionError(f"batch mismatch: {y_prev.shape[0]} features vs {x_star.shape[0]} one-hot rows")
    y_prev = np.ascontiguousarray(y_prev)
    x_star = np.ascontiguousarray(x_star, dtype=y_prev.dtype)
    z, a, out = _kernels.aux_forward(y_prev, np.ascontiguousarray(w, dtype=y_prev.dtype), x_star)
    state.y_prev, state.x_star, state.z, state.a = y_prev, x_star, z, a
    state.chi = np.where(z > x_star, 1, -1).astype(y_prev.dtype)
    return out


def aux_backward(grad_out, state):
    """Return ``(grad_y_prev, grad_w)``; ``grad_w`` is summed over the batch."""
    if not state.ready:
        raise StateError("aux_backward called before aux_forward")
    if grad_out.shape != state.y_prev.shape:
        raise DimensionError(f"grad_out {grad_out.shape} vs cached features {state.y_prev.shape}")
    grad_y, grad_w, _ = _kernels.aux_backward(
        np.ascontiguousarray(grad_out, dtype=state.y_prev.dtype), state.y_prev,
        np.ascontiguousarray(state.w, dtype=state.y_prev.dtype), state.chi, state.a)
    return grad_y, grad_w


def aux_score_export(state, superclass_labels, start_index=0):
    """Rows of ``(sample_index, superclass, a)`` for the cached batch."""
    if not state.ready:
        raise StateError("no forward pass cached")
    labels = np.asarray(superclass_labels)
    if labels.shape[0] != state.a.shape[0]:
        raise DimensionError(f"{labels.shape[0]} labels for {state.a.shape[0]} cached scores")
    return [(start_index + r, int(labels[r]), float(state.a[r])) for r in range(labels.shape[0])]


def write_score_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCORE_HEADER)
        for index, superclass, score in rows:
            writer.writerow((index, superclass, f"{score:.9g}"))


def read_score_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != SCORE_HEADER:
            raise DataError(f"unexpected score CSV header {header}")
        return [(int(i), int(s), float(a)) for i, s, a in reader]


class AuxBlock(Layer):
    """Layer wrapper around :class:`AuxBlockState` for use inside a model."""

    def __init__(self, features, superclasses, rng, dtype=np.float32):
        super().__init__()
        self.state = AuxBlockState.init(features, superclasses, rng, dtype)
        self.params["w"] = self.state.w
        self.zero_grad()

    @property
    def superclasses(self):
        return self.params["w"].shape[1]

    def forward(self, y_prev, x_star, train=True):
        self.state.w = self.params["w"]
        out = aux_forward(y_prev, x_star, self.state)
        self._cache = True
        return out

    def backward(self, dout):
        self._take_cache()
        grad_y, self.grads["w"] = aux_backward(dout, self.state)
        return grad_y
