"""Central finite-difference checks for every hand-written backward pass.

All checks run in float64. Coordinates whose +/-h perturbation flips any
ReLU mask (or aux sign pattern) are skipped, so kinks never pollute the
comparison.
"""
from dataclasses import dataclass

import numpy as np

from .auxblock import AuxBlockState, aux_backward, aux_forward
from .layers import (BatchNorm, Conv2d, GlobalAvgPool, Linear, PreActBlock, ReLU,
                     softmax_cross_entropy)
from .model import NetworkSpec, ResNet
from .superclass import onehot_batch
from .tensor import Rng

F64 = np.float64
LAYER_TOL = 1e-5
AUX_TOL = 1e-6
KINK_MARGIN = 1e-3


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    trials: int
    skipped: int = 0

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def rel_error(analytic, numeric):
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def numeric_grad(fn, arr, h=1e-6, coords=None):
    """Central differences of ``fn() -> (loss, signature)`` w.r.t. ``arr``.

    ``arr`` is perturbed in place and restored. Returns ``(grad, valid)`` where
    ``valid`` marks coordinates whose perturbations left the signature intact.
    """
    _, sig0 = fn()
    grad = np.zeros(arr.size)
    valid = np.zeros(arr.size, dtype=bool)
    flat = arr.reshape(-1)
    for i in (range(arr.size) if coords is None else coords):
        old = flat[i]
        flat[i] = old + h
        fp, sp = fn()
        flat[i] = old - h
        fm, sm = fn()
        flat[i] = old
        grad[i] = (fp - fm) / (2 * h)
        valid[i] = _same(sig0, sp) and _same(sig0, sm)
    return grad.reshape(arr.shape), valid.reshape(arr.shape)


def _same(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def _masks(relus):
    return [r.last_input > 0 for r in relus]


def _compare(analytic, numeric, valid):
    return rel_error(np.asarray(analytic)[valid], numeric[valid]), int((~valid).sum())


def _check_layer(name, make, n_trials, seed, tol=LAYER_TOL):
    """``make(rng)`` returns ``(forward_fn, inputs, analytic)``:

    ``forward_fn() -> (loss, signature)`` and ``inputs``/``analytic`` are
    parallel lists of arrays and their analytic gradients.
    """
    worst, skipped = 0.0, 0
    for t in range(n_trials):
        rng = Rng(seed, name, t)
        fn, inputs, analytic = make(rng)
        for arr, ana in zip(inputs, analytic):
            num, valid = numeric_grad(fn, arr)
            err, sk = _compare(ana, num, valid)
            worst = max(worst, err)
            skipped += sk
    return CheckResult(name, worst, tol, n_trials, skipped)


# -- individual layer checks ------------------------------------------------------

def _weighted(out, g):
    return float(np.sum(out * g))


def _make_conv(stride, pad, k):
    def make(rng):
        b, c, f = 2, int(rng.integers(1, 4)), int(rng.integers(1, 4))
        h = int(rng.integers(k, 7))
        layer = Conv2d(c, f, k, rng, stride=stride, pad=pad, dtype=F64)
        x = rng.normal((b, h, h, c), dtype=F64)
        out = layer.forward(x)
        g = rng.normal(out.shape, dtype=F64)
        dx = layer.backward(g)

        def fn():
            return _weighted(layer.forward(x), g), []
        return fn, [x, layer.params["weight"]], [dx, layer.grads["weight"]]
    return make


def _make_bn(rng):
    c = int(rng.integers(1, 5))
    layer = BatchNorm(c, dtype=F64)
    layer.params["gamma"][:] = rng.normal(c, dtype=F64)
    layer.params["beta"][:] = rng.normal(c, dtype=F64)
    x = rng.normal((3, 4, 4, c), dtype=F64) * 2 + 0.5
    g = rng.normal(x.shape, dtype=F64)
    layer.forward(x)
    dx = layer.backward(g)

    def fn():
        return _weighted(layer.forward(x), g), []
    return fn, [x, layer.params["gamma"], layer.params["beta"]], [dx, layer.grads["gamma"], layer.grads["beta"]]


def _make_relu(rng):
    layer = ReLU()
    x = rng.normal((4, 7), dtype=F64)
    x[np.abs(x) < KINK_MARGIN] += 2 * KINK_MARGIN
    g = rng.normal(x.shape, dtype=F64)
    layer.forward(x)
    dx = layer.backward(g)

    def fn():
        return _weighted(layer.forward(x), g), _masks([layer])
    return fn, [x], [dx]


def _make_linear(rng):
    fin, fout = int(rng.integers(1, 8)), int(rng.integers(1, 8))
    layer = Linear(fin, fout, rng, dtype=F64)
    layer.params["bias"][:] = rng.normal(fout, dtype=F64)
    x = rng.normal((5, fin), dtype=F64)
    g = rng.normal((5, fout), dtype=F64)
    layer.forward(x)
    dx = layer.backward(g)

    def fn():
        return _weighted(layer.forward(x), g), []
    return fn, [x, layer.params["weight"], layer.params["bias"]], [dx, layer.grads["weight"], layer.grads["bias"]]


def _make_pool(rng):
    layer = GlobalAvgPool()
    x = rng.normal((2, 3, 5, 4), dtype=F64)
    g = rng.normal((2, 4), dtype=F64)
    layer.forward(x)
    dx = layer.backward(g)

    def fn():
        return _weighted(layer.forward(x), g), []
    return fn, [x], [dx]


def _make_xent(rng):
    b, k = int(rng.integers(1, 9)), 10
    logits = rng.normal((b, k), std=3.0, dtype=F64)
    labels = rng.integers(0, k, b)
    _, grad = softmax_cross_entropy(logits, labels)

    def fn():
        return softmax_cross_entropy(logits, labels)[0], []
    return fn, [logits], [grad]


def _make_block(cin, cout, stride):
    def make(rng):
        block = PreActBlock(cin, cout, rng, stride=stride, dtype=F64)
        for bn in (block.bn1, block.bn2):
            bn.params["gamma"][:] = 1 + 0.3 * rng.normal(bn.params["gamma"].shape, dtype=F64)
            bn.params["beta"][:] = 0.3 * rng.normal(bn.params["beta"].shape, dtype=F64)
        x = rng.normal((2, 6, 6, cin), dtype=F64)
        out = block.forward(x)
        g = rng.normal(out.shape, dtype=F64)
        dx = block.backward(g)
        inputs, analytic = [x], [dx]
        for _, layer in block.children():
            for k in layer.params:
                inputs.append(layer.params[k])
                analytic.append(layer.grads[k].copy())

        def fn():
            return _weighted(block.forward(x), g), _masks(block.relus())
        return fn, inputs, analytic
    return make


def check_network(seed=0, coords_per_tensor=6, n_trials=3):
    """End-to-end check of a tiny aux-enabled ResNet on sampled coordinates."""
    worst, skipped = 0.0, 0
    for t in range(n_trials):
        rng = Rng(seed, "network", t)
        spec = NetworkSpec(depth=10, stage_widths=(3, 4, 5), in_channels=1,
                           aux_enabled=True, aux_superclass_count=2)
        model = ResNet(spec, rng, dtype=F64)
        x = rng.normal((4, 1, 6, 6), dtype=F64)
        labels = rng.integers(0, 10, 4)
        onehot = onehot_batch(labels % 2, 2, dtype=F64)

        def fn():
            loss, _ = softmax_cross_entropy(model.forward(x, onehot), labels)
            z = model.aux.state.z
            return loss, _masks(model.relus()) + [z > onehot]

        _, grad = softmax_cross_entropy(model.forward(x, onehot), labels)
        if np.min(np.abs(model.aux.state.z - onehot)) <= KINK_MARGIN:
            continue
        model.backward(grad)
        for name, layer, key in model.parameters():
            p = layer.params[key]
            ana = layer.grads[key].copy()
            coords = rng.permutation(p.size)[:coords_per_tensor]
            num, valid = numeric_grad(fn, p, coords=coords)
            mask = np.zeros(p.size, dtype=bool)
            mask[coords] = True
            mask &= valid.reshape(-1)
            err = rel_error(ana.reshape(-1)[mask], num.reshape(-1)[mask])
            worst = max(worst, err)
            skipped += int(len(coords) - mask.sum())
    return CheckResult("resnet_end_to_end", worst, LAYER_TOL, n_trials, skipped)


# -- aux block ----------------------------------------------------------------------

def draw_aux_config(rng, l=None, s=None, b=None, margin=KINK_MARGIN):
    """Random (y, x_star, state) with every |z - x_star| above ``margin``."""
    l = int(rng.integers(1, 65)) if l is None else l
    s = int(rng.integers(1, 6)) if s is None else s
    b = int(rng.integers(1, 9)) if b is None else b
    while True:
        y = np.abs(rng.normal((b, l), dtype=F64))
        state = AuxBlockState(w=rng.normal((l, s), std=1.0 / np.sqrt(l), dtype=F64))
        x_star = onehot_batch(rng.integers(0, s, b), s, dtype=F64)
        z = y @ state.w
        if np.min(np.abs(z - x_star)) > margin:
            return y, x_star, state


def check_aux(n_trials=50, seed=0, corrupt_chi=False):
    worst = 0.0
    for t in range(n_trials):
        rng = Rng(seed, "aux", t)
        y, x_star, state = draw_aux_config(rng)
        out = aux_forward(y, x_star, state)
        g = rng.normal(out.shape, dtype=F64)
        if corrupt_chi:
            state.chi = -state.chi
        dy, dw = aux_backward(g, state)

        def fn():
            o = aux_forward(y, x_star, state)
            return _weighted(o, g), [state.chi]

        for arr, ana in ((y, dy), (state.w, dw)):
            num, valid = numeric_grad(fn, arr)
            err, _ = _compare(ana, num, valid)
            worst = max(worst, err)
    return CheckResult("aux_block", worst, AUX_TOL, n_trials)


def run_all(seed=0, layer_trials=20, aux_trials=50, corrupt_chi=False):
    results = [
        _check_layer("conv2d_3x3_s1", _make_conv(1, 1, 3), layer_trials, seed),
        _check_layer("conv2d_3x3_s2", _make_conv(2, 1, 3), layer_trials, seed),
        _check_layer("conv2d_1x1_s2", _make_conv(2, 0, 1), layer_trials, seed),
        _check_layer("batchnorm", _make_bn, layer_trials, seed),
        _check_layer("relu", _make_relu, layer_trials, seed),
        _check_layer("linear", _make_linear, layer_trials, seed),
        _check_layer("global_avg_pool", _make_pool, layer_trials, seed),
        _check_layer("softmax_cross_entropy", _make_xent, layer_trials, seed, tol=AUX_TOL),
        _check_layer("preact_block_identity", _make_block(3, 3, 1), layer_trials, seed),
        _check_layer("preact_block_projection", _make_block(2, 4, 2), layer_trials, seed),
        check_network(seed),
        check_aux(aux_trials, seed, corrupt_chi=corrupt_chi),
    ]
    return results
