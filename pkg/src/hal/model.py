"""Pre-activation ResNet with an optional auxiliary block before the classifier."""
from dataclasses import dataclass

import numpy as np

from .auxblock import AuxBlock
from .checkpoint import load_tensors, save_tensors
from .errors import ConfigError, DimensionError
from .layers import BatchNorm, Conv2d, GlobalAvgPool, Linear, PreActBlock, ReLU


@dataclass(frozen=True)
class NetworkSpec:
    depth: int = 10
    stage_widths: tuple = (16, 32, 64)
    num_classes: int = 10
    in_channels: int = 1
    aux_enabled: bool = False
    aux_superclass_count: int = 0

    def __post_init__(self):
        if self.depth < 10 or (self.depth - 4) % 6:
            raise ConfigError(f"depth must be 6n+4 with n >= 1, got {self.depth}", key="depth")
        if self.aux_enabled and self.aux_superclass_count < 1:
            raise ConfigError("aux block needs aux_superclass_count >= 1", key="aux_superclass_count")

    @property
    def blocks_per_stage(self):
        return (self.depth - 4) // 6

    @property
    def features(self):
        return self.stage_widths[-1]


class ResNet:
    """stem conv -> residual stages -> BN/ReLU -> pool -> [aux] -> linear."""

    def __init__(self, spec, rng, dtype=np.float32, bn_momentum=0.9, bn_eps=1e-5):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        w0 = spec.stage_widths[0]
        self.stem = Conv2d(spec.in_channels, w0, 3, rng, stride=1, pad=1, dtype=dtype, input_grad=False)
        self.blocks = []
        cin = w0
        for s, width in enumerate(spec.stage_widths):
            for k in range(spec.blocks_per_stage):
                stride = 2 if (s > 0 and k == 0) else 1
                block = PreActBlock(cin, width, rng, stride, dtype, bn_momentum, bn_eps)
                self.blocks.append((f"stage{s + 1}.block{k}", block))
                cin = width
        self.bn = BatchNorm(cin, bn_momentum, bn_eps, dtype)
        self.relu = ReLU()
        self.pool = GlobalAvgPool()
        self.aux = AuxBlock(cin, spec.aux_superclass_count, rng, dtype) if spec.aux_enabled else None
        self.fc = Linear(cin, spec.num_classes, rng, dtype=dtype)

    # -- traversal -----------------------------------------------------------
    def layers(self):
        """(name, layer) for every layer that owns parameters or buffers."""
        out = [("stem", self.stem)]
        for name, block in self.blocks:
            out.extend((f"{name}.{child}", layer) for child, layer in block.children())
        out.append(("bn", self.bn))
        if self.aux is not None:
            out.append(("aux", self.aux))
        out.append(("fc", self.fc))
        return out

    def relus(self):
        out = []
        for _, block in self.blocks:
            out.extend(block.relus())
        out.append(self.relu)
        return out

    def parameters(self):
        return [(f"{n}.{k}", layer, k) for n, layer in self.layers() for k in layer.params]

    def state_dict(self):
        state = {}
        for n, layer in self.layers():
            for k, v in layer.params.items():
                state[f"{n}.{k}"] = v
            for k, v in layer.buffers.items():
                state[f"{n}.{k}"] = v
        return state

    def load_state_dict(self, state):
        expected = self.state_dict()
        missing = sorted(set(expected) - set(state))
        if missing:
            raise ConfigError(f"checkpoint lacks tensors: {', '.join(missing[:5])}")
        for n, layer in self.layers():
            for store in (layer.params, layer.buffers):
                for k in store:
                    value = np.asarray(state[f"{n}.{k}"])
                    if value.shape != store[k].shape:
                        raise DimensionError(f"{n}.{k}: checkpoint {value.shape} vs model {store[k].shape}")
                    store[k][...] = value

    def save(self, path, extra=None):
        tensors = dict(self.state_dict())
        if extra:
            tensors.update(extra)
        save_tensors(path, tensors)

    def load(self, path):
        self.load_state_dict(load_tensors(path))

    # -- compute ---------------------------------------------------------------
    def features(self, x, train=True):
        """NCHW images -> pooled feature rows (the aux block input)."""
        h = np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=self.dtype)
        h = self.stem.forward(h, train)
        for _, block in self.blocks:
            h = block.forward(h, train)
        h = self.relu.forward(self.bn.forward(h, train), train)
        return self.pool.forward(h, train)

    def forward(self, x, x_star=None, train=True):
        feats = self.features(x, train)
        if self.aux is not None:
            if x_star is None:
                raise ConfigError("auxiliary model requires one-hot superclass input")
            feats = self.aux.forward(feats, x_star, train)
        return self.fc.forward(feats, train)

    def backward(self, dlogits):
        g = self.fc.backward(dlogits)
        if self.aux is not None:
            g = self.aux.backward(g)
        g = self.pool.backward(g)
        g = self.bn.backward(self.relu.backward(g))
        for _, block in reversed(self.blocks):
            g = block.backward(g)
        self.stem.backward(g)
