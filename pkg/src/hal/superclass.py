"""Superclass schemes: partitions of the ten class labels into coarse groups."""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

NUM_CLASSES = 10

CIFAR10_CLASSES = ("airplane", "car", "bird", "cat", "deer",
                   "dog", "frog", "horse", "ship", "truck")

# Group index is the superclass id.
_DIGIT_CASES = {
    "case1": ("label >= 5", [[5, 6, 7, 8, 9], [0, 1, 2, 3, 4]]),
    "case2": ("label mod 2", [[1, 3, 5, 7, 9], [0, 2, 4, 6, 8]]),
    "case3": ("prime", [[2, 3, 5, 7], [0, 1, 4, 6, 8, 9]]),
    "case4": ("circle / curve / straight line", [[0, 6, 8, 9], [2, 3, 5], [1, 4, 7]]),
}

_CIFAR10_CASES = {
    "case1": ("none (label >= 5)", [[5, 6, 7, 8, 9], [0, 1, 2, 3, 4]]),
    "case2": ("none (odd / even)", [[1, 3, 5, 7, 9], [0, 2, 4, 6, 8]]),
    "case3": ("animal / transportation", [[2, 3, 4, 5, 6, 7], [0, 1, 8, 9]]),
    "case4": ("car / small animal / big animal / craft / others",
              [[1, 9], [3, 5], [4, 7], [0, 8], [2, 6]]),
}

BUILTIN_TABLE = {
    "mnist": _DIGIT_CASES,
    "svhn": _DIGIT_CASES,
    "cifar10": _CIFAR10_CASES,
}

CASES = ("case1", "case2", "case3", "case4")


@dataclass(frozen=True)
class SuperclassScheme:
    name: str
    mapping: tuple
    semantics: str = ""

    def __post_init__(self):
        if len(self.mapping) != NUM_CLASSES:
            raise ConfigError(f"scheme {self.name!r}: mapping must cover {NUM_CLASSES} labels")
        s = max(self.mapping) + 1
        if min(self.mapping) < 0:
            raise ConfigError(f"scheme {self.name!r}: negative superclass id")
        empty = sorted(set(range(s)) - set(self.mapping))
        if empty:
            raise ConfigError(f"scheme {self.name!r}: superclasses {empty} have no labels")

    @property
    def num_superclasses(self):
        return max(self.mapping) + 1

    @property
    def groups(self):
        return [sorted(c for c, g in enumerate(self.mapping) if g == k)
                for k in range(self.num_superclasses)]

    @classmethod
    def from_groups(cls, name, groups, semantics=""):
        """Build a scheme from a list of label groups, validating the partition."""
        mapping = [None] * NUM_CLASSES
        for k, group in enumerate(groups):
            if not group:
                raise ConfigError(f"scheme {name!r}: group {k} is empty")
            for label in group:
                if not isinstance(label, (int, np.integer)) or not 0 <= label < NUM_CLASSES:
                    raise ConfigError(f"scheme {name!r}: label {label!r} outside 0..{NUM_CLASSES - 1}")
                if mapping[label] is not None:
                    raise ConfigError(f"scheme {name!r}: label {label} appears in two groups")
                mapping[label] = k
        missing = [c for c, g in enumerate(mapping) if g is None]
        if missing:
            raise ConfigError(f"scheme {name!r}: labels {missing} are not assigned")
        return cls(name=name, mapping=tuple(mapping), semantics=semantics)

    @classmethod
    def from_config(cls, fragment):
        """Parse ``{"name": ..., "groups": [[...], ...]}``."""
        if not isinstance(fragment, dict) or "groups" not in fragment:
            raise ConfigError("custom scheme needs a 'groups' list", key="scheme.groups")
        return cls.from_groups(fragment.get("name", "custom"), fragment["groups"],
                               fragment.get("semantics", "user defined"))

    def assign(self, label):
        return assign(self, label)

    def assign_many(self, labels):
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() >= NUM_CLASSES):
            raise DataError(f"labels must lie in [0, {NUM_CLASSES})")
        return np.asarray(self.mapping, dtype=np.int64)[labels]


def builtin_scheme(dataset, case):
    dataset = dataset.lower().replace("-", "")
    if dataset not in BUILTIN_TABLE or case not in BUILTIN_TABLE[dataset]:
        valid = ", ".join(f"{d}/{c}" for d in BUILTIN_TABLE for c in CASES)
        raise ConfigError(f"unknown scheme {dataset}/{case}; valid: {valid}", key="case")
    semantics, groups = BUILTIN_TABLE[dataset][case]
    return SuperclassScheme.from_groups(f"{dataset}_{case}", groups, semantics)


def assign(scheme, label):
    if not isinstance(label, (int, np.integer)) or not 0 <= label < NUM_CLASSES:
        raise DataError(f"label {label!r} outside [0, {NUM_CLASSES})")
    return scheme.mapping[label]


def onehot(superclass, s):
    if not 0 <= superclass < s:
        raise DataError(f"superclass {superclass} outside [0, {s})")
    v = np.zeros(s, dtype=np.float32)
    v[superclass] = 1.0
    return v


def onehot_batch(superclasses, s, dtype=np.float32):
    superclasses = np.asarray(superclasses)
    if superclasses.size and (superclasses.min() < 0 or superclasses.max() >= s):
        raise DataError(f"superclass ids must lie in [0, {s})")
    out = np.zeros((superclasses.shape[0], s), dtype=dtype)
    out[np.arange(superclasses.shape[0]), superclasses] = 1
    return out
