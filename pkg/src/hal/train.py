"""Training configuration, the SGD + cosine-annealing loop, and evaluation."""
import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels
from .checkpoint import load_tensors
from .data import (AugmentPolicy, augment, batches, compute_channel_stats, load_cifar10,
                   load_mnist, load_raw, normalize, save_stats_json)
from .errors import ConfigError, DivergenceError, FormatError
from .layers import softmax_cross_entropy
from .model import NetworkSpec, ResNet
from .superclass import CASES, SuperclassScheme, builtin_scheme
from .tensor import Rng

log = logging.getLogger(__name__)

DATASETS = ("mnist", "cifar10", "svhn")
PATH_KEYS = {
    "mnist": ("train_images", "train_labels", "test_images", "test_labels"),
    "cifar10": ("train", "test"),
    "svhn": ("train", "test"),
}
CURVE_HEADER = ("epoch", "train_loss", "test_loss", "test_error")
CHECKPOINT = "checkpoint.bin"


@dataclass
class TrainConfig:
    dataset: str = "mnist"
    case: str = "baseline"
    paths: dict = field(default_factory=dict)
    scheme: Optional[dict] = None       # custom {"name", "groups"} when case == "custom"
    depth: Optional[int] = None         # 10 for mnist, 28 otherwise
    stage_widths: tuple = (16, 32, 64)
    batch_size: int = 128
    epochs: int = 250
    lr_max: float = 1.0
    lr_min: float = 0.0
    lr_schedule: str = "epoch"          # or "iteration"
    momentum: float = 0.9
    weight_decay: float = 0.0
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    seed: int = 0
    augment: dict = field(default_factory=dict)
    subset_per_class: Optional[int] = None
    test_subset_per_class: Optional[int] = None
    dtype: str = "float32"
    eval_every: int = 1
    checkpoint_every: int = 50
    base_dir: str = "."                 # relative dataset paths resolve against this

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}", key="dataset")
        if self.case not in ("baseline", "custom") + CASES:
            valid = ", ".join(("baseline",) + CASES + ("custom",))
            raise ConfigError(f"unknown case {self.case!r}; valid cases: {valid}", key="case")
        if self.depth is None:
            self.depth = 10 if self.dataset == "mnist" else 28
        self.stage_widths = tuple(self.stage_widths)
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1", key="epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", key="batch_size")
        if self.lr_min > self.lr_max:
            raise ConfigError("lr_min must not exceed lr_max", key="lr_min")
        if self.lr_schedule not in ("epoch", "iteration"):
            raise ConfigError("lr_schedule must be 'epoch' or 'iteration'", key="lr_schedule")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64", key="dtype")
        try:
            self.augment_policy()
        except TypeError as exc:
            raise ConfigError(f"bad augment block: {exc}", key="augment") from exc
        NetworkSpec(depth=self.depth, stage_widths=self.stage_widths)
        self.superclass_scheme()

    @classmethod
    def from_dict(cls, obj, base_dir=None):
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}", key=unknown[0])
        obj = dict(obj)
        if base_dir is not None and "base_dir" not in obj:
            obj["base_dir"] = str(base_dir)
        return cls(**obj)

    @classmethod
    def from_json(cls, path):
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(obj, base_dir=path.parent)

    def to_dict(self):
        d = asdict(self)
        d["stage_widths"] = list(self.stage_widths)
        return d

    def superclass_scheme(self):
        if self.case == "baseline":
            return None
        if self.case == "custom":
            return SuperclassScheme.from_config(self.scheme)
        return builtin_scheme(self.dataset, self.case)

    def augment_policy(self):
        return AugmentPolicy(**self.augment)

    def network_spec(self, in_channels):
        scheme = self.superclass_scheme()
        return NetworkSpec(depth=self.depth, stage_widths=self.stage_widths, in_channels=in_channels,
                           aux_enabled=scheme is not None,
                           aux_superclass_count=0 if scheme is None else scheme.num_superclasses)

    def resolve_paths(self):
        """Dataset paths as absolute ``Path`` objects, checking that they exist."""
        out = {}
        for key in PATH_KEYS[self.dataset]:
            if key not in self.paths:
                raise ConfigError(f"missing dataset path 'paths.{key}'", key=f"paths.{key}")
            value = self.paths[key]
            items = value if isinstance(value, list) else [value]
            resolved = []
            for item in items:
                p = Path(item)
                if not p.is_absolute():
                    p = Path(self.base_dir) / p
                if not p.exists():
                    raise ConfigError(f"dataset path 'paths.{key}' does not exist: {p}", key=f"paths.{key}")
                resolved.append(p)
            out[key] = resolved if isinstance(value, list) else resolved[0]
        return out

    @property
    def run_name(self):
        return f"{self.dataset}_{self.case}_{self.seed}"


def cosine_lr(t, epochs, lr_max=1.0, lr_min=0.0):
    """Single half-cosine sweep from ``lr_max`` at t=0 to ``lr_min`` at t=epochs."""
    if not 0 <= t <= epochs:
        raise ValueError(f"t={t} outside [0, {epochs}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / epochs))


def load_datasets(config):
    paths = config.resolve_paths()
    if config.dataset == "mnist":
        train = load_mnist(paths["train_images"], paths["train_labels"], "train")
        test = load_mnist(paths["test_images"], paths["test_labels"], "test")
    elif config.dataset == "cifar10":
        train = load_cifar10(paths["train"], "train")
        test = load_cifar10(paths["test"], "test")
    else:
        train = load_raw(paths["train"], "train")
        test = load_raw(paths["test"], "test")
    if config.subset_per_class:
        train = train.subset_per_class(config.subset_per_class)
    if config.test_subset_per_class:
        test = test.subset_per_class(config.test_subset_per_class)
    stats = compute_channel_stats(train)
    return train.with_stats(stats), test.with_stats(stats)


@dataclass
class RunRecord:
    config: dict
    curves: list = field(default_factory=list)
    final_error: float = float("nan")
    final_test_loss: float = float("nan")
    wall_time: float = 0.0
    checkpoint: Optional[str] = None
    backend: str = _kernels.BACKEND

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))

    def write_curves(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CURVE_HEADER)
            for row in self.curves:
                w.writerow([row["epoch"]] + ["" if row[k] is None else repr(row[k]) for k in CURVE_HEADER[1:]])


def read_curves(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [{k: (int(v) if k == "epoch" else (None if v == "" else float(v))) for k, v in row.items()}
                for row in reader]


def sgd_step(model, velocity, lr, momentum, weight_decay):
    for name, layer, key in model.parameters():
        p = layer.params[key]
        g = layer.grads[key]
        if weight_decay:
            g = g + weight_decay * p
        v = velocity[name]
        v *= momentum
        v += g
        p -= lr * v


def evaluate(model, data, scheme=None, batch_size=500):
    """Mean loss and error % with inference-mode batch norm and no augmentation."""
    if scheme is not None and data.superclasses is None:
        data = data.with_scheme(scheme)
    s = None if model.aux is None else model.aux.superclasses
    total_loss = 0.0
    wrong = 0
    for batch in batches(data, batch_size, shuffle=False, num_superclasses=s):
        x = normalize(batch.images, data.channel_stats)
        logits = model.forward(x, batch.onehot, train=False)
        loss, _ = softmax_cross_entropy(logits, batch.labels)
        total_loss += loss * len(batch.labels)
        wrong += int(np.sum(np.argmax(logits, axis=1) != batch.labels))
    n = len(data)
    return total_loss / n, 100.0 * wrong / n


def build_model(config, in_channels):
    return ResNet(config.network_spec(in_channels), Rng(config.seed, "init"),
                  dtype=np.dtype(config.dtype), bn_momentum=config.bn_momentum, bn_eps=config.bn_eps)


def train(config, train_data, test_data, run_dir=None, on_epoch=None):
    """Train one model; returns ``(RunRecord, model)``.

    With ``run_dir`` set, checkpoints land there every ``checkpoint_every``
    epochs (with optimizer state) and an interrupted run resumes from the
    latest one.
    """
    t0 = time.perf_counter()
    scheme = config.superclass_scheme()
    train_data = train_data.with_scheme(scheme)
    test_data = test_data.with_scheme(scheme)
    stats = train_data.channel_stats or compute_channel_stats(train_data)
    train_data = train_data.with_stats(stats)
    test_data = test_data.with_stats(stats)
    policy = config.augment_policy()
    policy.check_split("train")

    model = build_model(config, train_data.num_channels)
    s = None if scheme is None else scheme.num_superclasses
    velocity = {name: np.zeros_like(layer.params[key]) for name, layer, key in model.parameters()}
    record = RunRecord(config=config.to_dict())
    start = 0
    if run_dir is not None:
        run_dir = Path(run_dir)
        start = _maybe_resume(run_dir, model, velocity, record)

    n_batches = math.ceil(len(train_data) / config.batch_size)
    for epoch in range(start, config.epochs):
        shuffle_rng = Rng(config.seed, "shuffle", epoch)
        aug_rng = Rng(config.seed, "augment", epoch)
        seen = 0
        loss_sum = 0.0
        for it, batch in enumerate(batches(train_data, config.batch_size, True, shuffle_rng, s)):
            t = epoch if config.lr_schedule == "epoch" else epoch + it / n_batches
            lr = cosine_lr(t, config.epochs, config.lr_max, config.lr_min)
            x = augment(batch.images, policy, aug_rng, stats)
            logits = model.forward(x, batch.onehot, train=True)
            loss, grad = softmax_cross_entropy(logits, batch.labels)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, it, lr)
            model.backward(grad)
            sgd_step(model, velocity, lr, config.momentum, config.weight_decay)
            loss_sum += loss * len(batch.labels)
            seen += len(batch.labels)
        row = {"epoch": epoch + 1, "train_loss": loss_sum / seen, "test_loss": None, "test_error": None}
        last = epoch + 1 == config.epochs
        if last or (config.eval_every and (epoch + 1) % config.eval_every == 0):
            row["test_loss"], row["test_error"] = evaluate(model, test_data, scheme)
        record.curves.append(row)
        log.info("epoch %d/%d train_loss %.4f test_error %s", epoch + 1, config.epochs,
                 row["train_loss"], row["test_error"])
        if on_epoch is not None:
            on_epoch(row)
        if run_dir is not None and not last and config.checkpoint_every and \
                (epoch + 1) % config.checkpoint_every == 0:
            _save_progress(run_dir, model, velocity, record, epoch + 1)

    record.final_test_loss = record.curves[-1]["test_loss"]
    record.final_error = record.curves[-1]["test_error"]
    record.wall_time = record.wall_time + time.perf_counter() - t0
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        model.save(run_dir / CHECKPOINT)
        record.checkpoint = str(run_dir / CHECKPOINT)
        save_stats_json(run_dir / "stats.json", stats)
        (run_dir / "progress.json").unlink(missing_ok=True)
        (run_dir / "resume.bin").unlink(missing_ok=True)
    return record, model


def _save_progress(run_dir, model, velocity, record, epoch):
    run_dir.mkdir(parents=True, exist_ok=True)
    model.save(run_dir / "resume.bin", extra={f"velocity/{k}": v for k, v in velocity.items()})
    with open(run_dir / "progress.json", "w", encoding="utf-8") as fh:
        json.dump({"epoch": epoch, "curves": record.curves,
                   "wall_time": record.wall_time}, fh)


def _maybe_resume(run_dir, model, velocity, record):
    progress = run_dir / "progress.json"
    if not progress.exists() or not (run_dir / "resume.bin").exists():
        return 0
    try:
        with open(progress, encoding="utf-8") as fh:
            state = json.load(fh)
        tensors = load_tensors(run_dir / "resume.bin")
        model.load_state_dict(tensors)
        for k in velocity:
            velocity[k][...] = tensors[f"velocity/{k}"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"corrupt resume state in {run_dir}: {exc!r}") from exc
    record.curves = state["curves"]
    record.wall_time = state.get("wall_time", 0.0)
    log.info("resuming %s at epoch %d", run_dir, state["epoch"])
    return int(state["epoch"])


def run(config, root):
    """Train ``config`` into ``root/<dataset>_<case>_<seed>`` and write its artifacts."""
    train_data, test_data = load_datasets(config)
    run_dir = Path(root) / config.run_name
    run_dir.mkdir(parents=True, exist_ok=True)
    record, model = train(config, train_data, test_data, run_dir)
    record.to_json(run_dir / "run.json")
    record.write_curves(run_dir / "curves.csv")
    return record, run_dir
