"""Command-line entry point: ``hal train|matrix|gradcheck|export-aux|eval``.

Exit codes: 0 success, 1 failed check or failed matrix run, 2 invalid
configuration, 3 training diverged (non-finite loss), 4 unreadable data.
"""
import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels, gradcheck
from .auxblock import aux_score_export, write_score_csv
from .checkpoint import load_tensors
from .data import batches, load_stats_json, normalize
from .errors import ConfigError, DataError, DivergenceError, FormatError, HalError
from .report import (SummaryRow, format_mean_std, group_scores, mean_std, separation_statistic,
                     write_summary_csv)
from .train import RunRecord, TrainConfig, build_model, evaluate, load_datasets, run
from .superclass import CASES

log = logging.getLogger("hal")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED, EXIT_DATA = 0, 1, 2, 3, 4
MATRIX_CASES = ("baseline",) + CASES


def run_root():
    return Path(os.environ.get("HAL_RUN_DIR", "runs"))


# -- experiment matrix -------------------------------------------------------------

@dataclass
class ExperimentMatrix:
    dataset: str
    cases: list
    repeats: int = 5
    base: dict = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self):
        bad = [c for c in self.cases if c not in MATRIX_CASES]
        if bad:
            raise ConfigError(f"unknown case {bad[0]!r}; valid cases: {', '.join(MATRIX_CASES)}", key="cases")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1", key="repeats")
        if "case" in self.base or "scheme" in self.base:
            raise ConfigError("matrix base config must not set case or scheme", key="base.case")

    @classmethod
    def from_json(cls, path):
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read matrix {path}: {exc}") from exc
        known = {"dataset", "cases", "repeats", "base"}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown matrix keys: {', '.join(unknown)}", key=unknown[0])
        return cls(base_dir=str(path.parent), **obj)

    def configs(self):
        """Every (case, repeat) config; repeat k uses seed base_seed + k."""
        seed = int(self.base.get("seed", 0))
        out = []
        for case in self.cases:
            for k in range(self.repeats):
                d = dict(self.base, dataset=self.dataset, case=case, seed=seed + k)
                out.append(TrainConfig.from_dict(d, base_dir=self.base_dir))
        return out


def _run_one(config, root):
    """Run or reuse one matrix entry; returns (case, final_error or None, message)."""
    run_dir = Path(root) / config.run_name
    done = run_dir / "run.json"
    if done.exists():
        return config.case, RunRecord.from_json(done).final_error, "skipped (complete)"
    try:
        record, _ = run(config, root)
    except HalError as exc:
        return config.case, None, f"failed: {exc}"
    return config.case, record.final_error, f"done in {record.wall_time:.0f}s"


def run_matrix(matrix, root, jobs=1):
    """Run every entry, write ``summary.csv`` into ``root``; returns (rows, failures)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    configs = matrix.configs()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, configs, [root] * len(configs)))
    else:
        results = []
        for config in configs:
            results.append(_run_one(config, root))
            log.info("%s: %s", config.run_name, results[-1][2])
    errors = {case: [] for case in matrix.cases}
    failures = []
    for config, (case, err, msg) in zip(configs, results):
        if err is None:
            failures.append({"run": config.run_name, "error": msg})
        else:
            errors[case].append(err)
    rows = [SummaryRow.from_errors(case, errors[case]) for case in matrix.cases]
    write_summary_csv(root / "summary.csv", rows)
    if failures:
        with open(root / "failures.json", "w", encoding="utf-8") as fh:
            json.dump(failures, fh, indent=2)
    return rows, failures


# -- checkpoint inference --------------------------------------------------------------

def load_trained(ckpt, config):
    """Model for ``config`` with weights from ``ckpt``, checking the aux width."""
    tensors = load_tensors(ckpt)
    scheme = config.superclass_scheme()
    aux_w = tensors.get("aux.w")
    if scheme is None and aux_w is not None:
        raise ConfigError("checkpoint has an aux block but the config case is baseline", key="case")
    if scheme is not None:
        if aux_w is None:
            raise ConfigError("config enables the aux block but the checkpoint has none", key="case")
        if aux_w.shape[1] != scheme.num_superclasses:
            raise ConfigError(f"checkpoint aux block has {aux_w.shape[1]} superclasses, "
                              f"config case {config.case!r} has {scheme.num_superclasses}", key="case")
    in_channels = tensors["stem.weight"].shape[1]
    model = build_model(config, in_channels)
    model.load_state_dict(tensors)
    return model


def _datasets_for(ckpt, config):
    train_data, test_data = load_datasets(config)
    stats_path = Path(ckpt).parent / "stats.json"
    if stats_path.exists():
        stats = load_stats_json(stats_path)
        train_data, test_data = train_data.with_stats(stats), test_data.with_stats(stats)
    return train_data, test_data


def collect_aux_scores(model, data, scheme, batch_size=500):
    """Inference-mode aux scores for every sample of ``data`` in file order."""
    data = data.with_scheme(scheme)
    rows = []
    for batch in batches(data, batch_size, shuffle=False, num_superclasses=scheme.num_superclasses):
        model.forward(normalize(batch.images, data.channel_stats), batch.onehot, train=False)
        sc = np.argmax(batch.onehot, axis=1)
        rows.extend(aux_score_export(model.aux.state, sc, start_index=int(batch.index[0])))
    return rows


# -- commands -------------------------------------------------------------------------------

def cmd_train(args):
    config = TrainConfig.from_json(args.config)
    record, run_dir = run(config, run_root())
    print(f"{config.run_name}: test error {record.final_error:.2f}% ({record.wall_time:.0f}s) -> {run_dir}")
    return EXIT_OK


def cmd_matrix(args):
    matrix = ExperimentMatrix.from_json(args.matrix)
    root = run_root()
    rows, failures = run_matrix(matrix, root, jobs=args.jobs)
    print(f"{'case':<10} error (%)")
    for r in rows:
        print(f"{r.case:<10} {format_mean_std(r.mean_error, r.std_error)}  (runs={r.runs})")
    for f in failures:
        print(f"FAILED {f['run']}: {f['error']}", file=sys.stderr)
    print(f"summary written to {root / 'summary.csv'}")
    return EXIT_FAIL if failures else EXIT_OK


def cmd_gradcheck(args):
    results = gradcheck.run_all(seed=args.seed, layer_trials=args.layer_trials,
                                aux_trials=args.aux_trials, corrupt_chi=args.corrupt_chi)
    print(f"{'layer':<26} {'max rel err':>12} {'tol':>8}  result")
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<26} {r.max_rel_error:12.3e} {r.tolerance:8.0e}  {status}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_export_aux(args):
    config = TrainConfig.from_json(args.config)
    scheme = config.superclass_scheme()
    if scheme is None:
        raise ConfigError("export-aux needs a config with an auxiliary case", key="case")
    model = load_trained(args.checkpoint, config)
    train_data, _ = _datasets_for(args.checkpoint, config)
    rows = collect_aux_scores(model, train_data, scheme)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "aux_scores.csv"
    write_score_csv(out, rows)
    scores = [r[2] for r in rows]
    labels = [r[1] for r in rows]
    for k, g in group_scores(scores, labels).items():
        m, s = mean_std(g)
        print(f"superclass {k}: n={len(g)} mean a={m:.6g} std={s:.6g}")
    sep = separation_statistic(scores, labels)
    print(f"separation statistic (artifact proxy, |mu_i - mu_j| / pooled std, min over pairs): {sep:.6g}")
    print(f"{len(rows)} rows written to {out}")
    return EXIT_OK


def cmd_eval(args):
    config = TrainConfig.from_json(args.config)
    model = load_trained(args.checkpoint, config)
    _, test_data = _datasets_for(args.checkpoint, config)
    loss, err = evaluate(model, test_data, config.superclass_scheme())
    print(f"test loss {loss:.6f} test error {err:.2f}%")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="hal", description="ResNet training with an auxiliary superclass block.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("config")
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("matrix", help="run cases x repeats and summarise")
    m.add_argument("matrix")
    m.add_argument("--jobs", type=int, default=1, help="run independent entries in parallel")
    m.set_defaults(func=cmd_matrix)

    g = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--layer-trials", type=int, default=20, help="random configurations per layer")
    g.add_argument("--aux-trials", type=int, default=50, help="random (l, s, b) configurations")
    g.add_argument("--corrupt-chi", action="store_true", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)

    e = sub.add_parser("export-aux", help="write aux_scores.csv over the training split")
    e.add_argument("checkpoint")
    e.add_argument("config")
    e.add_argument("--out", default=None, help="CSV path (default: next to the checkpoint)")
    e.set_defaults(func=cmd_export_aux)

    v = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    v.add_argument("checkpoint")
    v.add_argument("config")
    v.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    log.debug("kernel backend: %s", _kernels.BACKEND)
    try:
        return args.func(args)
    except ConfigError as exc:
        where = f" [{exc.key}]" if exc.key else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, FormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
