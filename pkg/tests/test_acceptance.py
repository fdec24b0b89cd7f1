"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The desk-scale MNIST matrix (criteria 4, 6, 7) trains 15 models for 30
epochs. Completed runs are cached under ``HAL_ACCEPT_DIR`` (default
``.acceptance_runs/<source hash>``), so a rerun against unchanged sources only
repeats the fresh determinism run. Any edit under ``src/hal`` changes the hash
and starts a clean matrix.
"""
import hashlib
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from hal import cli, gradcheck
from hal.auxblock import AuxBlockState, aux_backward, aux_forward
from hal.data import compute_channel_stats
from hal.superclass import builtin_scheme, onehot_batch
from hal.tensor import Rng
from hal.train import CHECKPOINT, RunRecord, TrainConfig, cosine_lr, evaluate, load_datasets, run, train
from hal.report import separation_statistic

from conftest import ACCEPTANCE_LINES, MNIST_PATHS, ROOT

SEEDS = range(5)
DESK = dict(paths=MNIST_PATHS, depth=10, subset_per_class=600, epochs=30, batch_size=128,
            lr_max=0.1, lr_min=0.0, momentum=0.9, eval_every=30, checkpoint_every=5)
RUNTIME_TARGET = 30 * 60


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _source_hash():
    h = hashlib.sha256()
    for p in sorted((ROOT / "src" / "hal").glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


@pytest.fixture(scope="module")
def desk_root():
    root = os.environ.get("HAL_ACCEPT_DIR")
    root = Path(root) if root else ROOT / ".acceptance_runs" / _source_hash()
    matrix = cli.ExperimentMatrix("mnist", ["baseline", "case1", "case2"], repeats=len(SEEDS), base=DESK)
    rows, failures = cli.run_matrix(matrix, root)
    assert not failures, failures
    return root


def _record(root, case, seed):
    return RunRecord.from_json(root / f"mnist_{case}_{seed}" / "run.json")


def _row_oracle(y, w, x_star, g):
    """Scalar loops for one row: (out, a, grad_y, grad_w)."""
    l, s = w.shape
    z = [sum(y[i] * w[i, j] for i in range(l)) for j in range(s)]
    a = 0.0
    for j in range(s):
        a += abs(z[j] - x_star[j])
    chi = [1.0 if z[j] > x_star[j] else -1.0 for j in range(s)]
    dlda = 0.0
    for i in range(l):
        dlda += g[i] * y[i]
    grad_y = np.empty(l)
    grad_w = np.empty((l, s))
    for i in range(l):
        extra = 0.0
        for j in range(s):
            extra += (chi[j] * dlda) * w[i, j]
            grad_w[i, j] = (chi[j] * dlda) * y[i]
        grad_y[i] = g[i] * a + extra
    return np.array([y[i] * a for i in range(l)]), a, grad_y, grad_w


class TestAcceptance:
    def test_criterion_1_gradcheck(self):
        t = time.perf_counter()
        results = gradcheck.run_all(seed=0)
        elapsed = time.perf_counter() - t
        aux = [r for r in results if r.name == "aux_block"][0]
        worst_layer = max(r.max_rel_error for r in results if r.name != "aux_block")
        ok = all(r.passed for r in results) and aux.trials >= 50 and aux.tolerance == 1e-6 \
            and all(r.tolerance <= 1e-5 for r in results) and elapsed < 60
        report(1, ok, f"aux max rel err {aux.max_rel_error:.2e} over {aux.trials} configs (<1e-6), "
                      f"worst layer {worst_layer:.2e} (<1e-5), {len(results)} checks in {elapsed:.1f}s (<60s)")

    def test_criterion_2_oracle_equivalence(self):
        t = time.perf_counter()
        mismatches = 0
        for seed in range(100):
            r = Rng(seed, "acceptance-oracle")
            b, l, s = int(r.integers(1, 9)), int(r.integers(1, 40)), int(r.integers(2, 6))
            y = r.normal((b, l), dtype=np.float64)
            w = r.normal((l, s), dtype=np.float64)
            xs = onehot_batch(r.integers(0, s, b), s, dtype=np.float64)
            g = r.normal((b, l), dtype=np.float64)
            state = AuxBlockState(w=w)
            out = aux_forward(y, xs, state)
            gy, gw = aux_backward(g, state)
            rows = [_row_oracle(y[k], w, xs[k], g[k]) for k in range(b)]
            gw_rows = rows[0][3].copy()
            for q in rows[1:]:
                gw_rows += q[3]
            same = (np.array_equal(out, np.stack([q[0] for q in rows]))
                    and np.array_equal(state.a, np.array([q[1] for q in rows]))
                    and np.array_equal(gy, np.stack([q[2] for q in rows]))
                    and np.array_equal(gw, gw_rows))
            mismatches += not same
        report(2, mismatches == 0, f"{100 - mismatches}/100 random batches bitwise equal to per-row loops "
                                   f"({time.perf_counter() - t:.1f}s)")

    def test_criterion_3_superclass_tables(self):
        table = {
            ("mnist", "case1"): [{5, 6, 7, 8, 9}, {0, 1, 2, 3, 4}],
            ("mnist", "case2"): [{1, 3, 5, 7, 9}, {0, 2, 4, 6, 8}],
            ("mnist", "case3"): [{2, 3, 5, 7}, {0, 1, 4, 6, 8, 9}],
            ("mnist", "case4"): [{0, 6, 8, 9}, {2, 3, 5}, {1, 4, 7}],
            ("cifar10", "case1"): [{5, 6, 7, 8, 9}, {0, 1, 2, 3, 4}],
            ("cifar10", "case2"): [{1, 3, 5, 7, 9}, {0, 2, 4, 6, 8}],
            ("cifar10", "case3"): [{2, 3, 4, 5, 6, 7}, {0, 1, 8, 9}],
            ("cifar10", "case4"): [{1, 9}, {3, 5}, {4, 7}, {0, 8}, {2, 6}],
        }
        bad = []
        for key, groups in table.items():
            scheme = builtin_scheme(*key)
            got = [set(g) for g in scheme.groups]
            partition = set().union(*got) == set(range(10)) and sum(map(len, got)) == 10
            mapped = all(scheme.assign(c) == k for k, g in enumerate(groups) for c in g)
            if got != groups or not partition or not mapped:
                bad.append("/".join(key))
        report(3, not bad, f"{len(table) - len(bad)}/8 schemes match exactly" + (f"; wrong: {bad}" if bad else ""))

    @pytest.mark.slow
    def test_criterion_4a_baseline_error(self, desk_root):
        errs = [_record(desk_root, "baseline", s).final_error for s in SEEDS]
        report("4a", max(errs) < 5.0, "baseline test error per seed " + ", ".join(f"{e:.2f}%" for e in errs)
               + " (all < 5%)")

    @pytest.mark.slow
    def test_criterion_4b_case1_beats_baseline(self, desk_root):
        pairs = [(_record(desk_root, "baseline", s).final_error, _record(desk_root, "case1", s).final_error)
                 for s in SEEDS]
        wins = sum(c < b for b, c in pairs)
        report("4b", wins >= 4, f"case1 < baseline in {wins}/5 paired seeds: "
               + ", ".join(f"{c:.2f} vs {b:.2f}" for b, c in pairs))

    @pytest.mark.slow
    def test_criterion_4c_runtime(self, desk_root):
        wall = sum(_record(desk_root, case, s).wall_time for case in ("baseline", "case1") for s in SEEDS)
        report("4c", wall <= RUNTIME_TARGET, f"10 desk-scale runs took {wall / 60:.1f} min of training "
               f"(target <= {RUNTIME_TARGET // 60} min)")

    def test_criterion_5_cosine_endpoints(self):
        epochs = DESK["epochs"]
        vals = (cosine_lr(0, epochs), cosine_lr(epochs, epochs), cosine_lr(epochs / 2, epochs))
        ok = all(abs(v - e) <= 1e-12 for v, e in zip(vals, (1.0, 0.0, 0.5)))
        report(5, ok, "eta(0)={:.15g} eta(T)={:.15g} eta(T/2)={:.15g}".format(*vals))

    @pytest.mark.slow
    def test_criterion_6_score_separation(self, desk_root):
        seps = {}
        for case in ("case1", "case2"):
            for s in SEEDS:
                run_dir = desk_root / f"mnist_{case}_{s}"
                config = TrainConfig.from_dict(dict(DESK, dataset="mnist", case=case, seed=s))
                model = cli.load_trained(run_dir / CHECKPOINT, config)
                train_data, _ = cli._datasets_for(run_dir / CHECKPOINT, config)
                rows = cli.collect_aux_scores(model, train_data, config.superclass_scheme())
                seps[case, s] = separation_statistic([r[2] for r in rows], [r[1] for r in rows])
        wins = sum(seps["case1", s] > seps["case2", s] for s in SEEDS)
        report(6, wins >= 4, f"case1 separation > case2 in {wins}/5 seeds: "
               + ", ".join(f"{seps['case1', s]:.2f} vs {seps['case2', s]:.2f}" for s in SEEDS))

    @pytest.mark.slow
    def test_criterion_7_determinism(self, desk_root, tmp_path):
        config = TrainConfig.from_dict(dict(DESK, dataset="mnist", case="baseline", seed=0))
        fresh, _ = run(config, tmp_path)
        cached = _record(desk_root, "baseline", 0).final_error
        rel = abs(fresh.final_error - cached) / max(abs(cached), 1e-12)
        # 64-bit verification mode: two short float64 runs must agree bitwise
        small = TrainConfig.from_dict(dict(DESK, dataset="mnist", case="case1", seed=0, dtype="float64",
                                           subset_per_class=20, test_subset_per_class=20, epochs=2,
                                           eval_every=1))
        data = load_datasets(small)
        (ra, ma), (rb, mb) = train(small, *data), train(small, *data)
        sa, sb = ma.state_dict(), mb.state_dict()
        bitwise = ra.curves == rb.curves and sa.keys() == sb.keys() and \
            all(np.array_equal(sa[k], sb[k]) for k in sa)
        report(7, rel <= 1e-6 and bitwise, f"seed-0 rerun error {fresh.final_error:.4f}% vs {cached:.4f}% "
               f"(rel diff {rel:.1e} <= 1e-6); float64 repeat bitwise equal: {bitwise}")

    def test_criterion_8_tiny_overfit(self):
        config = TrainConfig(dataset="mnist", case="case1", paths=MNIST_PATHS, epochs=200, batch_size=64,
                             lr_max=0.1, momentum=0.9, eval_every=200, checkpoint_every=1000,
                             augment={"random_crop": False, "horizontal_flip": False})
        train_data, _ = load_datasets(config)
        tiny = train_data.take(np.arange(64))
        tiny = tiny.with_stats(compute_channel_stats(tiny))
        t = time.perf_counter()
        _, model = train(config, tiny, tiny)
        _, err = evaluate(model, tiny, config.superclass_scheme())
        elapsed = time.perf_counter() - t
        ok = err == 0.0 and elapsed < 120 and math.isfinite(err)
        report(8, ok, f"train error {err:.2f}% on 64 images after 200 epochs in {elapsed:.0f}s (<120s)")
