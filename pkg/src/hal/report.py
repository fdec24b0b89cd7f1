"""Summary statistics and CSV helpers used by the command line."""
import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np

SUMMARY_HEADER = ("case", "mean_error", "std_error", "runs")


def mean_std(values):
    """Mean and sample standard deviation; a single value has std 0."""
    values = [float(v) for v in values]
    if not values:
        return math.nan, math.nan
    mean = float(np.mean(values))
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return mean, std


def format_mean_std(mean, std):
    return f"{mean:.2f} ± {std:.2f}"


@dataclass
class SummaryRow:
    case: str
    mean_error: float
    std_error: float
    runs: int

    @classmethod
    def from_errors(cls, case, errors):
        mean, std = mean_std(errors)
        return cls(case, mean, std, len(errors))


def write_summary_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for r in rows:
            w.writerow((r.case, repr(r.mean_error), repr(r.std_error), r.runs))


def read_summary_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [SummaryRow(d["case"], float(d["mean_error"]), float(d["std_error"]), int(d["runs"]))
                for d in csv.DictReader(fh)]


def group_scores(scores, superclasses):
    scores = np.asarray(scores, dtype=np.float64)
    superclasses = np.asarray(superclasses)
    return {int(k): scores[superclasses == k] for k in np.unique(superclasses)}


def separation_statistic(scores, superclasses):
    """Minimum over superclass pairs of ``|mean_i - mean_j| / pooled_std``.

    With two superclasses this is the usual two-sample effect size. Returns
    ``inf`` when the pooled spread is zero but the means differ.
    """
    groups = group_scores(scores, superclasses)
    if len(groups) < 2:
        raise ValueError("separation needs at least two populated superclasses")
    best = math.inf
    for gi, gj in itertools.combinations(groups.values(), 2):
        ni, nj = len(gi), len(gj)
        dof = ni + nj - 2
        ss = (ni - 1) * np.var(gi, ddof=1) if ni > 1 else 0.0
        ss += (nj - 1) * np.var(gj, ddof=1) if nj > 1 else 0.0
        pooled = math.sqrt(ss / dof) if dof > 0 else 0.0
        diff = abs(float(gi.mean() - gj.mean()))
        if pooled == 0:
            value = 0.0 if diff == 0 else math.inf
        else:
            value = diff / pooled
        best = min(best, value)
    return best
