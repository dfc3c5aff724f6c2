"""Once-for-all evaluation: fixed splits, blind shifted test sets, repeat statistics."""
from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .dataset import Dataset

# train fraction -> validation fraction of the remainder
VAL_FRACTION = {0.9: 0.1, 0.5: 0.5, 0.3: 0.5, 0.1: 0.5}
TEST_SETS = ("OFA-1", "OFA-2", "OFA-3")
N_AZIMUTH_BINS = 36


class SplitError(ValueError):
    """A class cannot supply at least one training and one validation item."""


@dataclass(frozen=True)
class OfaSpec:
    train_fraction: float = 0.9
    test_sets: tuple[str, ...] = TEST_SETS
    repeats: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.train_fraction not in VAL_FRACTION:
            raise ValueError(f"train_fraction must be one of {sorted(VAL_FRACTION)}")
        if self.repeats < 1:
            raise ValueError("repeats must be positive")

    @property
    def val_fraction(self) -> float:
        return VAL_FRACTION[self.train_fraction]


def _count(fraction: float, n: int) -> int:
    return int(math.floor(fraction * n + 1e-9))


def make_splits(labels: Sequence[int], spec: OfaSpec) -> tuple[np.ndarray, np.ndarray]:
    """Stratified train/val indices into ``labels``.

    Per class, ``floor(f * n)`` items train and ``floor(v * (n - n_train))`` of
    the rest validate.  Both index arrays are sorted.
    """
    labels = np.asarray(labels)
    if len(labels) < 10:
        raise SplitError(f"pool of {len(labels)} samples is too small (need >= 10)")
    train, val = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        n_tr = _count(spec.train_fraction, len(idx))
        n_va = _count(spec.val_fraction, len(idx) - n_tr)
        if n_tr < 1 or n_va < 1:
            raise SplitError(f"class {c} has {len(idx)} samples: too few for one training "
                             f"and one validation item at fraction {spec.train_fraction}")
        perm = np.random.default_rng([spec.seed, int(c)]).permutation(idx)
        train.append(perm[:n_tr])
        val.append(perm[n_tr:n_tr + n_va])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


# ---------------------------------------------------------------- statistics

def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and population standard deviation."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("no values")
    return statistics.fmean(vals), statistics.pstdev(vals)


def confusion_matrix(labels: np.ndarray, predicted: np.ndarray, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(predicted)), 1)
    return cm


def azimuth_bins(azimuths: np.ndarray, n_bins: int = N_AZIMUTH_BINS) -> np.ndarray:
    """Bin index of each azimuth; bins partition [0, 360)."""
    az = np.mod(np.asarray(azimuths, dtype=np.float64), 360.0)
    return np.minimum((az * n_bins / 360.0).astype(np.int64), n_bins - 1)


@dataclass
class SetResult:
    accuracies: list[float]
    confusions: list[np.ndarray]
    bin_counts: np.ndarray                       # (36,)
    bin_correct: list[np.ndarray]                # per repeat, (36,)

    @property
    def mean(self) -> float:
        return mean_std(self.accuracies)[0]

    @property
    def std(self) -> float:
        return mean_std(self.accuracies)[1]

    def bin_accuracy(self) -> np.ndarray:
        """Mean over repeats of per-bin accuracy (NaN for empty bins)."""
        correct = np.mean(self.bin_correct, axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.bin_counts > 0, 100.0 * correct / self.bin_counts, np.nan)


@dataclass
class OfaReport:
    results: dict[tuple[float, str], SetResult] = field(default_factory=dict)

    def add(self, fraction: float, name: str, result: SetResult):
        self.results[(fraction, name)] = result

    def cell(self, fraction: float, name: str) -> str:
        r = self.results.get((fraction, name))
        return "-" if r is None else f"{r.mean:.2f}±{r.std:.2f}"

    @property
    def fractions(self) -> list[float]:
        return sorted({f for f, _ in self.results}, reverse=True)

    @property
    def set_names(self) -> list[str]:
        names = {n for _, n in self.results}
        return [n for n in TEST_SETS if n in names] + sorted(names - set(TEST_SETS))


def format_table(reports: Mapping[str, OfaReport]) -> str:
    """Methods as rows; one column block of test sets per training fraction."""
    fractions = sorted({f for r in reports.values() for f in r.fractions}, reverse=True)
    names = []
    for r in reports.values():
        names += [n for n in r.set_names if n not in names]
    header1 = ["Method"] + [f"{int(round(f * 100))}% train" if i == 0 else ""
                            for f in fractions for i in range(len(names))]
    header2 = [""] + [n for _ in fractions for n in names]
    rows = [[m] + [rep.cell(f, n) for f in fractions for n in names] for m, rep in reports.items()]
    table = [header1, header2] + rows
    widths = [max(len(r[i]) for r in table) for i in range(len(header1))]
    lines = []
    for k, r in enumerate(table):
        lines.append(" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        if k == 1:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def report_csv(reports: Mapping[str, OfaReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("method", "train_fraction", "test_set", "repeats", "mean", "std", "accuracies"))
    for method, rep in reports.items():
        for (f, name), r in sorted(rep.results.items(), key=lambda kv: (-kv[0][0], kv[0][1])):
            w.writerow((method, f, name, len(r.accuracies), f"{r.mean:.6f}", f"{r.std:.6f}",
                        ";".join(f"{a:.6f}" for a in r.accuracies)))
    return buf.getvalue()


def azimuth_csv(reports: Mapping[str, OfaReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("method", "train_fraction", "test_set", "bin_start_deg", "count", "accuracy"))
    for method, rep in reports.items():
        for (f, name), r in sorted(rep.results.items(), key=lambda kv: (-kv[0][0], kv[0][1])):
            acc = r.bin_accuracy()
            for b in range(N_AZIMUTH_BINS):
                val = "" if np.isnan(acc[b]) else f"{acc[b]:.6f}"
                w.writerow((method, f, name, b * 360 // N_AZIMUTH_BINS, int(r.bin_counts[b]), val))
    return buf.getvalue()


def confusion_csv(reports: Mapping[str, OfaReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("method", "train_fraction", "test_set", "repeat", "true", "predicted", "count"))
    for method, rep in reports.items():
        for (f, name), r in sorted(rep.results.items(), key=lambda kv: (-kv[0][0], kv[0][1])):
            for k, cm in enumerate(r.confusions):
                for t, p in zip(*np.nonzero(cm)):
                    w.writerow((method, f, name, k, int(t), int(p), int(cm[t, p])))
    return buf.getvalue()


# ---------------------------------------------------------------- evaluation

Predictor = Callable[[Dataset], np.ndarray]


def evaluate_set(predictors: Sequence[Predictor], ds: Dataset) -> SetResult:
    """Score one test set with one predictor per repeat; predictors return labels."""
    if len(ds) == 0:
        raise ValueError("empty test set")
    if not predictors:
        raise ValueError("need at least one predictor (one per repeat)")
    n_cls = max(ds.n_classes, int(ds.labels.max()) + 1)
    bins = azimuth_bins(ds.azimuths)
    counts = np.bincount(bins, minlength=N_AZIMUTH_BINS)
    accs, cms, correct = [], [], []
    for predict in predictors:
        pred = np.asarray(predict(ds))
        if pred.shape != ds.labels.shape:
            raise ValueError(f"predictor returned {pred.shape}, expected {ds.labels.shape}")
        hit = pred == ds.labels
        accs.append(100.0 * float(np.count_nonzero(hit)) / len(ds))
        cms.append(confusion_matrix(ds.labels, pred, max(n_cls, int(pred.max()) + 1)))
        correct.append(np.bincount(bins, weights=hit, minlength=N_AZIMUTH_BINS))
    return SetResult(accs, cms, counts, correct)


def evaluate(predictors: Sequence[Predictor], test_sets: Mapping[str, Dataset],
             fraction: float = 0.9, report: OfaReport | None = None) -> OfaReport:
    report = OfaReport() if report is None else report
    for name, ds in test_sets.items():
        report.add(fraction, name, evaluate_set(predictors, ds))
    return report


def model_predictor(model) -> Predictor:
    from .net import predict

    def run(ds: Dataset) -> np.ndarray:
        return np.argmax(predict(model, ds), axis=1)
    return run
