import csv
import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from scatterkit.dataset import Dataset
from scatterkit.ofa import (N_AZIMUTH_BINS, OfaReport, OfaSpec, SplitError, azimuth_bins,
                            azimuth_csv, confusion_csv, confusion_matrix, evaluate, evaluate_set,
                            format_table, make_splits, mean_std, report_csv)


@pytest.mark.parametrize("fraction,n_train,n_val", [(0.9, 90, 1), (0.5, 50, 25), (0.3, 30, 35),
                                                     (0.1, 10, 45)])
def test_split_counts(fraction, n_train, n_val):
    labels = np.repeat([0, 1, 2], 100)
    tr, va = make_splits(labels, OfaSpec(fraction))
    for c in range(3):
        assert np.count_nonzero(labels[tr] == c) == n_train
        assert np.count_nonzero(labels[va] == c) == n_val
    assert not set(tr) & set(va)
    assert np.all(np.diff(tr) > 0) and np.all(np.diff(va) > 0)


@given(st.lists(st.integers(0, 3), min_size=10, max_size=80), st.sampled_from([0.9, 0.5, 0.3, 0.1]),
       st.integers(0, 100))
def test_splits_disjoint_and_reproducible(labels, fraction, seed):
    spec = OfaSpec(fraction, seed=seed)
    try:
        tr, va = make_splits(labels, spec)
    except SplitError:
        return
    tr2, va2 = make_splits(labels, spec)
    assert np.array_equal(tr, tr2) and np.array_equal(va, va2)
    assert not set(tr) & set(va)


def test_split_errors():
    with pytest.raises(SplitError):
        make_splits([0] * 9, OfaSpec())
    with pytest.raises(SplitError):
        make_splits([0] * 9 + [1], OfaSpec(0.5))      # class 1 has a single item
    with pytest.raises(ValueError):
        OfaSpec(0.7)
    with pytest.raises(ValueError):
        OfaSpec(repeats=0)


def test_mean_std_population():
    assert mean_std([1, 2, 3, 4]) == (2.5, pytest.approx(np.std([1, 2, 3, 4])))
    assert mean_std([7.0]) == (7.0, 0.0)
    with pytest.raises(ValueError):
        mean_std([])


def test_confusion_and_bins():
    cm = confusion_matrix([0, 0, 1, 2], [0, 1, 1, 2], 3)
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [0, 0, 1]]
    assert azimuth_bins([0, 9.999, 10, 359.99, 360, -5]).tolist() == [0, 0, 1, 35, 0, 35]


def fake_set():
    n = 8
    return Dataset(np.zeros((n, 4, 4), np.float32), np.zeros((n, 4, 4, 4), np.float32),
                   np.array([0, 1] * 4), np.arange(n) * 45.0, [f"t{i}" for i in range(n)], ["a", "b"])


def test_evaluate_set_statistics():
    ds = fake_set()
    perfect = lambda d: d.labels.copy()              # noqa: E731
    half = lambda d: np.zeros(len(d), dtype=int)     # noqa: E731
    res = evaluate_set([perfect, half], ds)
    assert res.accuracies == [100.0, 50.0]
    assert (res.mean, res.std) == (75.0, 25.0)
    assert res.bin_counts.sum() == 8 and res.bin_counts[0] == 1 and res.bin_counts[4] == 1
    acc = res.bin_accuracy()
    assert acc[0] == 100.0 and acc[4] == 50.0 and np.isnan(acc[1])
    assert res.confusions[1].tolist() == [[4, 0], [4, 0]]
    with pytest.raises(ValueError):
        evaluate_set([], ds)
    with pytest.raises(ValueError):
        evaluate_set([lambda d: np.zeros(3)], ds)


def reports():
    ds = fake_set()
    rep = evaluate([lambda d: d.labels.copy()], {"OFA-1": ds, "OFA-2": ds}, 0.9)
    evaluate([lambda d: np.zeros(len(d), dtype=int)], {"OFA-1": ds}, 0.5, rep)
    base = evaluate([lambda d: np.ones(len(d), dtype=int)], {"OFA-1": ds}, 0.9)
    return {"PIHA": rep, "Baseline": base}


def test_format_table():
    text = format_table(reports())
    lines = text.splitlines()
    assert lines[0].split("|")[1].strip() == "90% train"
    assert [c.strip() for c in lines[1].split("|")] == ["", "OFA-1", "OFA-2", "OFA-1", "OFA-2"]
    assert set(lines[2]) <= {"-", "+"}
    piha = [c.strip() for c in lines[3].split("|")]
    assert piha == ["PIHA", "100.00±0.00", "100.00±0.00", "50.00±0.00", "-"]
    assert lines[4].startswith("Baseline") and lines[4].rstrip().endswith("-")


def test_csv_outputs():
    reps = reports()
    rows = list(csv.DictReader(io.StringIO(report_csv(reps))))
    assert [(r["method"], r["train_fraction"], r["test_set"]) for r in rows] == [
        ("PIHA", "0.9", "OFA-1"), ("PIHA", "0.9", "OFA-2"), ("PIHA", "0.5", "OFA-1"),
        ("Baseline", "0.9", "OFA-1")]
    assert rows[0]["accuracies"] == "100.000000"
    az = list(csv.DictReader(io.StringIO(azimuth_csv(reps))))
    assert len(az) == 4 * N_AZIMUTH_BINS
    assert az[1]["count"] == "0" and az[1]["accuracy"] == ""
    cm = list(csv.DictReader(io.StringIO(confusion_csv(reps))))
    assert sum(int(r["count"]) for r in cm) == 4 * 8


def test_report_set_name_order():
    rep = OfaReport()
    res = evaluate_set([lambda d: d.labels.copy()], fake_set())
    for name in ("custom", "OFA-3", "OFA-1"):
        rep.add(0.9, name, res)
    assert rep.set_names == ["OFA-1", "OFA-3", "custom"]
