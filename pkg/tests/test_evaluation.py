import numpy as np
import pytest
from hypothesis import given, strategies as st

from fusionsearch.evaluation import (FoldError, NetworkScale, aggregate, confusion_and_metrics,
                                     format_table_entry, loo_evaluate, loo_split,
                                     mann_whitney_auc, optimal_cutoff, postprocess_majority,
                                     roc_auc, tfcv_fitness, tfcv_split)
from fusionsearch.genome import ModelConfig
from fusionsearch.network import TrainSpec

labelled_scores = st.integers(2, 40).flatmap(lambda n: st.tuples(
    st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.7, 0.9, 1.0]), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n),
)).filter(lambda t: 0 < sum(t[1]) < len(t[1]))


@given(labelled_scores)
def test_auc_equals_mann_whitney_exactly(data):
    s, y = data
    assert roc_auc(s, y).auc == mann_whitney_auc(s, y)


@given(labelled_scores)
def test_roc_curve_shape(data):
    c = roc_auc(*data)
    assert c.thresholds[0] == np.inf and c.fpr[0] == 0 and c.tpr[0] == 0
    assert c.fpr[-1] == 1 and c.tpr[-1] == 1
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
    assert np.all(np.diff(c.thresholds) < 0)


@given(labelled_scores)
def test_youden_cutoff_oracle(data):
    s, y = map(np.asarray, data)
    best, best_j = None, -2.0
    for t in sorted(set(s.tolist()) | {np.inf}, reverse=True):
        pred = s >= t
        j = pred[y == 1].mean() - pred[y == 0].mean()
        if j > best_j + 1e-12:
            best, best_j = t, j
    assert optimal_cutoff(roc_auc(s, y)) == best


def test_roc_single_class():
    with pytest.raises(FoldError):
        roc_auc([0.1, 0.2], [1, 1])


def _majority_oracle(x):
    out = list(x)
    for k in range(1, len(x) - 1):
        out[k] = 1 if x[k - 1] + x[k] + x[k + 1] >= 2 else 0
    return out


@given(st.lists(st.integers(0, 1), max_size=60))
def test_postprocess_matches_oracle(x):
    assert list(postprocess_majority(x)) == _majority_oracle(x)


def test_postprocess_literal_corrections():
    assert list(postprocess_majority([0, 1, 0])) == [0, 0, 0]
    assert list(postprocess_majority([1, 0, 1])) == [1, 1, 1]
    assert list(postprocess_majority([1, 0, 0, 1])) == [1, 0, 0, 1]
    assert list(postprocess_majority([1])) == [1]


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=50))
def test_confusion_oracle(pairs):
    pred, truth = map(np.array, zip(*pairs))
    c, acc, sen, spe = confusion_and_metrics(pred, truth)
    tp = sum(p == 1 and t == 1 for p, t in pairs)
    tn = sum(p == 0 and t == 0 for p, t in pairs)
    assert (c.tp, c.tn, c.total) == (tp, tn, len(pairs))
    assert acc == (tp + tn) / len(pairs)
    pos = int(truth.sum())
    assert sen == (tp / pos if pos else None)
    assert spe == (tn / (len(pairs) - pos) if pos < len(pairs) else None)


def test_splits():
    ids = ["s03", "s01", "s02", "s00", "s04"]
    t = tfcv_split(ids)
    assert t.members(0) == ["s00", "s02", "s04"] and t.members(1) == ["s01", "s03"]
    assert not set(t.members(0)) & set(t.members(1))
    loo = loo_split(ids)
    assert loo.n_folds == 5 and all(len(loo.members(k)) == 1 for k in range(5))
    with pytest.raises(FoldError):
        tfcv_split(["a"])


def test_aggregate_and_format():
    agg = aggregate([0.8, 0.9, None, 1.0])
    assert agg["n"] == 3 and agg["mean"] == pytest.approx(0.9)
    assert agg["std"] == pytest.approx(0.1)  # sample std
    assert format_table_entry(agg) == "90.00 ± 10.00 (80.00 – 100.00)"
    assert format_table_entry(aggregate([None])) == "n/a"


SMALL = ModelConfig(channels=("Fp2-F4", "C4-A1", "F4-C4"), time_steps=10, lstm_layers=1,
                    lstm_kind="lstm", lstm_shape=100, dropout=0.0, dense_size=200,
                    dense_activation="relu")
SCALE = NetworkScale(lstm_shape=6, dense_size=8)
SPEC = TrainSpec(max_epochs=2, batch_size=128, learning_rate=3e-3)


def test_tfcv_fitness_is_deterministic(tiny_recordings):
    a = tfcv_fitness(SMALL, tiny_recordings, SPEC, seed=1, scale=SCALE)
    b = tfcv_fitness(SMALL, tiny_recordings, SPEC, seed=1, scale=SCALE, jobs=2)
    assert a == b and 0 <= a <= 1


def test_tfcv_rejects_single_class_fold(tiny_recordings):
    from dataclasses import replace
    recs = [replace(r, labels=np.zeros_like(r.labels)) if i % 2 == 0 else r
            for i, r in enumerate(tiny_recordings)]
    with pytest.raises(FoldError):
        tfcv_fitness(SMALL, recs, SPEC, seed=1, scale=SCALE)


def test_loo_evaluate(tiny_recordings):
    res = loo_evaluate(SMALL, tiny_recordings, SPEC, seed=2, scale=SCALE, keep_models=True)
    assert [c.subject_id for c in res.cycles] == ["s00", "s01", "s02", "s03"]
    for c in res.cycles:
        assert 0 <= c.auc <= 1 and c.net is not None
        assert len(c.scores) == len(c.labels) == 240
    summary = res.summary()
    assert set(summary) == {"acc", "sen", "spe", "auc"}
    assert {"mean", "std", "min", "max", "table"} <= set(summary["auc"])
    again = loo_evaluate(SMALL, tiny_recordings, SPEC, seed=2, scale=SCALE, jobs=2)
    assert [c.row() for c in again.cycles] == [c.row() for c in res.cycles]
