"""Metrics, ROC analysis, post-processing and subject-independent validation."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .genome import ModelConfig
from .network import FusionNetwork, TrainSpec, build_network, predict_proba, train
from .seeding import derive_seed, pmap
from .signals import MultiChannelRecording, WindowedDataset

METRICS = ("acc", "sen", "spe", "auc")


class FoldError(ValueError):
    """A validation fold cannot be scored (e.g. it holds a single class)."""


# --- confusion metrics -------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def confusion_and_metrics(pred, truth):
    """Return (counts, accuracy, sensitivity, specificity); undefined ratios are None."""
    pred = np.asarray(pred).astype(np.int64)
    truth = np.asarray(truth).astype(np.int64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    tp = int(np.sum((pred == 1) & (truth == 1)))
    tn = int(np.sum((pred == 0) & (truth == 0)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    c = ConfusionCounts(tp, tn, fp, fn)
    return c, _ratio(tp + tn, c.total), _ratio(tp, tp + fn), _ratio(tn, tn + fp)


# --- ROC ---------------------------------------------------------------------

@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_auc(scores, truth) -> RocCurve:
    """ROC over every distinct score (predict positive when score >= threshold).

    The first point has threshold +inf and sits at (0, 0). AUC is the
    trapezoidal area, accumulated in integers so it equals the Mann-Whitney
    statistic with ties counted as one half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(np.int64)
    if scores.shape != truth.shape:
        raise ValueError("scores and truth differ in length")
    n_pos = int(truth.sum())
    n_neg = len(truth) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise FoldError("ROC needs both classes present")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = truth[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.r_[0, np.cumsum(y)[last]]
    fp = np.r_[0, np.cumsum(1 - y)[last]]
    thresholds = np.r_[np.inf, s[last]]
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    auc = twice_area / (2 * n_pos * n_neg)
    return RocCurve(fp / n_neg, tp / n_pos, thresholds, auc)


def mann_whitney_auc(scores, truth) -> float:
    """O(n_pos * n_neg) pairwise AUC."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(bool)
    pos, neg = scores[truth], scores[~truth]
    greater = int(np.sum(pos[:, None] > neg[None, :]))
    equal = int(np.sum(pos[:, None] == neg[None, :]))
    return (2 * greater + equal) / (2 * len(pos) * len(neg))


def optimal_cutoff(curve: RocCurve) -> float:
    """Threshold maximizing Youden's J = TPR - FPR; ties go to the higher threshold."""
    j = curve.tpr - curve.fpr
    # thresholds are descending, so argmax already prefers the highest one
    return float(curve.thresholds[int(np.argmax(j))])


def postprocess_majority(labels) -> np.ndarray:
    """Replace each interior label by the majority of its 3-window in the input."""
    x = np.asarray(labels).astype(np.int64)
    out = x.copy()
    if len(x) >= 3:
        out[1:-1] = (x[:-2] + x[1:-1] + x[2:] >= 2).astype(np.int64)
    return out


# --- validation --------------------------------------------------------------

@dataclass(frozen=True)
class SubjectSplit:
    folds: dict[str, int]
    kind: str

    @property
    def n_folds(self) -> int:
        return len(set(self.folds.values()))

    def members(self, fold: int) -> list[str]:
        return [s for s, f in self.folds.items() if f == fold]

    def others(self, fold: int) -> list[str]:
        return [s for s, f in self.folds.items() if f != fold]


def tfcv_split(subject_ids: Sequence[str]) -> SubjectSplit:
    """Two subject-disjoint folds: sorted ids, assigned alternately."""
    ids = sorted(set(subject_ids))
    if len(ids) < 2:
        raise FoldError("two-fold validation needs at least two subjects")
    return SubjectSplit({s: k % 2 for k, s in enumerate(ids)}, "tfcv")


def loo_split(subject_ids: Sequence[str]) -> SubjectSplit:
    ids = sorted(set(subject_ids))
    if len(ids) < 2:
        raise FoldError("leave-one-out needs at least two subjects")
    return SubjectSplit({s: k for k, s in enumerate(ids)}, "loo")


@dataclass(frozen=True)
class NetworkScale:
    """Optional size overrides for desk-scale runs (None keeps the decoded size)."""
    lstm_shape: int | None = None
    dense_size: int | None = None


def _by_id(recordings: Sequence[MultiChannelRecording]) -> dict[str, MultiChannelRecording]:
    out = {r.subject_id: r for r in recordings}
    if len(out) != len(recordings):
        raise ValueError("duplicate subject ids")
    return out


def fit_fresh(config: ModelConfig, train_recs: Sequence[MultiChannelRecording],
              spec: TrainSpec, scale: NetworkScale = NetworkScale()):
    """Cold start: new weights from ``spec.seed``, then train."""
    data = WindowedDataset(train_recs, config.time_steps, config.channels)
    if np.unique(data.labels).size < 2:
        raise FoldError("training fold holds a single class")
    net = build_network(config, seed=derive_seed(spec.seed, "init"),
                        lstm_shape=scale.lstm_shape, dense_size=scale.dense_size)
    net, history = train(net, data, spec)
    return net, data, history


def _tfcv_fold(ctx, fold):
    config, recs, spec, scale, split, seed = ctx
    by_id = _by_id(recs)
    train_recs = [by_id[s] for s in split.others(fold)]
    test_recs = [by_id[s] for s in split.members(fold)]
    net, _, _ = fit_fresh(config, train_recs, replace(spec, seed=derive_seed(seed, "tfcv", fold)),
                          scale)
    test = WindowedDataset(test_recs, config.time_steps, config.channels)
    return roc_auc(predict_proba(net, test), test.labels).auc


def tfcv_fitness(config: ModelConfig, recordings: Sequence[MultiChannelRecording],
                 train_spec: TrainSpec, seed: int, scale: NetworkScale = NetworkScale(),
                 jobs: int = 1) -> float:
    """Mean test AUC of the two subject-disjoint folds."""
    split = tfcv_split([r.subject_id for r in recordings])
    for fold in (0, 1):
        labels = np.concatenate([r.labels for r in recordings if split.folds[r.subject_id] == fold])
        if labels.min() == labels.max():
            raise FoldError(f"fold {fold} holds a single class")
    ctx = (config, list(recordings), train_spec, scale, split, seed)
    aucs = pmap(_tfcv_fold, [0, 1], ctx, jobs)
    return float(np.mean(aucs))


@dataclass
class CycleResult:
    subject_id: str
    acc: float | None
    sen: float | None
    spe: float | None
    auc: float | None
    threshold: float
    scores: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    net: FusionNetwork | None = field(default=None, repr=False)

    def row(self) -> dict:
        return {"subject_id": self.subject_id, "acc": self.acc, "sen": self.sen,
                "spe": self.spe, "auc": self.auc, "threshold": self.threshold}


def score_subject(net: FusionNetwork, test: WindowedDataset | object, threshold: float,
                  subject_id: str, keep_net: bool = False) -> CycleResult:
    scores = predict_proba(net, test)
    truth = np.asarray(test.labels)
    pred = postprocess_majority((scores >= threshold).astype(np.int64))
    _, acc, sen, spe = confusion_and_metrics(pred, truth)
    auc = roc_auc(scores, truth).auc if 0 < truth.sum() < len(truth) else None
    return CycleResult(subject_id, acc, sen, spe, auc, threshold, scores, truth,
                       net if keep_net else None)


def loo_cycle_seed(seed: int, subject_id: str) -> int:
    return derive_seed(seed, "loo", subject_id)


def _loo_cycle(ctx, subject_id):
    config, recs, spec, scale, seed, keep = ctx
    by_id = _by_id(recs)
    train_recs = [r for r in recs if r.subject_id != subject_id]
    net, train_data, _ = fit_fresh(config, train_recs,
                                   replace(spec, seed=loo_cycle_seed(seed, subject_id)), scale)
    curve = roc_auc(predict_proba(net, train_data), train_data.labels)
    threshold = optimal_cutoff(curve)
    test = WindowedDataset([by_id[subject_id]], config.time_steps, config.channels)
    return score_subject(net, test, threshold, subject_id, keep_net=keep)


def aggregate(values: Sequence[float | None]) -> dict:
    """mean, sample std, min and max over the defined values."""
    v = np.array([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return {"mean": None, "std": None, "min": None, "max": None, "n": 0}
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return {"mean": float(v.mean()), "std": std, "min": float(v.min()), "max": float(v.max()),
            "n": int(v.size)}


def format_table_entry(agg: dict, scale: float = 100.0) -> str:
    """'mean ± std (min – max)' in percent."""
    if agg["mean"] is None:
        return "n/a"
    return (f"{agg['mean'] * scale:.2f} ± {agg['std'] * scale:.2f} "
            f"({agg['min'] * scale:.2f} – {agg['max'] * scale:.2f})")


@dataclass
class LooResult:
    cycles: list[CycleResult]

    @property
    def aggregates(self) -> dict:
        return {m: aggregate([getattr(c, m) for c in self.cycles]) for m in METRICS}

    def summary(self) -> dict:
        agg = self.aggregates
        return {m: {**agg[m], "table": format_table_entry(agg[m])} for m in METRICS}


def loo_evaluate(config: ModelConfig, recordings: Sequence[MultiChannelRecording],
                 train_spec: TrainSpec, seed: int, scale: NetworkScale = NetworkScale(),
                 jobs: int = 1, keep_models: bool = False,
                 on_cycle: Callable[[CycleResult], None] | None = None) -> LooResult:
    """One cold-start training per held-out subject; threshold from the training ROC."""
    split = loo_split([r.subject_id for r in recordings])
    for r in recordings:
        if r.labels.min() == r.labels.max():
            raise FoldError(f"subject {r.subject_id} holds a single class")
    ctx = (config, list(recordings), train_spec, scale, seed, keep_models)
    order = sorted(split.folds)
    cycles = pmap(_loo_cycle, order, ctx, jobs)
    if on_cycle is not None:
        for c in cycles:
            on_cycle(c)
    return LooResult(cycles)
