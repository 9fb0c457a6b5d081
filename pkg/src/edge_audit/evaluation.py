"""Challenge metrics: log loss, macro accuracy, jackknife intervals, rankings.

Per-segment quantities are always reduced in sorted ``segment_id`` order so
results are bit-stable regardless of input order or thread count.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from statistics import NormalDist
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateLabel,
    DuplicatePrediction,
    InsufficientData,
    MissingPrediction,
    UnknownGroupKey,
)
from .labels import CLASS_INDEX, DEFAULT_SEEN_DEVICES, SCENE_CLASSES

log = logging.getLogger(__name__)

PROB_EPS = 1e-15
SUM_TOLERANCE = 1e-3
GROUP_KEYS = ("device", "city", "class", "seen_unseen_device", "seen_unseen_city")
GROUP_ALIASES = {"seen": "seen_unseen_device", "scene": "class"}


@dataclass(frozen=True)
class PredictionRecord:
    segment_id: str
    predicted_label: str
    probabilities: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=np.float64).reshape(-1)
        if probs.shape != (len(SCENE_CLASSES),):
            raise ValueError(f"{self.segment_id}: expected {len(SCENE_CLASSES)} probabilities, got {probs.size}")
        if not np.all(np.isfinite(probs)) or probs.min() < 0:
            raise ValueError(f"{self.segment_id}: probabilities must be finite and non-negative")
        if self.predicted_label not in CLASS_INDEX:
            raise ValueError(f"{self.segment_id}: unknown class {self.predicted_label!r}")
        object.__setattr__(self, "probabilities", probs)


@dataclass(frozen=True)
class GroundTruthRecord:
    segment_id: str
    true_label: str
    device: str = "A"
    city: str = ""
    seen_device: bool | None = None
    seen_city: bool = True

    def __post_init__(self):
        if self.true_label not in CLASS_INDEX:
            raise ValueError(f"{self.segment_id}: unknown class {self.true_label!r}")
        if self.seen_device is None:
            object.__setattr__(self, "seen_device", self.device in DEFAULT_SEEN_DEVICES)


@dataclass(frozen=True)
class Aligned:
    """Predictions matched to truth, sorted by segment id."""

    ids: list[str]
    truth: list[GroundTruthRecord]
    probs: np.ndarray  # (n, 10), rows renormalised
    predicted: np.ndarray  # (n,) class indices
    labels: np.ndarray  # (n,) true class indices

    @property
    def n(self) -> int:
        return len(self.ids)

    def subset(self, mask: np.ndarray) -> "Aligned":
        idx = np.flatnonzero(mask)
        return Aligned(
            [self.ids[i] for i in idx],
            [self.truth[i] for i in idx],
            self.probs[idx],
            self.predicted[idx],
            self.labels[idx],
        )


def align(preds: Iterable[PredictionRecord], truth: Iterable[GroundTruthRecord]) -> Aligned:
    by_id: dict[str, PredictionRecord] = {}
    for p in preds:
        if p.segment_id in by_id:
            raise DuplicatePrediction(f"more than one prediction for {p.segment_id!r}")
        by_id[p.segment_id] = p
    truth = sorted(truth, key=lambda t: t.segment_id)
    ids = [t.segment_id for t in truth]
    if len(set(ids)) != len(ids):
        raise DuplicatePrediction("ground truth lists a segment more than once")
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise MissingPrediction(missing)
    extra = len(by_id) - len(ids)
    if extra:
        log.warning("ignoring %d prediction(s) for segments absent from the ground truth", extra)

    probs = np.array([by_id[i].probabilities for i in ids], dtype=np.float64).reshape(len(ids), len(SCENE_CLASSES))
    sums = probs.sum(axis=1)
    off = np.abs(sums - 1.0) > SUM_TOLERANCE
    if off.any():
        log.warning("renormalising %d prediction(s) whose probabilities do not sum to 1", int(off.sum()))
    probs = probs / np.where(sums > 0, sums, 1.0)[:, None]
    predicted = np.array([CLASS_INDEX[by_id[i].predicted_label] for i in ids], dtype=np.int64)
    labels = np.array([CLASS_INDEX[t.true_label] for t in truth], dtype=np.int64)
    return Aligned(ids, truth, probs, predicted, labels)


def _aligned(preds, truth) -> Aligned:
    return preds if isinstance(preds, Aligned) else align(preds, truth)


def per_segment_losses(preds, truth=None) -> np.ndarray:
    a = _aligned(preds, truth)
    p_true = a.probs[np.arange(a.n), a.labels]
    return -np.log(np.maximum(p_true, PROB_EPS))


def log_loss(preds, truth=None) -> float:
    """Mean negative log probability of the true class, clipped at 1e-15."""
    losses = per_segment_losses(preds, truth)
    if losses.size == 0:
        raise InsufficientData("no segments to score")
    return float(losses.sum() / losses.size)


def macro_accuracy(preds, truth=None) -> tuple[float, dict[str, float]]:
    """Mean of per-class recalls over classes present in the truth.

    The mean is taken over exact fractions and rounded once, so on
    class-balanced data it is bit-identical to plain accuracy.
    """
    a = _aligned(preds, truth)
    if a.n == 0:
        raise InsufficientData("no segments to score")
    recalls, exact = {}, []
    correct = a.predicted == a.labels
    for k, name in enumerate(SCENE_CLASSES):
        in_class = a.labels == k
        count = int(in_class.sum())
        if count:
            hits = int(correct[in_class].sum())
            recalls[name] = hits / count
            exact.append(Fraction(hits, count))
    return float(sum(exact) / len(exact)), recalls


def _z(alpha: float) -> float:
    return NormalDist().inv_cdf(1.0 - alpha / 2.0)


def _interval(estimate: float, loo: np.ndarray, alpha: float) -> tuple[float, float]:
    n = loo.size
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    half = _z(alpha) * se
    return estimate - half, estimate + half


def jackknife_ci(
    values: Sequence[float],
    alpha: float = 0.05,
    statistic: Callable[[np.ndarray], float] | None = None,
) -> tuple[float, float]:
    """Normal-quantile jackknife interval for ``statistic`` (default: mean).

    The leave-one-out estimates give ``SE = sqrt((n-1)/n * sum (t_i - t_bar)^2)``
    and the interval is the full-sample estimate +/- z * SE.
    """
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    n = x.size
    if n < 2:
        raise InsufficientData(f"jackknife needs at least 2 values, got {n}")
    if statistic is None:
        estimate = float(x.sum() / n)
        loo = (x.sum() - x) / (n - 1)
    else:
        estimate = float(statistic(x))
        loo = np.array([statistic(np.delete(x, i)) for i in range(n)])
    return _interval(estimate, loo, alpha)


def macro_accuracy_loo(correct: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Leave-one-out macro accuracies, computed class-wise in O(n)."""
    classes = np.unique(labels)
    counts = {k: int((labels == k).sum()) for k in classes}
    hits = {k: int(correct[labels == k].sum()) for k in classes}
    recall = {k: hits[k] / counts[k] for k in classes}
    total = sum(recall.values())
    out = np.empty(labels.size)
    for i, (k, c) in enumerate(zip(labels, correct)):
        if counts[k] == 1:
            out[i] = (total - recall[k]) / (len(classes) - 1)
        else:
            out[i] = (total - recall[k] + (hits[k] - int(c)) / (counts[k] - 1)) / len(classes)
    return out


def accuracy_ci(preds, truth=None, alpha: float = 0.05) -> tuple[float, float]:
    a = _aligned(preds, truth)
    if a.n < 2:
        raise InsufficientData("jackknife needs at least 2 segments")
    correct = (a.predicted == a.labels).astype(np.int64)
    if np.unique(a.labels).size == 1:
        return jackknife_ci(correct.astype(np.float64), alpha)
    estimate, _ = macro_accuracy(a)
    return _interval(estimate, macro_accuracy_loo(correct, a.labels), alpha)


@dataclass(frozen=True)
class GroupMetrics:
    key: str
    count: int
    log_loss: float
    accuracy: float


def _group_value(t: GroundTruthRecord, by: str) -> str:
    if by == "device":
        return t.device
    if by == "city":
        return t.city
    if by == "class":
        return t.true_label
    if by == "seen_unseen_device":
        return "seen" if t.seen_device else "unseen"
    return "seen" if t.seen_city else "unseen"


def normalize_group_key(by: str) -> str:
    by = GROUP_ALIASES.get(by, by)
    if by not in GROUP_KEYS:
        raise UnknownGroupKey(f"unknown grouping {by!r}; choose from {', '.join(GROUP_KEYS)}")
    return by


def group_breakdown(preds, truth=None, by: str = "device") -> list[GroupMetrics]:
    """Log loss and macro accuracy per group; groups partition the data."""
    by = normalize_group_key(by)
    a = _aligned(preds, truth)
    keys = np.array([_group_value(t, by) for t in a.truth], dtype=object)
    if by == "class":
        order = [c for c in SCENE_CLASSES if c in set(keys)]
    else:
        order = sorted(set(keys))
    out = []
    for key in order:
        sub = a.subset(keys == key)
        out.append(GroupMetrics(key, sub.n, log_loss(sub), macro_accuracy(sub)[0]))
    return out


@dataclass(frozen=True)
class EvaluationReport:
    count: int
    log_loss: float
    accuracy: float
    per_class_recall: dict[str, float]
    log_loss_ci: tuple[float, float] | None = None
    accuracy_ci: tuple[float, float] | None = None
    groups: dict[str, list[GroupMetrics]] = field(default_factory=dict)

    def to_table(self) -> str:
        lines = [f"segments:  {self.count}"]
        ll = f"log loss:  {self.log_loss:.3f}"
        if self.log_loss_ci:
            ll += f"  CI [{self.log_loss_ci[0]:.3f}, {self.log_loss_ci[1]:.3f}]"
        acc = f"accuracy:  {100 * self.accuracy:.1f}%"
        if self.accuracy_ci:
            acc += f"  CI [{100 * self.accuracy_ci[0]:.1f}, {100 * self.accuracy_ci[1]:.1f}]"
        lines += [ll, acc]
        for by, rows in self.groups.items():
            lines.append("")
            lines.append(f"{by:<20} {'count':>8} {'log loss':>10} {'accuracy':>10}")
            for g in rows:
                lines.append(f"{g.key:<20} {g.count:>8} {g.log_loss:>10.3f} {100 * g.accuracy:>9.1f}%")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group_by", "group", "count", "log_loss", "accuracy", "log_loss_low", "log_loss_high", "accuracy_low", "accuracy_high"])
        ll_ci = self.log_loss_ci or ("", "")
        acc_ci = self.accuracy_ci or ("", "")
        w.writerow(["overall", "all", self.count, repr(self.log_loss), repr(self.accuracy), *ll_ci, *acc_ci])
        for by, rows in self.groups.items():
            for g in rows:
                w.writerow([by, g.key, g.count, repr(g.log_loss), repr(g.accuracy), "", "", "", ""])
        return buf.getvalue()


def evaluate(preds, truth=None, *, by: Sequence[str] = (), ci: bool = True, alpha: float = 0.05) -> EvaluationReport:
    a = _aligned(preds, truth)
    losses = per_segment_losses(a)
    acc, recalls = macro_accuracy(a)
    ll_ci = acc_ci = None
    if ci and a.n >= 2:
        ll_ci = jackknife_ci(losses, alpha)
        acc_ci = accuracy_ci(a, alpha=alpha)
    groups = {normalize_group_key(g): group_breakdown(a, by=g) for g in by}
    return EvaluationReport(a.n, log_loss(a), acc, recalls, ll_ci, acc_ci, groups)


@dataclass(frozen=True)
class LeaderboardEntry:
    rank: int
    label: str
    log_loss: float
    accuracy: float


def rank_submissions(entries: Iterable[tuple[str, float, float]]) -> list[LeaderboardEntry]:
    """Ascending log loss; ties go to higher accuracy, then label order."""
    entries = list(entries)
    labels = [e[0] for e in entries]
    dupes = sorted({l for l in labels if labels.count(l) > 1})
    if dupes:
        raise DuplicateLabel(f"duplicate submission label(s): {', '.join(dupes)}")
    ordered = sorted(entries, key=lambda e: (e[1], -e[2], e[0]))
    return [LeaderboardEntry(i, label, ll, acc) for i, (label, ll, acc) in enumerate(ordered, start=1)]
