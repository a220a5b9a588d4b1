"""Segmentation metrics, PR curves, and the cross-validation splitter.

Metrics are percentages over the foreground class. Conventions for
degenerate cases: an empty prediction against an empty ground truth is a
perfect 100 everywhere; a vacuous ratio (no predicted positives for
precision, no actual positives for recall) scores 100, so swapping
prediction and ground truth always swaps precision and recall exactly.
Aggregation averages per-image metrics (mean +- std), not pooled pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from bloomseg.errors import DataError
from bloomseg.raster import PROBS, BinaryMask, ScoreMap


@dataclass(frozen=True)
class MetricValues:
    iou: float
    f1: float
    recall: float
    precision: float


def _ratio(num: int, den: int) -> float:
    return 100.0 * num / den if den > 0 else 100.0


def _from_counts(tp: int, fp: int, fn: int) -> MetricValues:
    iou = _ratio(tp, tp + fp + fn)
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MetricValues(iou, f1, recall, precision)


def pixel_metrics(pred: BinaryMask, gt: BinaryMask) -> MetricValues:
    """IoU / F1 / recall / precision (percent) over foreground pixels."""
    if pred.size != gt.size:
        raise DataError(
            f"prediction {pred.size} and ground truth {gt.size} sizes differ", "eval"
        )
    p, g = pred.bits, gt.bits
    tp = int((p & g).sum())
    fp = int((p & ~g).sum())
    fn = int((~p & g).sum())
    return _from_counts(tp, fp, fn)


def pr_curve(
    probs: ScoreMap, gt: BinaryMask, thresholds: Sequence[float]
) -> list[tuple[float, float, float]]:
    """(threshold, precision, recall) rows; prediction-free rows are skipped
    because precision is undefined there."""
    if probs.kind != PROBS:
        raise DataError("pr_curve needs a probability map", "eval")
    if probs.size != gt.size:
        raise DataError("probability map and ground truth sizes differ", "eval")
    flower = probs.flower()
    g = gt.bits
    rows = []
    for tau in thresholds:
        p = flower >= tau
        tp = int((p & g).sum())
        fp = int((p & ~g).sum())
        fn = int((~p & g).sum())
        if tp + fp == 0:
            continue
        m = _from_counts(tp, fp, fn)
        rows.append((float(tau), m.precision, m.recall))
    return rows


def pooled_pr_curve(
    pairs: Iterable[tuple[ScoreMap, BinaryMask]], thresholds: Sequence[float]
) -> list[tuple[float, float, float]]:
    """PR rows with TP/FP/FN pooled over several (probs, gt) pairs."""
    thresholds = list(thresholds)
    tp = np.zeros(len(thresholds), dtype=np.int64)
    fp = np.zeros(len(thresholds), dtype=np.int64)
    fn = np.zeros(len(thresholds), dtype=np.int64)
    for probs, gt in pairs:
        if probs.kind != PROBS:
            raise DataError("pr_curve needs probability maps", "eval")
        flower = probs.flower()
        g = gt.bits
        for i, tau in enumerate(thresholds):
            p = flower >= tau
            tp[i] += int((p & g).sum())
            fp[i] += int((p & ~g).sum())
            fn[i] += int((~p & g).sum())
    rows = []
    for i, tau in enumerate(thresholds):
        if tp[i] + fp[i] == 0:
            continue
        m = _from_counts(int(tp[i]), int(fp[i]), int(fn[i]))
        rows.append((float(tau), m.precision, m.recall))
    return rows


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[tuple[str, ...], ...]
    unlabeled_fraction: float = 0.7

    def __post_init__(self):
        flat = [i for fold in self.folds for i in fold]
        if len(flat) != len(set(flat)):
            raise DataError("folds overlap", "eval")
        sizes = [len(f) for f in self.folds]
        if sizes and max(sizes) - min(sizes) > 1:
            raise DataError(f"fold sizes {sizes} differ by more than 1", "eval")


def make_folds(item_ids: Sequence[str], k: int, seed: int) -> FoldPlan:
    """Seeded shuffle then round-robin assignment into k disjoint folds."""
    ids = list(item_ids)
    if k < 1 or k > len(ids):
        raise DataError(f"cannot make {k} folds from {len(ids)} items", "eval")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    folds: list[list[str]] = [[] for _ in range(k)]
    for pos, idx in enumerate(order):
        folds[pos % k].append(ids[idx])
    return FoldPlan(tuple(tuple(f) for f in folds))


def split_unlabeled(
    item_ids: Sequence[str], fraction: float, seed: int
) -> tuple[list[str], list[str]]:
    """(unlabeled, held-out-eval) split; unlabeled gets round(fraction * n)."""
    ids = list(item_ids)
    if not 0.0 <= fraction <= 1.0:
        raise DataError(f"fraction must be in [0, 1], got {fraction}", "eval")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_unlabeled = int(round(fraction * len(ids)))
    unlabeled = [ids[i] for i in order[:n_unlabeled]]
    held_out = [ids[i] for i in order[n_unlabeled:]]
    return unlabeled, held_out


@dataclass(frozen=True)
class EvalReport:
    run_id: str
    per_image: dict[str, MetricValues]

    def aggregate(self) -> dict[str, tuple[float, float]]:
        """Per-metric (mean, std) across images."""
        out = {}
        for name in ("iou", "f1", "recall", "precision"):
            vals = np.array([getattr(m, name) for m in self.per_image.values()])
            out[name] = (float(vals.mean()), float(vals.std()))
        return out

    def to_table(self) -> str:
        lines = [f"run: {self.run_id}"]
        header = f"{'image':<20} {'IoU':>7} {'F1':>7} {'Rcll':>7} {'Prcn':>7}"
        lines.append(header)
        lines.append("-" * len(header))
        for img, m in sorted(self.per_image.items()):
            lines.append(
                f"{img:<20} {m.iou:>7.1f} {m.f1:>7.1f} {m.recall:>7.1f} {m.precision:>7.1f}"
            )
        agg = self.aggregate()
        lines.append("-" * len(header))
        lines.append(
            f"{'mean +- std':<20} "
            + " ".join(
                f"{agg[k][0]:>4.1f}+-{agg[k][1]:.1f}"
                for k in ("iou", "f1", "recall", "precision")
            )
        )
        return "\n".join(lines)


def write_plot_data(
    path: str | Path, rows: Sequence[tuple[float, float, float]]
) -> None:
    """Tab-separated (threshold, precision, recall, f1) for external plotting."""
    with open(path, "w") as f:
        f.write("threshold\tprecision\trecall\tf1\n")
        for tau, p, r in rows:
            f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
            f.write(f"{tau:.6g}\t{p:.6f}\t{r:.6f}\t{f1:.6f}\n")
