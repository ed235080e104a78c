"""Displacement, miss, overlap and average-precision metrics for multi-modal predictions."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import PredictionSet

MISS_THRESHOLD = 2.0
OVERLAP_RADIUS = 1.0
HORIZONS = {"3s": 6, "5s": 10, "8s": 16}


@dataclass
class EvalRecord:
    scenario_id: str
    pred: PredictionSet
    gt_future: np.ndarray  # (T, 2)
    others_future: list = field(default_factory=list)  # (T, 2) each
    others_valid: list | None = None  # (T,) bool each; None means all valid

    def __post_init__(self):
        self.gt_future = np.asarray(self.gt_future, dtype=np.float64)
        if self.pred.trajectories.shape[1:] != self.gt_future.shape:
            raise ValueError(f"{self.scenario_id}: prediction {self.pred.trajectories.shape} "
                             f"vs ground truth {self.gt_future.shape}")
        self.others_future = [np.asarray(o, dtype=np.float64) for o in self.others_future]
        if any(o.shape != self.gt_future.shape for o in self.others_future):
            raise ValueError(f"{self.scenario_id}: other-agent futures must match ground-truth length")
        if self.others_valid is None:
            self.others_valid = [np.ones(len(self.gt_future), dtype=bool) for _ in self.others_future]
        if len(self.others_valid) != len(self.others_future):
            raise ValueError(f"{self.scenario_id}: others_valid length mismatch")

    def truncated(self, steps: int) -> "EvalRecord":
        return EvalRecord(self.scenario_id,
                          PredictionSet(self.pred.trajectories[:, :steps], self.pred.probs),
                          self.gt_future[:steps],
                          [o[:steps] for o in self.others_future],
                          [np.asarray(v)[:steps] for v in self.others_valid])


def _errors(rec: EvalRecord) -> np.ndarray:
    """(K, T) displacement of every mode at every step."""
    return np.linalg.norm(rec.pred.trajectories - rec.gt_future[None], axis=-1)


def min_ade(rec: EvalRecord) -> float:
    return float(_errors(rec).mean(axis=1).min())


def fde_per_mode(rec: EvalRecord) -> np.ndarray:
    return _errors(rec)[:, -1]


def min_fde(rec: EvalRecord) -> float:
    return float(fde_per_mode(rec).min())


def miss_rate(records: Sequence[EvalRecord], threshold: float = MISS_THRESHOLD) -> float:
    if not records:
        raise ValueError("miss_rate needs at least one record")
    return float(np.mean([min_fde(r) > threshold for r in records]))


def overlaps(rec: EvalRecord, radius: float = OVERLAP_RADIUS) -> bool:
    """Does the most probable trajectory pass within ``radius`` of another agent at the same step?"""
    if not rec.others_future:
        return False
    top = rec.pred.trajectories[int(np.argmax(rec.pred.probs))]
    others = np.stack(rec.others_future)  # (N, T, 2)
    valid = np.stack(rec.others_valid).astype(bool)
    d = np.linalg.norm(others - top[None], axis=-1)
    return bool(((d <= radius) & valid).any())


def overlap_rate(records: Sequence[EvalRecord], radius: float = OVERLAP_RADIUS) -> float:
    if not records:
        raise ValueError("overlap_rate needs at least one record")
    return float(np.mean([overlaps(r, radius) for r in records]))


def map_score(records: Sequence[EvalRecord], threshold: float = MISS_THRESHOLD) -> float:
    """Single-bucket average precision over all (record, mode) pairs ranked by probability.

    A pair is a true positive when its endpoint error is within ``threshold``
    and no higher-ranked pair of the same record already was; everything else
    is a false positive.  Pairs with equal probability form one operating
    point.  AP is the area under the interpolated precision/recall curve, with
    recall measured against the number of records.
    """
    if not records:
        raise ValueError("map_score needs at least one record")
    probs = np.concatenate([r.pred.probs for r in records])
    hits = np.concatenate([fde_per_mode(r) <= threshold for r in records])
    owner = np.concatenate([np.full(len(r.pred.probs), i) for i, r in enumerate(records)])
    order = np.argsort(-probs, kind="stable")
    probs, hits, owner = probs[order], hits[order], owner[order]

    seen = np.zeros(len(records), dtype=bool)
    tp = np.zeros(len(probs))
    for i in range(len(probs)):
        if hits[i] and not seen[owner[i]]:
            seen[owner[i]] = True
            tp[i] = 1.0
    cum_tp = np.cumsum(tp)
    # operating points at the end of each block of equal probability
    ends = np.flatnonzero(np.r_[probs[1:] != probs[:-1], True])
    tp_at = cum_tp[ends]
    n_at = ends + 1.0
    precision = tp_at / n_at
    recall = tp_at / len(records)
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * interp))


def evaluate(records: Sequence[EvalRecord], miss_threshold: float = MISS_THRESHOLD,
             overlap_radius: float = OVERLAP_RADIUS, horizons: dict[str, int] | None = None) -> list[tuple[str, float, int]]:
    """Rows of (metric, value, count).  ``horizons`` adds per-horizon rows like ``minADE@3s``."""
    if not records:
        raise ValueError("evaluate needs at least one record")
    rows = _metric_rows(records, miss_threshold, overlap_radius, "")
    for label, steps in (horizons or {}).items():
        rows += _metric_rows([r.truncated(steps) for r in records], miss_threshold, overlap_radius, f"@{label}")
    return rows


def _metric_rows(records, miss_threshold, overlap_radius, suffix):
    n = len(records)
    return [
        (f"minADE{suffix}", float(np.mean([min_ade(r) for r in records])), n),
        (f"minFDE{suffix}", float(np.mean([min_fde(r) for r in records])), n),
        (f"miss_rate{suffix}", miss_rate(records, miss_threshold), n),
        (f"overlap_rate{suffix}", overlap_rate(records, overlap_radius), n),
        (f"mAP{suffix}", map_score(records, miss_threshold), n),
    ]


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value", "count"])
    for name, value, count in rows:
        w.writerow([name, repr(float(value)), int(count)])
    return buf.getvalue()


def write_metrics_csv(path: str | os.PathLike, rows) -> None:
    Path(path).write_text(metrics_csv(rows))


def read_metrics_csv(path: str | os.PathLike) -> dict[str, float]:
    with open(path, newline="") as fh:
        return {row["metric"]: float(row["value"]) for row in csv.DictReader(fh)}
