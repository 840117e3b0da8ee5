"""Image and map metrics, and the method comparison that produces metrics tables."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from lidarsr.geometry import normalize
from lidarsr.mapping import FREE, OCCUPIED, GridConfig, OccupancyParams, VoxelGrid, build_map
from lidarsr.upscale import McResult, Upscaler, upscale_scan

log = logging.getLogger(__name__)


def l1_metric(pred, truth) -> float:
    """Mean absolute error over all pixels."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return float(np.abs(pred.astype(np.float64) - truth.astype(np.float64)).mean())


def removed_points_pct(result: McResult) -> float:
    mean = np.asarray(result.mean)
    positive = mean > 0
    n = int(positive.sum())
    if n == 0:
        log.warning("removed_points_pct: no positive-mean pixels")
        return 0.0
    removed = positive & (np.asarray(result.final) == 0)
    return 100.0 * float(removed.sum()) / n


@dataclass(frozen=True, eq=False)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_from_scores(scores, labels) -> RocCurve:
    """ROC swept over every distinct score, highest first.

    Equal scores form one step, so ties contribute a diagonal segment.
    The first point is (0, 0) at threshold +inf.
    """
    scores = np.asarray(scores, np.float64)
    labels = np.asarray(labels, bool)
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"degenerate ROC: {n_pos} positives, {n_neg} negatives")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    # last index of each run of equal scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(np.r_[np.inf, s[ends]], fpr, tpr, auc)


def roc_auc(pred: VoxelGrid, truth: VoxelGrid) -> RocCurve:
    """Occupied-vs-free ROC of ``pred`` probabilities over voxels known in ``truth``.

    Voxels unknown in the truth map are excluded; unknown predicted voxels score 0.5.
    """
    if not pred.same_layout(truth):
        raise ValueError(f"grid mismatch: {pred.config} vs {truth.config}")
    states = truth.states()
    known = (states == OCCUPIED) | (states == FREE)
    scores = pred.probabilities()[known]
    labels = states[known] == OCCUPIED
    return roc_from_scores(scores, labels)


@dataclass
class MetricsReport:
    method: str
    l1: float | None
    removed_pct: float | None
    auc: float
    scan_count: int
    ms_per_image: float | None
    roc: RocCurve | None = field(default=None, repr=False)

    def row(self) -> dict:
        def fmt(v, spec):
            return "N/A" if v is None else format(v, spec)

        return {
            "method": self.method,
            "l1": fmt(self.l1, ".6f"),
            "removed_pct": fmt(self.removed_pct, ".2f"),
            "auc": fmt(self.auc, ".6f"),
            "ms_per_image": fmt(self.ms_per_image, ".1f"),
        }


METRIC_FIELDS = ["method", "l1", "removed_pct", "auc", "ms_per_image"]


@dataclass
class EvalSet:
    """Registered test scans with their ground truth, and the map layout."""

    pairs: list
    grid: GridConfig
    occupancy: OccupancyParams = field(default_factory=OccupancyParams)

    _truth: VoxelGrid | None = field(default=None, repr=False)

    def truth_map(self) -> VoxelGrid:
        if self._truth is None:
            self._truth = build_map([(p.high, p.pose) for p in self.pairs], self.grid, self.occupancy)
        return self._truth


def evaluate_method(evalset: EvalSet, method, keep_outputs: bool = False):
    """Metrics for one method; ``method`` is an Upscaler or the string "baseline"."""
    truth = evalset.truth_map()
    if method == "baseline":
        grid = build_map([(p.low, p.pose) for p in evalset.pairs], evalset.grid, evalset.occupancy)
        roc = roc_auc(grid, truth)
        return MetricsReport("baseline", None, None, roc.auc, len(evalset.pairs), None, roc), grid, []
    assert isinstance(method, Upscaler)
    l1s, removed, seconds, outputs, scans = [], [], [], [], []
    for p in evalset.pairs:
        img, out = upscale_scan(p.low, method)
        seconds.append(out.seconds)
        # unfiltered prediction for L1, as is fair to methods with a filter
        raw = out.mc.mean if out.mc is not None else out.image
        l1s.append(l1_metric(raw, normalize(p.high)))
        if out.mc is not None:
            removed.append(removed_points_pct(out.mc))
        scans.append((img, p.pose))
        if keep_outputs:
            outputs.append((img, out))
    grid = build_map(scans, evalset.grid, evalset.occupancy)
    roc = roc_auc(grid, truth)
    report = MetricsReport(
        method.name, float(np.mean(l1s)), float(np.mean(removed)) if removed else None,
        roc.auc, len(evalset.pairs), 1000.0 * float(np.mean(seconds)), roc,
    )
    return report, grid, outputs


def compare_methods(evalset: EvalSet, methods) -> list[MetricsReport]:
    reports = []
    for m in methods:
        t0 = time.perf_counter()
        rep, _, _ = evaluate_method(evalset, m)
        log.info("%s: l1=%s removed=%s auc=%.4f (%.1fs)", rep.method, rep.l1, rep.removed_pct,
                 rep.auc, time.perf_counter() - t0)
        reports.append(rep)
    return reports


def write_metrics_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.row())


def write_roc_csv(curves: dict, path) -> None:
    """``curves`` maps method name to RocCurve."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "threshold", "fpr", "tpr"])
        for name, c in curves.items():
            for th, f, t in zip(c.thresholds, c.fpr, c.tpr):
                w.writerow([name, "inf" if math.isinf(th) else f"{th:.9g}", f"{f:.9g}", f"{t:.9g}"])


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
