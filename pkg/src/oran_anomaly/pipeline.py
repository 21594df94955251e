"""Serving-cell alerting and neighbor-cell handover candidate filtering."""
from __future__ import annotations

import csv
import json
from collections import defaultdict, deque
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .dataset import N_NEIGHBORS, KpiReport, LabeledReport
from .detectors import DetectorModel, build_model, default_params, score_and_label
from .features import PER_NEIGHBOR, SERVING_PLUS_NEIGHBORS, FeatureSchema, SchemaError, extract_matrix
from .kpi import PRB_CONTENTION_CUTOFF, CellId, PrbConfig, prb_utilization


def _require_schema(model: DetectorModel, schema: FeatureSchema):
    got = getattr(model, "schema_", None)
    if got is None or got.id != schema.id:
        raise SchemaError(f"model expects schema {getattr(got, 'id', None)!r}, pipeline needs {schema.id!r}")


def _report(item: KpiReport | LabeledReport) -> KpiReport:
    return item.report if isinstance(item, LabeledReport) else item


# ------------------------------------------------------------ serving cell

@dataclass(frozen=True)
class AnomalyAlert:
    """A report the serving-cell detector classified as anomalous."""

    ue_id: str
    timestamp: int
    model: str
    score: float
    report_index: int
    label: int = 1

    def __post_init__(self):
        if self.label != 1:
            raise ValueError("alerts are only emitted for label 1")

    def to_dict(self) -> dict:
        return {"ue_id": self.ue_id, "timestamp": self.timestamp, "model": self.model,
                "score": self.score, "label": self.label, "report_index": self.report_index}


def detect_serving(model: DetectorModel, reports: Sequence[KpiReport | LabeledReport],
                   start_index: int = 0) -> list[AnomalyAlert]:
    """Alerts for the anomalous reports of a batch, in input order.

    ``report_index`` is the position in ``reports`` plus ``start_index``.
    """
    _require_schema(model, SERVING_PLUS_NEIGHBORS)
    reps = [_report(r) for r in reports]
    if not reps:
        return []
    scores, labels = score_and_label(model, extract_matrix(reps, SERVING_PLUS_NEIGHBORS))
    return [AnomalyAlert(reps[i].ue_id, reps[i].timestamp, model.kind, float(scores[i]), start_index + int(i))
            for i in np.flatnonzero(labels)]


@dataclass
class FilterResult:
    kept: list
    removed: int
    cutoff: float


def prb_contention_filter(reports: Iterable[KpiReport | LabeledReport], cutoff: float = PRB_CONTENTION_CUTOFF,
                          cfg: PrbConfig | None = None) -> FilterResult:
    """Keep reports whose PRB utilisation is at most ``cutoff``."""
    if not 0.0 < cutoff <= 1.0:
        raise ValueError(f"cutoff must be in (0, 1], got {cutoff}")
    kept, removed = [], 0
    for item in reports:
        if prb_utilization(_report(item).prb_used_dl, cfg) <= cutoff:
            kept.append(item)
        else:
            removed += 1
    return FilterResult(kept, removed, cutoff)


# ------------------------------------------------------------ neighbor cells

def neighbor_training_set(filtered: Sequence[KpiReport | LabeledReport]) -> tuple[np.ndarray, np.ndarray | None]:
    """Per-neighbor radio triplets, one row per (report, neighbor).

    Each row inherits its report's throughput label when labels are present
    (``None`` otherwise).
    """
    reps = [_report(r) for r in filtered]
    X = extract_matrix(reps, PER_NEIGHBOR)
    if all(isinstance(r, LabeledReport) for r in filtered):
        y = np.repeat(np.array([r.label for r in filtered], dtype=np.int64), N_NEIGHBORS)
    else:
        y = None
    return X, y


def train_neighbor_model(filtered: Sequence[KpiReport | LabeledReport], kind: str = "random_forest",
                         params: dict | None = None) -> DetectorModel:
    """Detector of poor neighbor coverage, trained on contention-free reports."""
    if not filtered:
        raise ValueError("neighbor model needs a non-empty training set")
    X, y = neighbor_training_set(filtered)
    model = build_model(kind, **(params if params is not None else default_params(kind)))
    return model.fit(X, y, schema=PER_NEIGHBOR)


@dataclass(frozen=True)
class NeighborScore:
    cell: CellId
    anomalous: bool
    score: float


@dataclass(frozen=True)
class NeighborVerdict:
    """Neighbor scores of one report and the cells left as handover candidates."""

    ue_id: str
    timestamp: int
    neighbors: tuple[NeighborScore, ...]
    viable_cells: tuple[CellId, ...]

    @property
    def flagged_cells(self) -> tuple[CellId, ...]:
        return tuple(n.cell for n in self.neighbors if n.anomalous)

    @property
    def n_flagged(self) -> int:
        return sum(n.anomalous for n in self.neighbors)

    def to_dict(self) -> dict:
        return {
            "ue_id": self.ue_id, "timestamp": self.timestamp,
            "neighbors": [{"cell": n.cell.value, "anomalous": n.anomalous, "score": n.score}
                          for n in self.neighbors],
            "viable_cells": [c.value for c in self.viable_cells],
        }


def _verdicts(reps: list[KpiReport], scores: np.ndarray, labels: np.ndarray) -> list[NeighborVerdict]:
    out = []
    for k, r in enumerate(reps):
        cells = []
        for i, (cell, _) in enumerate(r.neighbors):
            j = k * N_NEIGHBORS + i
            cells.append(NeighborScore(cell, bool(labels[j]), float(scores[j])))
        out.append(NeighborVerdict(r.ue_id, r.timestamp, tuple(cells),
                                   tuple(c.cell for c in cells if not c.anomalous)))
    return out


def filter_neighbors_batch(model: DetectorModel, reports: Sequence[KpiReport | LabeledReport]) -> list[NeighborVerdict]:
    """Score every neighbor of every report in one pass."""
    _require_schema(model, PER_NEIGHBOR)
    reps = [_report(r) for r in reports]
    if not reps:
        return []
    scores, labels = score_and_label(model, extract_matrix(reps, PER_NEIGHBOR))
    return _verdicts(reps, scores, labels)


def filter_neighbors(model: DetectorModel, report: KpiReport | LabeledReport) -> NeighborVerdict:
    return filter_neighbors_batch(model, [report])[0]


@dataclass
class NeighborSummary:
    fraction: float                  # over all (report, neighbor) pairs
    per_ue: dict[str, float]         # mean flagged fraction per UE
    mean_viable: float               # viable cells per report
    n_reports: int

    def to_dict(self) -> dict:
        return {"fraction": self.fraction, "per_ue": self.per_ue,
                "mean_viable": self.mean_viable, "n_reports": self.n_reports}


def neighbor_summary(model: DetectorModel, reports: Sequence[KpiReport | LabeledReport]) -> NeighborSummary:
    verdicts = filter_neighbors_batch(model, reports)
    if not verdicts:
        raise ValueError("no reports to summarise")
    flagged = np.array([v.n_flagged for v in verdicts], dtype=np.float64)
    by_ue: dict[str, list[float]] = defaultdict(list)
    for v, f in zip(verdicts, flagged):
        by_ue[v.ue_id].append(f / N_NEIGHBORS)
    return NeighborSummary(
        fraction=float(flagged.sum() / (N_NEIGHBORS * len(verdicts))),
        per_ue={ue: float(np.mean(v)) for ue, v in sorted(by_ue.items())},
        mean_viable=float(N_NEIGHBORS - flagged.mean()),
        n_reports=len(verdicts),
    )


def neighbor_anomaly_fraction(model: DetectorModel, reports: Sequence[KpiReport | LabeledReport]) -> float:
    """Share of (report, neighbor) pairs flagged anomalous."""
    return neighbor_summary(model, reports).fraction


# ------------------------------------------------------------ ECDF export

def ecdf(values) -> tuple[np.ndarray, np.ndarray]:
    """Sorted values and the cumulative fraction at each."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    return v, np.arange(1, v.size + 1) / max(v.size, 1)


_METRIC_INDEX = {"rsrp": 0, "rssinr": 1, "rsrq": 2}


def radio_groups(labeled: Iterable[LabeledReport], metric: str = "rssinr") -> dict[str, np.ndarray]:
    """``metric`` values of serving cells (split by label) and of all neighbors."""
    k = _METRIC_INDEX[metric]
    groups: dict[str, list[float]] = {"serving_normal": [], "serving_anomalous": [], "neighbor": []}
    for item in labeled:
        r = item.report
        groups["serving_anomalous" if item.label else "serving_normal"].append(r.serving_radio.as_tuple()[k])
        groups["neighbor"].extend(t.as_tuple()[k] for _, t in r.neighbors)
    return {g: np.array(v) for g, v in groups.items()}


def write_ecdf_csv(groups: dict[str, np.ndarray], out: str | Path | IO[str]):
    """Rows of (group, value, cumulative_fraction) for external plotting."""
    fh = open(out, "w", newline="") if isinstance(out, (str, Path)) else out
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "value", "cumulative_fraction"])
        for name, vals in groups.items():
            xs, fs = ecdf(vals)
            for x, f in zip(xs, fs):
                w.writerow([name, repr(float(x)), repr(float(f))])
    finally:
        if fh is not out:
            fh.close()


# ------------------------------------------------------------ streaming output

class AlertDebouncer:
    """Pass an alert on only once a UE has ``k`` alerts within ``window_ms``.

    With the defaults (``k=1``, ``window_ms=0``) every alert passes. Per-UE
    state is not locked; callers serialise access per UE.
    """

    def __init__(self, k: int = 1, window_ms: int = 0):
        if k < 1 or window_ms < 0:
            raise ValueError("need k >= 1 and window_ms >= 0")
        self.k = k
        self.window_ms = window_ms
        self._recent: dict[str, deque] = defaultdict(deque)

    def __call__(self, alert: AnomalyAlert) -> bool:
        if self.k == 1:
            return True
        q = self._recent[alert.ue_id]
        q.append(alert.timestamp)
        while q and alert.timestamp - q[0] > self.window_ms:
            q.popleft()
        return len(q) >= self.k

    def filter(self, alerts: Iterable[AnomalyAlert]) -> list[AnomalyAlert]:
        return [a for a in alerts if self(a)]


def write_jsonl(items: Iterable, out: IO[str]) -> int:
    """One JSON object per line; returns the number written."""
    n = 0
    for item in items:
        out.write(json.dumps(item.to_dict() if hasattr(item, "to_dict") else item, sort_keys=True))
        out.write("\n")
        n += 1
    return n
