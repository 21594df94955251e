"""Latency benchmarking, dataset replay and model persistence."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import queue
import threading
import time
from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .dataset import KpiReport, LabeledReport
from .detectors import MODEL_KINDS, DetectorModel
from .features import FeatureMatrix

log = logging.getLogger(__name__)

MODEL_FORMAT = "oran-anomaly-model"
MODEL_FORMAT_VERSION = 1


# ------------------------------------------------------------ latency

def nearest_rank(sorted_samples: np.ndarray, p: float) -> float:
    """Nearest-rank percentile of an ascending sample."""
    n = sorted_samples.shape[0]
    rank = max(1, math.ceil(p / 100.0 * n))
    return float(sorted_samples[rank - 1])


@dataclass
class LatencyStats:
    """Per-call wall time in microseconds."""

    model: str
    batch_size: int
    iterations: int
    mean: float
    p50: float
    p95: float
    p99: float
    max: float
    samples: np.ndarray = field(repr=False)
    output: Any = field(default=None, repr=False, compare=False)

    @classmethod
    def from_samples(cls, model: str, batch_size: int, samples_us, output=None) -> "LatencyStats":
        s = np.sort(np.asarray(samples_us, dtype=np.float64))
        if s.size == 0:
            raise ValueError("no latency samples")
        return cls(model, batch_size, int(s.size), float(s.mean()), nearest_rank(s, 50),
                   nearest_rank(s, 95), nearest_rank(s, 99), float(s[-1]),
                   np.asarray(samples_us, dtype=np.float64), output)

    @property
    def mean_ms(self) -> float:
        return self.mean / 1000.0

    def to_dict(self, verbose: bool = False) -> dict:
        d = {"model": self.model, "batch_size": self.batch_size, "iterations": self.iterations,
             "mean_us": self.mean, "p50_us": self.p50, "p95_us": self.p95, "p99_us": self.p99,
             "max_us": self.max}
        if verbose:
            d["samples_us"] = self.samples.tolist()
        return d


def bench_callable(fn: Callable[[Any], Any], batch, iterations: int = 1000, warmup: int = 100,
                   label: str = "", batch_size: int | None = None) -> LatencyStats:
    """Time ``fn(batch)`` with a monotonic clock, single threaded."""
    if iterations < 30:
        raise ValueError(f"need at least 30 timed iterations, got {iterations}")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    out = None
    for _ in range(warmup):
        out = fn(batch)
    samples = np.empty(iterations)
    clock = time.perf_counter_ns
    for i in range(iterations):
        t0 = clock()
        out = fn(batch)
        samples[i] = (clock() - t0) / 1000.0
    n = batch_size if batch_size is not None else len(batch)
    return LatencyStats.from_samples(label, n, samples, out)


def bench_inference(model: DetectorModel, batch, iterations: int = 1000, warmup: int = 100) -> LatencyStats:
    """Latency of ``model.predict`` on a prepared feature batch.

    Feature extraction is outside the timed region; ``output`` holds the
    labels of the last call.
    """
    X = batch if isinstance(batch, FeatureMatrix) else np.ascontiguousarray(batch, dtype=np.float64)
    return bench_callable(model.predict, X, iterations, warmup, label=model.kind)


# ------------------------------------------------------------ replay

@dataclass
class ReplayConfig:
    """``speed`` is wall-clock speedup over report time; ``inf`` disables pacing."""

    speed: float = math.inf
    grouping: str = "per-timestamp"
    batch_size: int = 20
    queue_size: int = 8

    def __post_init__(self):
        if not self.speed > 0:
            raise ValueError("speed multiplier must be > 0")
        if self.grouping not in ("per-timestamp", "fixed-size"):
            raise ValueError(f"unknown grouping {self.grouping!r}")
        if self.batch_size < 1 or self.queue_size < 1:
            raise ValueError("batch_size and queue_size must be >= 1")


@dataclass
class ReplaySummary:
    n_batches: int = 0
    n_reports: int = 0
    n_alerts: int = 0
    batch_latency_us: list[float] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)
    results: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        lat = np.asarray(self.batch_latency_us)
        d = {"n_batches": self.n_batches, "n_reports": self.n_reports, "n_alerts": self.n_alerts,
             "errors": self.errors}
        if lat.size:
            s = np.sort(lat)
            d["batch_latency_us"] = {"mean": float(lat.mean()), "p50": nearest_rank(s, 50),
                                     "p99": nearest_rank(s, 99), "max": float(s[-1])}
        return d


def _timestamp(item) -> int:
    return (item.report if isinstance(item, LabeledReport) else item).timestamp


def make_batches(reports: Sequence[KpiReport | LabeledReport], cfg: ReplayConfig) -> list[list]:
    """Timestamp-ordered batches (stable sort, so ties keep input order)."""
    ordered = sorted(reports, key=_timestamp)
    if cfg.grouping == "per-timestamp":
        return [list(g) for _, g in groupby(ordered, key=_timestamp)]
    return [ordered[i:i + cfg.batch_size] for i in range(0, len(ordered), cfg.batch_size)]


_DONE = object()


def replay(reports: Sequence[KpiReport | LabeledReport], cfg: ReplayConfig,
           hook: Callable[[list], Iterable], sink: Callable[[list], None] | None = None,
           keep_results: bool = True) -> ReplaySummary:
    """Stream ``reports`` through ``hook`` batch by batch.

    A producer thread paces batches by report time and hands them through a
    bounded queue, so a slow hook applies backpressure. The hook returns the
    alerts of its batch; they are passed to ``sink`` and, if
    ``keep_results``, collected in order. Hook or sink failures are recorded
    per batch and the replay moves on. The queue is drained before return.
    """
    batches = make_batches(reports, cfg)
    q: queue.Queue = queue.Queue(maxsize=cfg.queue_size)

    def produce():
        try:
            t_wall = time.monotonic()
            t_first = _timestamp(batches[0][0]) if batches else 0
            for b in batches:
                if math.isfinite(cfg.speed):
                    due = t_wall + (_timestamp(b[0]) - t_first) / 1000.0 / cfg.speed
                    delay = due - time.monotonic()
                    if delay > 0:
                        time.sleep(delay)
                q.put(b)
        finally:
            q.put(_DONE)

    producer = threading.Thread(target=produce, name="replay-pacer", daemon=True)
    producer.start()
    summary = ReplaySummary()
    index = 0
    while True:
        b = q.get()
        if b is _DONE:
            break
        t0 = time.perf_counter_ns()
        try:
            out = list(hook(b))
        except Exception as exc:  # noqa: BLE001 - surface and continue
            summary.errors.append({"batch": index, "stage": "hook", "error": f"{type(exc).__name__}: {exc}"})
            out = []
        summary.batch_latency_us.append((time.perf_counter_ns() - t0) / 1000.0)
        if sink is not None:
            try:
                sink(out)
            except Exception as exc:  # noqa: BLE001
                summary.errors.append({"batch": index, "stage": "sink", "error": f"{type(exc).__name__}: {exc}"})
        summary.n_batches += 1
        summary.n_reports += len(b)
        summary.n_alerts += len(out)
        if keep_results:
            summary.results.extend(out)
        index += 1
    producer.join()
    return summary


# ------------------------------------------------------------ persistence

class ModelFormatError(ValueError):
    """Model file unreadable, corrupted, from another format version, or of the wrong kind."""


def _canonical(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def model_to_document(model: DetectorModel) -> dict:
    payload = model.to_dict()
    digest = hashlib.sha256(_canonical(payload).encode()).hexdigest()
    return {"format": MODEL_FORMAT, "version": MODEL_FORMAT_VERSION, "kind": model.kind,
            "checksum": f"sha256:{digest}", "payload": payload}


def model_from_document(doc: dict, kind: str | None = None) -> DetectorModel:
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not a model file")
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"model format version {doc.get('version')!r}, expected {MODEL_FORMAT_VERSION}")
    got = doc.get("kind")
    if got not in MODEL_KINDS:
        raise ModelFormatError(f"unknown model kind {got!r}")
    if kind is not None and got != kind:
        raise ModelFormatError(f"file holds a {got} model, expected {kind}")
    payload = doc.get("payload")
    digest = hashlib.sha256(_canonical(payload).encode()).hexdigest()
    if doc.get("checksum") != f"sha256:{digest}":
        raise ModelFormatError("checksum mismatch: payload corrupted")
    try:
        return MODEL_KINDS[got].from_dict(payload)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed {got} payload: {exc}") from exc


def save_model(model: DetectorModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_document(model), sort_keys=True))


def load_model(path: str | Path, kind: str | None = None) -> DetectorModel:
    """Load a model file; ``kind`` guards against loading the wrong detector."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON (truncated?): {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ModelFormatError(f"{path}: not a text file") from exc
    return model_from_document(doc, kind)
