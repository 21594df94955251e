"""Loading, labelling and splitting of per-UE KPI report CSVs."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .kpi import CellId, KpiError, RadioTriplet

logger = logging.getLogger(__name__)

N_NEIGHBORS = 5

#: Default share of target throughput below which a report is anomalous.
DEFAULT_THROUGHPUT_RATIO = 0.70


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class KpiReport:
    timestamp: int  # ms since epoch
    ue_id: str
    du_id: str
    serving_cell: CellId
    prb_used_dl: float
    serving_radio: RadioTriplet
    neighbors: tuple[tuple[CellId, RadioTriplet], ...]
    throughput_dl: float  # observed, Mbps
    target_throughput: float  # Mbps
    source_label: int | None = None
    extras: tuple[tuple[str, str], ...] = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.neighbors) != N_NEIGHBORS:
            raise DatasetError(f"expected {N_NEIGHBORS} neighbors, got {len(self.neighbors)}")
        if self.throughput_dl < 0 or self.target_throughput < 0:
            raise DatasetError("throughput fields must be >= 0")
        if self.prb_used_dl < 0:
            raise DatasetError("prb_used_dl must be >= 0")


@dataclass(frozen=True)
class LabeledReport:
    report: KpiReport
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DatasetError(f"label must be 0 or 1, got {self.label!r}")


def _default_columns() -> dict[str, str]:
    cols = {
        "timestamp": "measTimeStampRf",
        "ue_id": "ue-id",
        "du_id": "du-id",
        "serving_cell": "nrCellIdentity",
        "prb_used_dl": "RRU.PrbUsedDl",
        "serving_rsrp": "RF.serving.RSRP",
        "serving_rssinr": "RF.serving.RSSINR",
        "serving_rsrq": "RF.serving.RSRQ",
        "throughput_dl": "DRB.UEThpDl",
        "target_throughput": "targetTput",
    }
    for i in range(N_NEIGHBORS):
        cols[f"nb{i}_cell"] = f"nbCellIdentity_{i}"
        cols[f"nb{i}_rsrp"] = f"rsrp_nb{i}"
        cols[f"nb{i}_rssinr"] = f"rssinr_nb{i}"
        cols[f"nb{i}_rsrq"] = f"rsrq_nb{i}"
    return cols


REQUIRED_FIELDS = tuple(_default_columns())


@dataclass(frozen=True)
class ColumnMapping:
    """Logical KPI field name -> CSV header.

    ``label`` optionally names a column holding a ready-made anomaly flag; any
    value > 0 in it counts as anomalous.
    """

    columns: dict[str, str] = field(default_factory=_default_columns)
    label: str | None = "Viavi.UE.anomalies"

    def __post_init__(self):
        missing = [f for f in REQUIRED_FIELDS if f not in self.columns]
        if missing:
            raise DatasetError(f"column mapping missing fields: {missing}")
        targets = list(self.columns.values()) + ([self.label] if self.label else [])
        dupes = sorted({t for t in targets if targets.count(t) > 1})
        if dupes:
            raise DatasetError(f"column mapping has duplicate targets: {dupes}")

    @classmethod
    def from_dict(cls, data: dict) -> "ColumnMapping":
        cols = _default_columns()
        cols.update(data.get("columns", {}))
        return cls(columns=cols, label=data.get("label", "Viavi.UE.anomalies"))

    @classmethod
    def from_json(cls, path: str | Path) -> "ColumnMapping":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {"columns": dict(self.columns), "label": self.label}


DEFAULT_MAPPING = ColumnMapping()


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.3
    seed: int = 42
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise DatasetError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if self.seed < 0:
            raise DatasetError("seed must be unsigned")


@dataclass
class LoadStats:
    rows: int = 0
    loaded: int = 0
    dropped: int = 0
    drop_reasons: dict[str, int] = field(default_factory=dict)


class _MissingValue(Exception):
    pass


def _parse_float(raw: str | None, column: str, line: int) -> float:
    if raw is None or raw.strip() == "":
        raise _MissingValue(column)
    try:
        value = float(raw)
    except ValueError:
        raise DatasetError(f"line {line}: non-numeric value {raw!r} in column {column!r}") from None
    if math.isnan(value):
        raise _MissingValue(column)
    if math.isinf(value):
        raise DatasetError(f"line {line}: infinite value in column {column!r}")
    return value


def _parse_text(raw: str | None, column: str) -> str:
    if raw is None or raw.strip() == "":
        raise _MissingValue(column)
    return raw.strip()


def parse_timestamp(raw: str) -> int:
    """Milliseconds since epoch from either a number or an ISO-8601 string."""
    raw = raw.strip()
    try:
        return int(round(float(raw)))
    except ValueError:
        pass
    dt = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(round(dt.timestamp() * 1000))


def _parse_row(row: dict, mapping: ColumnMapping, line: int, extra_cols: Sequence[str]) -> KpiReport:
    c = mapping.columns

    def num(name):
        return _parse_float(row.get(c[name]), c[name], line)

    def txt(name):
        return _parse_text(row.get(c[name]), c[name])

    def triplet(prefix):
        return RadioTriplet(num(f"{prefix}_rsrp"), num(f"{prefix}_rssinr"), num(f"{prefix}_rsrq"))

    ts_raw = _parse_text(row.get(c["timestamp"]), c["timestamp"])
    try:
        ts = parse_timestamp(ts_raw)
    except ValueError:
        raise DatasetError(f"line {line}: unparseable timestamp {ts_raw!r}") from None
    neighbors = tuple((CellId(txt(f"nb{i}_cell")), triplet(f"nb{i}")) for i in range(N_NEIGHBORS))
    source_label = None
    raw_label = row.get(mapping.label) if mapping.label is not None else None
    if raw_label is not None and raw_label.strip():
        source_label = int(_parse_float(raw_label, mapping.label, line) > 0)
    try:
        return KpiReport(
            timestamp=ts,
            ue_id=txt("ue_id"),
            du_id=txt("du_id"),
            serving_cell=CellId(txt("serving_cell")),
            prb_used_dl=num("prb_used_dl"),
            serving_radio=triplet("serving"),
            neighbors=neighbors,
            throughput_dl=num("throughput_dl"),
            target_throughput=num("target_throughput"),
            source_label=source_label,
            extras=tuple((k, row.get(k) or "") for k in extra_cols),
        )
    except KpiError as exc:
        raise DatasetError(f"line {line}: {exc}") from None


def load_dataset(path: str | Path, mapping: ColumnMapping = DEFAULT_MAPPING,
                 stats: LoadStats | None = None) -> list[KpiReport]:
    """Read a KPI CSV into reports, in file order.

    Rows with an empty or NaN mandatory cell are dropped, never interpolated;
    pass a :class:`LoadStats` to collect the drop counts.
    """
    path = Path(path)
    stats = stats if stats is not None else LoadStats()
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    reports: list[KpiReport] = []
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise DatasetError(f"{path}: missing header row")
        absent = [col for col in mapping.columns.values() if col not in header]
        if absent:
            raise DatasetError(f"{path}: header missing mapped columns {absent}")
        mapped = set(mapping.columns.values()) | {mapping.label}
        extra_cols = [h for h in header if h not in mapped]
        for line, row in enumerate(reader, start=2):
            stats.rows += 1
            try:
                reports.append(_parse_row(row, mapping, line, extra_cols))
            except _MissingValue as missing:
                stats.dropped += 1
                col = str(missing)
                stats.drop_reasons[col] = stats.drop_reasons.get(col, 0) + 1
    stats.loaded = len(reports)
    if stats.dropped:
        logger.warning("%s: dropped %d of %d rows with missing values", path, stats.dropped, stats.rows)
    return reports


def _fmt(value: float) -> str:
    return repr(float(value))


def save_dataset(reports: Iterable[KpiReport | LabeledReport], path: str | Path,
                 mapping: ColumnMapping = DEFAULT_MAPPING, label_column: str = "label") -> None:
    """Write reports back to CSV; labeled reports get ``label_column`` appended.

    Floats are written with ``repr`` so a reload reproduces them exactly.
    """
    items = list(reports)
    labeled = bool(items) and isinstance(items[0], LabeledReport)
    c = mapping.columns
    header = list(c.values())
    if mapping.label is not None and any(_unwrap(r).source_label is not None for r in items):
        header.append(mapping.label)
    extra_cols = [k for k, _ in _unwrap(items[0]).extras] if items else []
    header += extra_cols
    if labeled:
        header.append(label_column)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for item in items:
            r = _unwrap(item)
            row = {
                c["timestamp"]: str(r.timestamp),
                c["ue_id"]: r.ue_id,
                c["du_id"]: r.du_id,
                c["serving_cell"]: r.serving_cell.value,
                c["prb_used_dl"]: _fmt(r.prb_used_dl),
                c["serving_rsrp"]: _fmt(r.serving_radio.rsrp),
                c["serving_rssinr"]: _fmt(r.serving_radio.rssinr),
                c["serving_rsrq"]: _fmt(r.serving_radio.rsrq),
                c["throughput_dl"]: _fmt(r.throughput_dl),
                c["target_throughput"]: _fmt(r.target_throughput),
            }
            for i, (cell, radio) in enumerate(r.neighbors):
                row[c[f"nb{i}_cell"]] = cell.value
                row[c[f"nb{i}_rsrp"]] = _fmt(radio.rsrp)
                row[c[f"nb{i}_rssinr"]] = _fmt(radio.rssinr)
                row[c[f"nb{i}_rsrq"]] = _fmt(radio.rsrq)
            if mapping.label in header:
                row[mapping.label] = "" if r.source_label is None else str(r.source_label)
            row.update(dict(r.extras))
            if labeled:
                row[label_column] = str(item.label)
            writer.writerow([row.get(h, "") for h in header])


def _unwrap(item: KpiReport | LabeledReport) -> KpiReport:
    return item.report if isinstance(item, LabeledReport) else item


def label_reports(reports: Iterable[KpiReport], ratio: float = DEFAULT_THROUGHPUT_RATIO,
                  use_source_label: bool = False) -> list[LabeledReport]:
    """Label a report anomalous when observed throughput < ratio * target.

    With ``use_source_label`` the CSV's own anomaly column is taken verbatim
    instead; reports without one raise.
    """
    if not 0.0 < ratio <= 1.0:
        raise DatasetError(f"ratio must be in (0, 1], got {ratio}")
    out = []
    for r in reports:
        if use_source_label:
            if r.source_label is None:
                raise DatasetError(f"report {r.ue_id}@{r.timestamp} has no source label")
            label = r.source_label
        else:
            label = int(r.throughput_dl < ratio * r.target_throughput)
        out.append(LabeledReport(r, label))
    return out


def split(labeled: Sequence[LabeledReport], spec: SplitSpec = SplitSpec()
          ) -> tuple[list[LabeledReport], list[LabeledReport]]:
    """Seeded train/test partition; both parts keep the input order."""
    n = len(labeled)
    if n == 0:
        raise DatasetError("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    is_test = np.zeros(n, dtype=bool)
    if spec.stratified:
        labels = np.array([lr.label for lr in labeled])
        for cls in (0, 1):
            idx = np.flatnonzero(labels == cls)
            k = int(round(spec.test_fraction * len(idx)))
            is_test[rng.permutation(idx)[:k]] = True
    else:
        k = int(round(spec.test_fraction * n))
        is_test[rng.permutation(n)[:k]] = True
    train = [lr for lr, t in zip(labeled, is_test) if not t]
    test = [lr for lr, t in zip(labeled, is_test) if t]
    if not train or not test:
        raise DatasetError(f"degenerate split: {len(train)} train / {len(test)} test")
    return train, test


def anomaly_rate(labeled: Sequence[LabeledReport]) -> float:
    if not labeled:
        return 0.0
    return sum(lr.label for lr in labeled) / len(labeled)
