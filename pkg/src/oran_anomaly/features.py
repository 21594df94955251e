"""Fixed-order feature extraction and standardisation."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .dataset import N_NEIGHBORS, KpiReport

STD_FLOOR = 1e-8


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSchema:
    id: str
    names: tuple[str, ...]
    version: int = 1

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise SchemaError(f"schema {self.id}: duplicate feature names")

    @property
    def width(self) -> int:
        return len(self.names)

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "version": self.version, "names": list(self.names)})


_RADIO = ("rsrp", "rssinr", "rsrq")

SERVING_PLUS_NEIGHBORS = FeatureSchema(
    "serving_plus_neighbors",
    ("prb_used_dl",) + tuple(f"serving_{k}" for k in _RADIO)
    + tuple(f"nb{i}_{k}" for i in range(N_NEIGHBORS) for k in _RADIO),
)
NEIGHBORS_ONLY = FeatureSchema("neighbors_only", SERVING_PLUS_NEIGHBORS.names[4:])
PER_NEIGHBOR = FeatureSchema("per_neighbor", _RADIO)

SCHEMAS = {s.id: s for s in (SERVING_PLUS_NEIGHBORS, NEIGHBORS_ONLY, PER_NEIGHBOR)}


def generic_schema(width: int) -> FeatureSchema:
    """Anonymous schema ``raw_<width>`` with names ``x0 .. x<width-1>``."""
    if width < 1:
        raise SchemaError("schema width must be >= 1")
    return FeatureSchema(f"raw_{width}", tuple(f"x{j}" for j in range(width)))


def get_schema(schema_id: str) -> FeatureSchema:
    if schema_id in SCHEMAS:
        return SCHEMAS[schema_id]
    m = re.fullmatch(r"raw_(\d+)", schema_id)
    if m:
        return generic_schema(int(m.group(1)))
    raise SchemaError(f"unknown schema {schema_id!r}")


def infer_schema(x, schema: FeatureSchema | str | None = None) -> FeatureSchema:
    """Schema for training data: explicit, carried by ``x``, or by width.

    Untagged 19-wide arrays are taken as serving-plus-neighbor features; any
    other width gets a generic schema.
    """
    if isinstance(schema, str):
        return get_schema(schema)
    if schema is not None:
        return schema
    tagged = getattr(x, "schema", None)
    if tagged is not None:
        return tagged
    if isinstance(x, FeatureVector):
        return get_schema(x.schema_id)
    if isinstance(x, (list, tuple)) and x and isinstance(x[0], FeatureVector):
        return get_schema(x[0].schema_id)
    arr = np.asarray(x, dtype=np.float64)
    width = arr.shape[-1] if arr.ndim else 0
    return SERVING_PLUS_NEIGHBORS if width == SERVING_PLUS_NEIGHBORS.width else generic_schema(width)


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[float, ...]
    schema_id: str

    def __post_init__(self):
        schema = get_schema(self.schema_id)
        if len(self.values) != schema.width:
            raise SchemaError(f"{self.schema_id} expects {schema.width} values, got {len(self.values)}")
        if not all(math.isfinite(v) for v in self.values):
            raise SchemaError("feature vector has non-finite values")

    def __len__(self):
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


class FeatureMatrix:
    """A read-only ``(n, d)`` float64 block tagged with its schema."""

    __slots__ = ("values", "schema")

    def __init__(self, values, schema: FeatureSchema):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, schema.width)
        if arr.ndim != 2 or arr.shape[1] != schema.width:
            raise SchemaError(f"{schema.id} expects width {schema.width}, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise SchemaError("feature matrix has non-finite values")
        arr.flags.writeable = False
        self.values = arr
        self.schema = schema

    def __len__(self):
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        if copy:
            return np.array(self.values, dtype=dtype)
        return self.values if dtype is None else self.values.astype(dtype, copy=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __getitem__(self, idx) -> "FeatureMatrix":
        rows = self.values[idx]
        return FeatureMatrix(rows.reshape(-1, self.schema.width), self.schema)

    def row(self, i: int) -> FeatureVector:
        return FeatureVector(tuple(self.values[i].tolist()), self.schema.id)

    @classmethod
    def from_vectors(cls, vectors: Sequence[FeatureVector]) -> "FeatureMatrix":
        if not vectors:
            raise SchemaError("need at least one vector to infer the schema")
        ids = {v.schema_id for v in vectors}
        if len(ids) != 1:
            raise SchemaError(f"mixed schemas: {sorted(ids)}")
        schema = get_schema(ids.pop())
        return cls([v.values for v in vectors], schema)


FeatureInput = Union[FeatureMatrix, FeatureVector, Sequence[FeatureVector], np.ndarray]


def as_matrix(x: FeatureInput, schema: FeatureSchema) -> np.ndarray:
    """Check ``x`` against ``schema`` and return a 2-D float64 array.

    Schema-tagged inputs must carry exactly ``schema``; untagged arrays only
    need the right width.
    """
    if isinstance(x, FeatureMatrix):
        if x.schema.id != schema.id:
            raise SchemaError(f"model expects {schema.id!r} features, got {x.schema.id!r}")
        return x.values
    if isinstance(x, FeatureVector):
        if x.schema_id != schema.id:
            raise SchemaError(f"model expects {schema.id!r} features, got {x.schema_id!r}")
        return x.as_array().reshape(1, -1)
    if isinstance(x, (list, tuple)) and x and isinstance(x[0], FeatureVector):
        return as_matrix(FeatureMatrix.from_vectors(x), schema)
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != schema.width:
        raise SchemaError(f"model expects {schema.width} features ({schema.id}), got shape {arr.shape}")
    return arr


def _serving_row(r: KpiReport) -> list[float]:
    row = [r.prb_used_dl, *r.serving_radio.as_tuple()]
    for _, radio in r.neighbors:
        row.extend(radio.as_tuple())
    return row


def extract_serving_plus_neighbors(report: KpiReport) -> FeatureVector:
    return FeatureVector(tuple(float(v) for v in _serving_row(report)), SERVING_PLUS_NEIGHBORS.id)


def extract_neighbors_only(report: KpiReport) -> FeatureVector:
    return FeatureVector(tuple(float(v) for v in _serving_row(report)[4:]), NEIGHBORS_ONLY.id)


def per_neighbor(vector: FeatureVector, i: int) -> FeatureVector:
    """Radio triplet of neighbor ``i`` out of a 15-wide neighbor vector."""
    if vector.schema_id != NEIGHBORS_ONLY.id:
        raise SchemaError(f"per_neighbor needs {NEIGHBORS_ONLY.id!r}, got {vector.schema_id!r}")
    if not 0 <= i < N_NEIGHBORS:
        raise IndexError(i)
    return FeatureVector(vector.values[3 * i:3 * i + 3], PER_NEIGHBOR.id)


def extract_matrix(reports: Iterable[KpiReport], schema: FeatureSchema = SERVING_PLUS_NEIGHBORS) -> FeatureMatrix:
    rows = [_serving_row(r) for r in reports]
    if schema is SERVING_PLUS_NEIGHBORS:
        return FeatureMatrix(rows, schema)
    if schema is NEIGHBORS_ONLY:
        return FeatureMatrix([row[4:] for row in rows], schema)
    if schema is PER_NEIGHBOR:
        # one row per (report, neighbor), neighbor-major within a report
        return FeatureMatrix([row[4 + 3 * i:7 + 3 * i] for row in rows for i in range(N_NEIGHBORS)], schema)
    raise SchemaError(f"unknown schema {schema.id!r}")


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray
    schema_id: str

    @classmethod
    def fit(cls, train: FeatureInput, schema: FeatureSchema | None = None) -> "Scaler":
        if schema is None:
            if isinstance(train, FeatureMatrix):
                schema = train.schema
            elif isinstance(train, (list, tuple)) and train and isinstance(train[0], FeatureVector):
                schema = get_schema(train[0].schema_id)
            else:
                raise SchemaError("untagged training data needs an explicit schema")
        X = as_matrix(train, schema)
        if len(X) == 0:
            raise SchemaError("cannot fit a scaler on no data")
        mean = X.mean(axis=0)
        # constant columns: centre on the value itself so they scale to exactly 0
        const = X.max(axis=0) == X.min(axis=0)
        mean[const] = X[0, const]
        return cls(mean, np.maximum(X.std(axis=0), STD_FLOOR), schema.id)

    def transform(self, x: FeatureInput) -> np.ndarray:
        return (as_matrix(x, get_schema(self.schema_id)) - self.mean) / self.std

    def apply(self, v: FeatureVector) -> FeatureVector:
        return FeatureVector(tuple(self.transform(v)[0].tolist()), self.schema_id)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "schema_id": self.schema_id}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64), d["schema_id"])


def fit_scaler(train: FeatureInput, schema: FeatureSchema | None = None) -> Scaler:
    return Scaler.fit(train, schema)
