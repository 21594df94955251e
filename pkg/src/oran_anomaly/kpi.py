"""KPI vocabulary and the radio formulas shared by every other module."""
from __future__ import annotations

import math
from dataclasses import dataclass

#: Deployed PRB count for 100 MHz / 30 kHz numerology after guard bands.
DEPLOYED_PRB_MAX = 273

#: PRB utilisation above which a report counts as PRB contention.
PRB_CONTENTION_CUTOFF = 0.70


class KpiError(ValueError):
    """Raised for physically meaningless KPI inputs."""


@dataclass(frozen=True)
class CellId:
    value: str

    def __post_init__(self):
        if not isinstance(self.value, str) or not self.value:
            raise KpiError("CellId must be a non-empty string")

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class RadioTriplet:
    """Radio coverage measurements of one cell as seen by a UE.

    ``rsrp`` in dBm, ``rssinr`` and ``rsrq`` in dB.
    """

    rsrp: float
    rssinr: float
    rsrq: float

    def validate(self) -> "RadioTriplet":
        for name in ("rsrp", "rssinr", "rsrq"):
            if not math.isfinite(getattr(self, name)):
                raise KpiError(f"{name} is not finite: {getattr(self, name)!r}")
        return self

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.rsrp, self.rssinr, self.rsrq)


@dataclass(frozen=True)
class PrbConfig:
    total_bandwidth: float = 100e6
    subcarrier_spacing: float = 30e3
    subcarriers_per_prb: int = 12
    deployed_prb_max: int = DEPLOYED_PRB_MAX

    def __post_init__(self):
        for name in ("total_bandwidth", "subcarrier_spacing",
                     "subcarriers_per_prb", "deployed_prb_max"):
            value = getattr(self, name)
            if not value > 0:
                raise KpiError(f"{name} must be positive, got {value!r}")


def prb_capacity(cfg: PrbConfig) -> int:
    """Raw PRB count implied by bandwidth and numerology.

    This is the textbook ratio, which ignores guard bands: 100 MHz at 30 kHz
    spacing gives 277 while the deployed carrier only schedules
    ``cfg.deployed_prb_max`` (273) blocks.
    """
    return math.floor(cfg.total_bandwidth / (cfg.subcarrier_spacing * cfg.subcarriers_per_prb))


def prb_utilization(prb_used: float, cfg: PrbConfig | None = None) -> float:
    """Fraction of deployed downlink PRBs in use."""
    if prb_used < 0:
        raise KpiError(f"prb_used must be >= 0, got {prb_used!r}")
    cfg = cfg or PrbConfig()
    return prb_used / cfg.deployed_prb_max


def rsrq_linear(n_rb: int, rsrp_linear: float, rssi_linear: float) -> float:
    """RSRQ in the linear domain, ``N * RSRP / RSSI``."""
    if n_rb < 1:
        raise KpiError(f"n_rb must be >= 1, got {n_rb!r}")
    if not rssi_linear > 0:
        raise KpiError(f"rssi_linear must be positive, got {rssi_linear!r}")
    return n_rb * rsrp_linear / rssi_linear


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(value: float) -> float:
    if not value > 0:
        raise KpiError(f"cannot take dB of {value!r}")
    return 10.0 * math.log10(value)
