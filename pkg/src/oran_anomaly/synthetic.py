"""Synthetic per-UE KPI reports with the same columns as the public dataset.

Used for demos, latency benchmarks and end-to-end tests when the real CSV is
not at hand. The generator is a toy radio model, not a simulator: UEs random
walk over a hexagonal seven-cell layout, cells go through load bursts, and
throughput collapses under PRB contention or poor SINR. Numbers measured on
it say nothing about the real dataset.
"""
from __future__ import annotations

import math

import numpy as np

from .dataset import N_NEIGHBORS, KpiReport
from .kpi import DEPLOYED_PRB_MAX, CellId, RadioTriplet, linear_to_db, rsrq_linear

_TX_DBM = 43.0
_NOISE_DBM = -120.0  # per resource element
_PRB_HZ = 12 * 30e3


def _cell_sites(spacing: float) -> np.ndarray:
    sites = [(0.0, 0.0)]
    for k in range(6):
        ang = math.pi / 3 * k
        sites.append((spacing * math.cos(ang), spacing * math.sin(ang)))
    return np.array(sites)


def generate_reports(n_ues: int = 20, n_reports: int = 10_000, seed: int = 0,
                     tick_ms: int = 100, start_ms: int = 1_600_000_000_000,
                     burst_prob: float = 0.0015, burst_load: float = 0.7) -> list[KpiReport]:
    """One report per UE per tick until ``n_reports`` rows exist.

    ``burst_prob`` is the per-tick chance a cell enters a congestion episode
    and ``burst_load`` the extra load it carries during one.
    """
    rng = np.random.default_rng(seed)
    sites = _cell_sites(500.0)
    n_cells = len(sites)
    cells = [CellId(f"{1000 + c}") for c in range(n_cells)]
    pos = rng.uniform(-600, 600, size=(n_ues, 2))
    heading = rng.uniform(0, 2 * math.pi, size=n_ues)
    speed = rng.choice([0.5, 1.5, 8.0, 15.0], size=n_ues)  # m/s: walking .. driving
    target = rng.choice([10.0, 20.0, 40.0, 60.0], size=n_ues)
    load = rng.uniform(0.15, 0.35, size=n_cells)
    burst = np.zeros(n_cells)
    shadow = rng.normal(0, 4, size=(n_ues, n_cells))
    serving = np.full(n_ues, -1)
    dt = tick_ms / 1000.0

    reports: list[KpiReport] = []
    tick = 0
    while len(reports) < n_reports:
        # mobility with reflecting borders
        heading += rng.normal(0, 0.3, size=n_ues)
        pos += (speed * dt * 10)[:, None] * np.c_[np.cos(heading), np.sin(heading)]
        out = np.abs(pos) > 900
        pos = np.clip(pos, -900, 900)
        heading[out.any(axis=1)] += math.pi
        shadow = 0.95 * shadow + math.sqrt(1 - 0.95 ** 2) * rng.normal(0, 4, size=shadow.shape)

        # load bursts: Ornstein-Uhlenbeck baseline plus occasional congestion episodes
        burst = np.where(burst > 0, burst - 1, 0)
        start = (burst == 0) & (rng.random(n_cells) < burst_prob)
        burst[start] = rng.integers(20, 80, size=start.sum())
        load = np.clip(load + 0.1 * (0.25 - load) + rng.normal(0, 0.03, n_cells), 0.05, 0.95)
        eff_load = np.clip(np.where(burst > 0, load + burst_load, load), 0.0, 1.0)

        d = np.maximum(np.linalg.norm(pos[:, None, :] - sites[None, :, :], axis=2), 10.0)
        pathloss = 128.1 + 37.6 * np.log10(d / 1000.0)
        rsrp = _TX_DBM - 10 * math.log10(DEPLOYED_PRB_MAX * 12) - pathloss + shadow  # dBm per RE
        best = np.argmax(rsrp, axis=1)
        # 3 dB handover hysteresis
        keep = (serving >= 0) & (rsrp[np.arange(n_ues), np.maximum(serving, 0)] > rsrp[np.arange(n_ues), best] - 3)
        serving = np.where(keep, serving, best)

        p_lin = 10 ** (rsrp / 10)
        noise = 10 ** (_NOISE_DBM / 10)
        for u in range(n_ues):
            s = serving[u]
            interf = np.sum(p_lin[u] * eff_load) - p_lin[u, s] * eff_load[s]
            triplets = []
            for c in range(n_cells):
                others = np.sum(p_lin[u] * eff_load) - p_lin[u, c] * eff_load[c]
                sinr_db = linear_to_db(p_lin[u, c] / (others + noise))
                rssi = 12 * (np.sum(p_lin[u] * eff_load) + noise)
                rsrq_db = linear_to_db(rsrq_linear(1, p_lin[u, c], rssi))
                # clipped to the 3GPP reporting ranges
                triplets.append(RadioTriplet(
                    round(float(np.clip(rsrp[u, c] + rng.normal(0, 1.0), -156, -31)), 2),
                    round(float(np.clip(sinr_db + rng.normal(0, 1.0), -23, 40)), 2),
                    round(float(np.clip(rsrq_db + rng.normal(0, 0.5), -43, 20)), 2),
                ))
            sinr = p_lin[u, s] / (interf + noise)
            prb_used = float(np.clip(round(DEPLOYED_PRB_MAX * eff_load[s] + rng.normal(0, 5)), 0, DEPLOYED_PRB_MAX))
            free_prb = max(DEPLOYED_PRB_MAX - prb_used, 3.0)
            n_in_cell = max(int(np.sum(serving == s)), 1)
            capacity = 0.8 * math.log2(1 + sinr) * _PRB_HZ * free_prb / math.sqrt(n_in_cell) / 1e6
            thpt = max(0.0, min(target[u], capacity) * float(rng.uniform(0.85, 1.05)))
            order = [c for c in np.argsort(-rsrp[u]) if c != s][:N_NEIGHBORS]
            reports.append(KpiReport(
                timestamp=start_ms + tick * tick_ms,
                ue_id=f"UE-{u + 1:02d}",
                du_id=f"DU-{1 + s // 4}",
                serving_cell=cells[s],
                prb_used_dl=prb_used,
                serving_radio=triplets[s],
                neighbors=tuple((cells[c], triplets[c]) for c in order),
                throughput_dl=round(thpt, 3),
                target_throughput=float(target[u]),
            ))
            if len(reports) >= n_reports:
                break
        tick += 1
    return reports
