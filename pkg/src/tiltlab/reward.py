"""Link adaptation and reward math.

SINR maps to spectral efficiency through an empirical 15-row CQI table
(highest CQI whose threshold the SINR reaches; below the first threshold the
pixel is in outage with efficiency 0).  Cell throughput is

    U_cell = eta_cell * N_PRB_per_UE * 180 kHz

where eta_cell is the weight-averaged pixel efficiency and the PRB share
comes from the scheduler: round robin splits the usable PRBs evenly, the
fair variant gives a class-m UE beta_m times the base share

    base = (N_PRB_TOT - Thr) / sum_m beta_m * N_m .

The cluster reward (case 1) is the UE-weighted mean of cell throughputs in
Mbps minus a coverage cost that is 0 while weighted coverage stays in
[99.5, 100] %, follows

    (1 - 4.6^(a - 101.1)) / (11.2 * 4.6^(a - 101.1))

on [98, 99.5) %, and saturates at 10 below 98 %.  Note the printed cost is
discontinuous at 99.5 % (the middle branch evaluates to about 0.937 there).
Case 2 is the weighted mean of per-pixel (RSRP + SINR).

A pixel is out of coverage when RSRP < -125 dBm (no-coverage limit) or
SINR < -6.4 dB (interference limit).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

PRB_BANDWIDTH_HZ = 180_000.0

# (cqi, sinr threshold dB, modulation, code rate, spectral efficiency b/s/Hz)
CQI_TABLE_ROWS: tuple[tuple[int, float, str, float, float], ...] = (
    (1, -6.4, "QPSK", 0.076, 0.1524),
    (2, -4.8, "QPSK", 0.19, 0.377),
    (3, -3.4, "QPSK", 0.44, 0.877),
    (4, -2.2, "16QAM", 0.37, 1.4764),
    (5, -1.2, "16QAM", 0.48, 1.914),
    (6, -0.1, "16QAM", 0.60, 2.4064),
    (7, 0.9, "64QAM", 0.46, 2.7306),
    (8, 2.1, "64QAM", 0.55, 3.3222),
    (9, 3.3, "64QAM", 0.65, 3.9024),
    (10, 4.8, "64QAM", 0.75, 4.5234),
    (11, 6.5, "64QAM", 0.85, 5.115),
    (12, 8.5, "256QAM", 0.69, 5.5544),
    (13, 10.9, "256QAM", 0.78, 6.2264),
    (14, 13.8, "256QAM", 0.86, 6.9072),
    (15, 17.1, "256QAM", 0.93, 7.4064),
)


@dataclass(frozen=True)
class CqiTable:
    """CQI -> (SINR threshold, modulation, code rate, spectral efficiency)."""

    cqis: tuple[int, ...]
    thresholds: tuple[float, ...]
    modulations: tuple[str, ...]
    code_rates: tuple[float, ...]
    efficiencies: tuple[float, ...]

    def __post_init__(self) -> None:
        t, e = np.asarray(self.thresholds), np.asarray(self.efficiencies)
        if len(self.cqis) < 1:
            raise ValueError("empty CQI table")
        if not (np.all(np.diff(t) > 0) and np.all(np.diff(e) > 0)):
            raise ValueError("thresholds and efficiencies must be strictly increasing")

    @classmethod
    def default(cls) -> "CqiTable":
        rows = CQI_TABLE_ROWS
        return cls(tuple(r[0] for r in rows), tuple(r[1] for r in rows),
                   tuple(r[2] for r in rows), tuple(r[3] for r in rows),
                   tuple(r[4] for r in rows))

    @classmethod
    def from_csv(cls, path: str | Path) -> "CqiTable":
        """Rows of cqi,sinr_threshold,modulation,code_rate,spectral_efficiency."""
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append((int(rec["cqi"]), float(rec["sinr_threshold"]), rec["modulation"],
                             float(rec["code_rate"]), float(rec["spectral_efficiency"])))
        rows.sort()
        return cls(tuple(r[0] for r in rows), tuple(r[1] for r in rows),
                   tuple(r[2] for r in rows), tuple(r[3] for r in rows),
                   tuple(r[4] for r in rows))

    def lookup(self, sinr) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized (cqi, efficiency) for SINR values in dB.

        Index 0 encodes outage (below the lowest threshold): cqi 0, eta 0.
        """
        idx = np.searchsorted(np.asarray(self.thresholds), np.asarray(sinr, dtype=np.float64),
                              side="right")
        cqi = np.concatenate(([0], np.asarray(self.cqis)))[idx]
        eff = np.concatenate(([0.0], np.asarray(self.efficiencies)))[idx]
        return cqi, eff


def cqi_from_sinr(sinr: float, table: CqiTable | None = None) -> tuple[int, float]:
    """Highest CQI whose threshold is <= sinr; (0, 0.0) below the table."""
    table = table or CqiTable.default()
    cqi, eff = table.lookup(np.float64(sinr))
    return int(cqi), float(eff)


@dataclass(frozen=True)
class SchedulerConfig:
    """PRB sharing rule: 'round_robin' or 'fair' with M CQI classes.

    Class 1 holds the best channels and gets betas[0] shares; class M the
    worst and gets betas[M-1].  The default betas (1, 2, 3) give the worst
    class M times the best class's PRBs.
    """

    kind: str = "round_robin"
    n_prb_tot: int = 100
    thr: int = 10
    betas: tuple[float, ...] = (1.0, 2.0, 3.0)

    def __post_init__(self) -> None:
        if self.kind not in ("round_robin", "fair"):
            raise ValueError(f"unknown scheduler kind {self.kind!r}")
        if not 0 <= self.thr < self.n_prb_tot:
            raise ValueError("need 0 <= thr < n_prb_tot")
        b = np.asarray(self.betas)
        if len(b) < 1:
            raise ValueError("need at least one scheduler class")
        if len(b) > 1 and not np.all(np.diff(b) > 0):
            raise ValueError("betas must be strictly increasing")

    @property
    def n_classes(self) -> int:
        return len(self.betas)

    @property
    def usable_prbs(self) -> float:
        return float(self.n_prb_tot - self.thr)


@dataclass(frozen=True)
class CoverageCostParams:
    """Constants of the coverage cost and the outage thresholds."""

    full_low: float = 99.5
    penalty_low: float = 98.0
    base: float = 4.6
    offset: float = 101.1
    scale: float = 11.2
    out_penalty: float = 10.0
    nl_threshold_dbm: float = -125.0
    il_threshold_db: float = -6.4


def cqi_class(cqi, n_classes: int, cqi_max: int = 15) -> np.ndarray:
    """Scheduler class index (0 = best channels) from CQI.

    The CQI range [0, cqi_max] is split into ``n_classes`` equal bands;
    higher CQI bands map to lower class indices.
    """
    band = np.minimum((np.asarray(cqi) * n_classes) // (cqi_max + 1), n_classes - 1)
    return (n_classes - 1 - band).astype(np.int64)


def cell_spectral_efficiency(efficiencies, weights) -> float:
    """Weighted mean pixel efficiency, Sum w_i eta_i / Sum w_i."""
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise ValueError("cell has zero total weight")
    return float(np.dot(np.asarray(efficiencies, dtype=np.float64), w) / total)


def prbs_per_ue(cfg: SchedulerConfig, class_counts) -> np.ndarray:
    """PRBs granted to one UE of each class.

    Round robin ignores classes and splits the usable PRBs over all UEs.
    The fair rule hands a class-m UE betas[m] times the base share.  With no
    UEs at all, the whole usable band goes to one virtual UE (idle cell).
    """
    counts = np.asarray(class_counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        log.debug("idle cell: granting all %s usable PRBs to a virtual UE", cfg.usable_prbs)
        return np.full(len(counts), cfg.usable_prbs)
    if cfg.kind == "round_robin":
        return np.full(len(counts), cfg.usable_prbs / total)
    betas = np.asarray(cfg.betas[:len(counts)], dtype=np.float64)
    base = cfg.usable_prbs / float(np.dot(betas, counts))
    return betas * base


def cell_user_throughput(eta: float, n_prb: float) -> float:
    """Average user throughput in bits/s for one cell."""
    return eta * n_prb * PRB_BANDWIDTH_HZ


def cluster_throughput(per_cell: Sequence[tuple[float, float]]) -> float:
    """UE-weighted mean of cell user throughputs: (1/N) Sum n_j U_j."""
    n = np.asarray([c[0] for c in per_cell], dtype=np.float64)
    u = np.asarray([c[1] for c in per_cell], dtype=np.float64)
    total = n.sum()
    if total <= 0:
        raise ValueError("no active UEs in the cluster")
    return float(np.dot(n, u) / total)


def coverage_fraction(rsrp, sinr, weights, params: CoverageCostParams | None = None) -> float:
    """Weighted percentage of pixels inside both coverage limits."""
    params = params or CoverageCostParams()
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise ValueError("zero total weight")
    out = (np.asarray(rsrp) < params.nl_threshold_dbm) | (np.asarray(sinr) < params.il_threshold_db)
    return float(100.0 * w[~out].sum() / total)


def coverage_cost(a_cov: float, params: CoverageCostParams | None = None) -> float:
    """Piecewise coverage cost; 0 on the full band, saturating below 98 %."""
    params = params or CoverageCostParams()
    if params.full_low <= a_cov <= 100.0:
        return 0.0
    if params.penalty_low <= a_cov < params.full_low:
        g = params.base ** (a_cov - params.offset)
        return (1.0 - g) / (params.scale * g)
    return params.out_penalty


def _per_cell_throughput(eff, weight, act_ue, serving, cell: int,
                         sched: SchedulerConfig, cqi) -> tuple[float, float] | None:
    """(n_ue, U_cell) for one cell, or None when the cell holds no weight."""
    mask = serving == cell
    if not np.any(mask):
        return None
    w = weight[mask]
    wsum = w.sum()
    if wsum <= 0:
        log.warning("cell %d excluded from cluster average: zero total weight", cell)
        return None
    n_ue = float(act_ue[mask].sum())
    if sched.kind == "round_robin":
        eta = float(np.dot(eff[mask], w) / wsum)
        share = prbs_per_ue(sched, [n_ue])[0]
        return n_ue, cell_user_throughput(eta, share)
    classes = cqi_class(cqi[mask], sched.n_classes)
    counts = np.bincount(classes, weights=act_ue[mask], minlength=sched.n_classes)
    shares = prbs_per_ue(sched, counts)
    if n_ue <= 0:
        # idle cell: single virtual UE at the cell-average efficiency
        eta = float(np.dot(eff[mask], w) / wsum)
        return 0.0, cell_user_throughput(eta, shares[0])
    u = 0.0
    for m in range(sched.n_classes):
        cmask = classes == m
        wc = w[cmask]
        if counts[m] <= 0 or wc.sum() <= 0:
            continue
        eta_m = float(np.dot(eff[mask][cmask], wc) / wc.sum())
        u += (counts[m] / n_ue) * cell_user_throughput(eta_m, shares[m])
    return n_ue, u


def reward_case1_arrays(rsrp, sinr, weight, act_ue, serving, target_cells: Iterable[int],
                        sched: SchedulerConfig | None = None, table: CqiTable | None = None,
                        params: CoverageCostParams | None = None) -> tuple[float, dict]:
    """Cluster throughput (Mbps) minus coverage cost, plus diagnostics.

    Coverage counts every pixel; throughput aggregates the target cells only
    (frozen boundary cells interfere but are not part of the optimized
    cluster's traffic average).
    """
    sched = sched or SchedulerConfig()
    table = table or CqiTable.default()
    params = params or CoverageCostParams()
    rsrp = np.asarray(rsrp, dtype=np.float64)
    sinr = np.asarray(sinr, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    act_ue = np.asarray(act_ue, dtype=np.float64)
    serving = np.asarray(serving)
    cov = coverage_fraction(rsrp, sinr, weight, params)
    cost = coverage_cost(cov, params)
    cqi, eff = table.lookup(sinr)
    per_cell = []
    for cell in target_cells:
        res = _per_cell_throughput(eff, weight, act_ue, serving, int(cell), sched, cqi)
        if res is not None:
            per_cell.append(res)
    u = cluster_throughput(per_cell)
    u_mbps = u / 1e6
    return u_mbps - cost, {"coverage_pct": cov, "throughput_mbps": u_mbps, "coverage_cost": cost}


def reward_case2_arrays(rsrp, sinr, weight) -> tuple[float, dict]:
    """Weighted mean of per-pixel (RSRP + SINR)."""
    w = np.asarray(weight, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise ValueError("zero total weight")
    value = float(np.dot(np.asarray(rsrp) + np.asarray(sinr), w) / total)
    return value, {"mean_rsrp_plus_sinr": value}


def _dataset_columns(dataset) -> tuple[np.ndarray, ...]:
    cols = dataset.arrays()
    total_act = float(sum(dataset.kpis.act_ues.values()))
    wsum = cols["weight"].sum()
    act_ue = total_act * cols["weight"] / wsum if wsum > 0 else np.zeros_like(cols["weight"])
    return cols["rsrp"], cols["sinr"], cols["weight"], act_ue, cols["serving"]


def reward_case1(dataset, sched: SchedulerConfig | None = None, table: CqiTable | None = None,
                 params: CoverageCostParams | None = None,
                 target_cells: Iterable[int] | None = None) -> float:
    """Case-1 reward of a dataset snapshot (cluster-wide act-UE redistribution)."""
    rsrp, sinr, weight, act_ue, serving = _dataset_columns(dataset)
    cells = sorted(set(serving.tolist())) if target_cells is None else list(target_cells)
    value, _ = reward_case1_arrays(rsrp, sinr, weight, act_ue, serving, cells, sched, table, params)
    return value


def reward_case2(dataset) -> float:
    """Case-2 reward of a dataset snapshot."""
    rsrp, sinr, weight, _, _ = _dataset_columns(dataset)
    value, _ = reward_case2_arrays(rsrp, sinr, weight)
    return value
