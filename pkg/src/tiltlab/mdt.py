"""Crowdsourced measurement synthesis and pixel aggregation.

Stands in for a drive-test collection campaign: user calls are dropped on the
pixel map from a configurable spatial intensity, each call emits a handful of
periodic reports of its serving cell plus up to 8 neighbor powers, and the
reports are aggregated into statistically relevant 50 m pixels.

Per-pixel quantities follow the measurement conventions:

* pixel RSRP is the linear (mW) average of its reports, converted back to dB;
* RSRP-based SINR:   SINR = RSRP_serv - 10*log10(sum_i 10^(I_i/10) + N)
  with the thermal-noise floor N at -125 dBm per resource element;
* RSRQ-based SINR:   SINR = 12*RSRQ / (1 - rho*RSRQ*12)   (linear in, linear out)
  where rho is the interfering load fraction;
* WEIGHT is Poisson-sampled per episode with mean lambda equal to the number
  of distinct call ids observed in the pixel.

The dataset also stores per-pixel correction fields against the simulated
grids at the baseline tilts, delta_r = MDT_RSRP - SIM_RSRP and
delta_s = MDT_SINR - SIM_SINR, so a simulator step can reconstruct synthetic
measurements as MDT' = SIM + delta for any tilt assignment.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .scenario import RsrpGridSet

log = logging.getLogger(__name__)

NOISE_FLOOR_DBM = -125.0
NOISE_FLOOR_MW = 10.0 ** (NOISE_FLOOR_DBM / 10.0)
MAX_REPORTED_NEIGHBORS = 8
SUBCARRIERS_PER_PRB = 12


def db_to_mw(db):
    return np.power(10.0, np.asarray(db, dtype=np.float64) / 10.0)


def mw_to_db(mw):
    return 10.0 * np.log10(mw)


def sinr_rsrp_based(pcell_rsrp, interferers=()) -> float:
    """SINR in dB from serving RSRP and interfering RSRPs (all dBm).

    Interference is the plain linear sum of the interferers plus the
    -125 dBm noise floor.
    """
    total = float(np.sum(db_to_mw(np.asarray(interferers, dtype=np.float64)))) if len(interferers) else 0.0
    return float(pcell_rsrp - mw_to_db(total + NOISE_FLOOR_MW))


def sinr_rsrq_based(rsrq_linear: float, rho: float) -> float:
    """Linear SINR from linear RSRQ and interfering load fraction rho."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0, 1], got {rho}")
    if rsrq_linear <= 0.0:
        raise ValueError(f"rsrq_linear must be positive, got {rsrq_linear}")
    den = 1.0 - rho * rsrq_linear * SUBCARRIERS_PER_PRB
    if den <= 0.0:
        raise ValueError(f"inconsistent RSRQ/load pair: denominator {den} <= 0")
    return SUBCARRIERS_PER_PRB * rsrq_linear / den


def rsrq_from_sinr(sinr_linear: float, rho: float) -> float:
    """Inverse of :func:`sinr_rsrq_based`: the RSRQ matching a linear SINR."""
    return sinr_linear / (SUBCARRIERS_PER_PRB * (1.0 + rho * sinr_linear))


@dataclass
class MdtReport:
    """One periodic measurement report of one call."""

    pixel_index: tuple[int, int]
    call_id: int
    serving_cell: int
    pcell_rsrp: float
    ncell_rsrp: tuple[tuple[int, float], ...]   # (cell_id, rsrp_dbm), strongest first
    pcell_rsrq: float                           # dB

    def __post_init__(self) -> None:
        if len(self.ncell_rsrp) > MAX_REPORTED_NEIGHBORS:
            raise ValueError("at most 8 neighbor measurements per report")
        if any(c == self.serving_cell for c, _ in self.ncell_rsrp):
            raise ValueError("serving cell listed among neighbors")
        if not np.isfinite(self.pcell_rsrp) or not all(np.isfinite(v) for _, v in self.ncell_rsrp):
            raise ValueError("non-finite power in report")


@dataclass
class Pixel:
    """Aggregated per-pixel state.

    ``lam`` is the distinct-call count driving the Poisson weight law;
    ``act_ue_share`` is the pixel's share of its serving cell's active UEs
    after weight-proportional redistribution.
    """

    rsrp: float
    sinr: float
    weight: float
    lam: float
    serving_cell: int
    delta_r: float = 0.0
    delta_s: float = 0.0
    act_ue_share: float = 0.0


@dataclass
class CellKpis:
    """Per-cell counters from the management plane."""

    act_ues: dict[int, float]
    load_rho: dict[int, float]

    def __post_init__(self) -> None:
        for c, v in self.act_ues.items():
            if v < 0:
                raise ValueError(f"act_ues[{c}] negative")
        for c, v in self.load_rho.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"load_rho[{c}] outside [0, 1]")


@dataclass
class MdtDataset:
    """Retained pixels plus KPIs for one baseline tilt assignment."""

    pixels: dict[tuple[int, int], Pixel]
    kpis: CellKpis
    baseline_tilts: dict[int, int]
    discarded_fraction: float
    _arrays: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.discarded_fraction <= 1.0:
            raise ValueError("discarded_fraction outside [0, 1]")

    def keys_sorted(self) -> list[tuple[int, int]]:
        return sorted(self.pixels)

    def arrays(self) -> dict[str, np.ndarray]:
        """Column view of the pixels in sorted (y, z) order (cached)."""
        if not self._arrays:
            ks = self.keys_sorted()
            px = [self.pixels[k] for k in ks]
            self._arrays = {
                "yz": np.array(ks, dtype=np.int64).reshape(len(ks), 2),
                "rsrp": np.array([p.rsrp for p in px]),
                "sinr": np.array([p.sinr for p in px]),
                "weight": np.array([p.weight for p in px]),
                "lam": np.array([p.lam for p in px]),
                "serving": np.array([p.serving_cell for p in px], dtype=np.int64),
                "delta_r": np.array([p.delta_r for p in px]),
                "delta_s": np.array([p.delta_s for p in px]),
            }
        return self._arrays


def _pixel_intensity(shape: tuple[int, int], hotspots: Sequence[tuple[float, float, float, float]],
                     pixel_size: float) -> np.ndarray:
    """Unnormalized spatial intensity: uniform background plus Gaussian blobs.

    Hotspots are (x_m, y_m, radius_m, peak_multiplier); a blob raises the
    intensity at its center pixel by ``peak_multiplier`` relative to the
    uniform background.
    """
    y_n, z_n = shape
    base = np.ones((y_n, z_n), dtype=np.float64)
    if not hotspots:
        return base
    cx = (np.arange(y_n)[:, None] + 0.5) * pixel_size
    cy = (np.arange(z_n)[None, :] + 0.5) * pixel_size
    for hx, hy, radius, peak in hotspots:
        d2 = (cx - hx) ** 2 + (cy - hy) ** 2
        base += peak * np.exp(-d2 / (2.0 * radius ** 2))
    return base


def synthesize_reports(grids: RsrpGridSet, baseline: Mapping[int, int], traffic_seed: int,
                       n_calls: int, *, mean_reports: float = 4.0, sigma_meas_db: float = 2.0,
                       hotspots: Sequence[tuple[float, float, float, float]] = (),
                       pixel_size_m: float = 50.0,
                       load_rho: Mapping[int, float] | float = 0.5) -> list[MdtReport]:
    """Draw calls on the map and emit their measurement reports.

    Every call sits in one pixel and produces a geometric number of reports
    (mean ``mean_reports``).  Each report measures the baseline serving cell
    (max true RSRP) and the up-to-8 strongest neighbors, all corrupted by
    independent N(0, sigma_meas^2) dB noise; the serving RSRQ is the value
    consistent with the report's own RSRP-based SINR and the serving cell's
    load under the RSRQ-SINR relation.
    """
    if n_calls == 0:
        return []
    y_n, z_n = grids.shape
    rng = np.random.default_rng(traffic_seed)
    intensity = _pixel_intensity((y_n, z_n), hotspots, pixel_size_m).ravel()
    probs = intensity / intensity.sum()
    flat = rng.choice(y_n * z_n, size=n_calls, p=probs)
    counts = rng.geometric(1.0 / mean_reports, size=n_calls) if mean_reports > 1.0 \
        else np.ones(n_calls, dtype=np.int64)

    # true per-cell RSRP at baseline, per pixel
    stack = np.stack([grids.grid(c, int(baseline[c])) for c in grids.cell_ids])
    stack = stack.reshape(stack.shape[0], -1)
    serving_idx = np.argmax(stack, axis=0)

    if isinstance(load_rho, Mapping):
        rho_of = {int(c): float(load_rho[c]) for c in grids.cell_ids}
    else:
        rho_of = {int(c): float(load_rho) for c in grids.cell_ids}

    reports: list[MdtReport] = []
    cell_ids = np.asarray(grids.cell_ids)
    for call_id in range(n_calls):
        fidx = int(flat[call_id])
        sidx = int(serving_idx[fidx])
        true = stack[:, fidx]
        others = np.argsort(true)[::-1]
        others = [int(i) for i in others if i != sidx][:MAX_REPORTED_NEIGHBORS]
        for _ in range(int(counts[call_id])):
            meas = true + rng.normal(0.0, sigma_meas_db, size=true.shape)
            interferers = [float(meas[i]) for i in others]
            pcell = float(meas[sidx])
            sinr_lin = float(db_to_mw(sinr_rsrp_based(pcell, interferers)))
            rsrq = rsrq_from_sinr(sinr_lin, rho_of[int(cell_ids[sidx])])
            reports.append(MdtReport(
                pixel_index=(fidx // z_n, fidx % z_n),
                call_id=call_id,
                serving_cell=int(cell_ids[sidx]),
                pcell_rsrp=pcell,
                ncell_rsrp=tuple((int(cell_ids[i]), float(meas[i])) for i in others),
                pcell_rsrq=float(mw_to_db(rsrq)),
            ))
    return reports


def pixelize(reports: Sequence[MdtReport], min_samples: int = 5, min_interferers: int = 3,
             *, baseline: Mapping[int, int] | None = None,
             kpis: CellKpis | None = None, act_ue_factor: float = 0.05,
             load_rho_default: float = 0.5) -> MdtDataset:
    """Aggregate reports into retained pixels.

    A pixel survives iff it holds at least ``min_samples`` reports and at
    least one of them carries ``min_interferers`` or more neighbor entries.
    When no KPIs are supplied, per-cell active-UE counts are derived from the
    distinct calls each cell served (scaled by ``act_ue_factor``) and loads
    default to ``load_rho_default``.
    """
    if not reports:
        raise ValueError("no reports to aggregate")
    by_pixel: dict[tuple[int, int], list[MdtReport]] = {}
    for r in reports:
        by_pixel.setdefault(tuple(r.pixel_index), []).append(r)

    pixels: dict[tuple[int, int], Pixel] = {}
    discarded = 0
    for key in sorted(by_pixel):
        batch = by_pixel[key]
        if len(batch) < min_samples or not any(len(r.ncell_rsrp) >= min_interferers for r in batch):
            discarded += 1
            continue
        # modal serving cell; ties resolved by strongest average RSRP
        votes: dict[int, list[float]] = {}
        for r in batch:
            votes.setdefault(r.serving_cell, []).append(r.pcell_rsrp)
        top = max(len(v) for v in votes.values())
        tied = [c for c, v in votes.items() if len(v) == top]
        serving = min(tied) if len(tied) == 1 else \
            max(tied, key=lambda c: float(mw_to_db(np.mean(db_to_mw(votes[c])))))
        rsrp = float(mw_to_db(np.mean(db_to_mw([r.pcell_rsrp for r in batch]))))
        # per-interferer linear-mean power, strongest 8, excluding the pixel server
        acc: dict[int, list[float]] = {}
        for r in batch:
            for c, v in r.ncell_rsrp:
                if c != serving:
                    acc.setdefault(c, []).append(v)
        means = sorted((float(np.mean(db_to_mw(v))) for v in acc.values()), reverse=True)
        interf_db = [float(mw_to_db(m)) for m in means[:MAX_REPORTED_NEIGHBORS]]
        sinr = sinr_rsrp_based(rsrp, interf_db)
        lam = float(len({r.call_id for r in batch}))
        pixels[key] = Pixel(rsrp=rsrp, sinr=sinr, weight=lam, lam=lam, serving_cell=serving)
    if not pixels:
        raise ValueError("every pixel was discarded; dataset unusable "
                         f"({discarded} candidates, min_samples={min_samples})")

    if kpis is None:
        calls_per_cell: dict[int, set] = {}
        for r in reports:
            calls_per_cell.setdefault(r.serving_cell, set()).add(r.call_id)
        cells = sorted({p.serving_cell for p in pixels.values()} | set(calls_per_cell))
        kpis = CellKpis(
            act_ues={c: act_ue_factor * len(calls_per_cell.get(c, ())) for c in cells},
            load_rho={c: load_rho_default for c in cells},
        )
    dataset = MdtDataset(
        pixels=pixels, kpis=kpis,
        baseline_tilts=dict(baseline) if baseline is not None else {},
        discarded_fraction=discarded / (discarded + len(pixels)),
    )
    _refresh_act_ue_shares(dataset)
    return dataset


def _refresh_act_ue_shares(dataset: MdtDataset) -> None:
    """Within-cell weight-proportional shares (sum to 1 per non-empty cell)."""
    totals: dict[int, float] = {}
    for p in dataset.pixels.values():
        totals[p.serving_cell] = totals.get(p.serving_cell, 0.0) + p.weight
    for p in dataset.pixels.values():
        t = totals[p.serving_cell]
        p.act_ue_share = p.weight / t if t > 0 else 0.0
    dataset._arrays = {}


def compute_deltas(dataset: MdtDataset, grids: RsrpGridSet) -> MdtDataset:
    """Fill per-pixel correction fields against the baseline simulation.

    The simulated side serves each pixel from its max-RSRP cell at the
    baseline tilts (the same rule the environment applies), with SINR from
    the full interferer set, so that SIM + delta reproduces the MDT value
    exactly at baseline.
    """
    if not dataset.baseline_tilts:
        raise ValueError("dataset has no baseline tilt assignment")
    stack = np.stack([grids.grid(c, int(dataset.baseline_tilts[c])) for c in grids.cell_ids])
    for (y, z), p in dataset.pixels.items():
        col = stack[:, y, z]
        sidx = int(np.argmax(col))
        sim_rsrp = float(col[sidx])
        interf = float(np.sum(db_to_mw(col)) - db_to_mw(col[sidx]))
        sim_sinr = float(sim_rsrp - mw_to_db(interf + NOISE_FLOOR_MW))
        p.delta_r = p.rsrp - sim_rsrp
        p.delta_s = p.sinr - sim_sinr
        # Snap the stored aggregate to sim + delta: float a + (b - a) does
        # not always round back to b, and the baseline replay is required to
        # reproduce the dataset bit-for-bit.  The snap moves the value by at
        # most one ulp and is idempotent.
        p.rsrp = sim_rsrp + p.delta_r
        p.sinr = sim_sinr + p.delta_s
    dataset._arrays = {}
    return dataset


def sample_weights(dataset: MdtDataset, rng_seed: int | np.random.Generator) -> MdtDataset:
    """New dataset with weights drawn from Poisson(lambda) per pixel.

    An all-zero draw (degenerate traffic) is redrawn.  The input dataset is
    left untouched.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    keys = dataset.keys_sorted()
    lams = np.array([dataset.pixels[k].lam for k in keys])
    weights = rng.poisson(lams).astype(np.float64)
    while lams.sum() > 0 and weights.sum() == 0:
        weights = rng.poisson(lams).astype(np.float64)
    out = MdtDataset(
        pixels={k: replace(dataset.pixels[k], weight=float(w)) for k, w in zip(keys, weights)},
        kpis=dataset.kpis,
        baseline_tilts=dict(dataset.baseline_tilts),
        discarded_fraction=dataset.discarded_fraction,
    )
    _refresh_act_ue_shares(out)
    return out


def save_dataset(dataset: MdtDataset, path: str | Path) -> None:
    """One pixel per JSON line; KPIs and baseline tilts in a sidecar file."""
    path = Path(path)
    with open(path, "w") as fh:
        for (y, z) in dataset.keys_sorted():
            p = dataset.pixels[(y, z)]
            fh.write(json.dumps({
                "y": y, "z": z, "rsrp": p.rsrp, "sinr": p.sinr, "weight": p.weight,
                "lambda": p.lam, "serving_cell": p.serving_cell,
                "delta_r": p.delta_r, "delta_s": p.delta_s,
                "act_ue_share": p.act_ue_share,
            }) + "\n")
    sidecar = path.with_suffix(path.suffix + ".kpis.json")
    with open(sidecar, "w") as fh:
        json.dump({
            "act_ues": {str(c): v for c, v in dataset.kpis.act_ues.items()},
            "load_rho": {str(c): v for c, v in dataset.kpis.load_rho.items()},
            "baseline_tilts": {str(c): t for c, t in dataset.baseline_tilts.items()},
            "discarded_fraction": dataset.discarded_fraction,
        }, fh, indent=1)


def load_dataset(path: str | Path) -> MdtDataset:
    path = Path(path)
    pixels: dict[tuple[int, int], Pixel] = {}
    with open(path) as fh:
        for line in fh:
            d = json.loads(line)
            pixels[(d["y"], d["z"])] = Pixel(
                rsrp=d["rsrp"], sinr=d["sinr"], weight=d["weight"], lam=d["lambda"],
                serving_cell=d["serving_cell"], delta_r=d["delta_r"], delta_s=d["delta_s"],
                act_ue_share=d["act_ue_share"],
            )
    with open(path.with_suffix(path.suffix + ".kpis.json")) as fh:
        side = json.load(fh)
    return MdtDataset(
        pixels=pixels,
        kpis=CellKpis(act_ues={int(c): v for c, v in side["act_ues"].items()},
                      load_rho={int(c): v for c, v in side["load_rho"].items()}),
        baseline_tilts={int(c): t for c, t in side["baseline_tilts"].items()},
        discarded_fraction=side["discarded_fraction"],
    )
