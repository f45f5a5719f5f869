"""Hand-built scenarios with known optima for exercising search behaviour.

Both scenarios put three cells on a 6x9 grid split into three equal column
bands, with cell i dominant in band i, two tilt choices per cell, constant
traffic intensity 50, and the weighted signal-quality reward (case2).  All
pixel powers are set directly per band so every configuration value can be
checked by hand; traffic jitter moves band weights by a few percent against
decision margins of ten or more units.

``deception_scenario`` wires a delayed interference trap.  Cell 2's second
tilt sprays -82 dBm into bands 0 and 1, where the resident cells idle at a
miserable -118 dBm, so every affected pixel reselects to cell 2 and the
one-step reward jumps by ~12 more than any other action.  The trap closes
later: once cells 0 and 1 raise their own bands to -65 dBm, the spray stops
serving anyone and remains as the dominant interferer, costing ~34 units of
SINR per pixel against the clean alternative.  A one-step-greedy search
therefore takes the spray first and ends around -160 total, while the
exhaustive optimum leaves cell 2 alone and fixes cells 0 and 1 (total around
-126).  Reaching the optimum requires valuing an action by its downstream
consequences, not its immediate payoff.

``control_scenario`` removes all coupling: cells are mutually invisible
(cross-band -200 dBm) and the tilt gains are strictly ordered (cell 0 +40,
cell 1 +30, cell 2 +20 dB).  One-step greedy then commits cells in exactly
the exhaustive search's canonical order, so both searches must agree on the
same action sequence and, being the same rollout, on bit-identical totals.
"""

from __future__ import annotations

import numpy as np

from .env import EnvConfig, TiltEnv
from .mdt import NOISE_FLOOR_MW, CellKpis, MdtDataset, Pixel, _refresh_act_ue_shares, \
    compute_deltas, db_to_mw, mw_to_db
from .scenario import RsrpGridSet

GRID_SHAPE = (6, 9)
BAND_COLS = 3
TOY_LAMBDA = 50.0
TOY_TILTS = (0.0, -6.0)

# flat action ids with P=2: cell * 2 + tilt
DECEPTION_LURE_ACTION = 5            # cell 2 -> spray tilt
DECEPTION_ORACLE_ASSIGNMENT = (1, 1, 0)
CONTROL_ORACLE_ASSIGNMENT = (1, 1, 1)


def _banded_grids(levels: dict[tuple[int, int], tuple[float, float]]) -> RsrpGridSet:
    """Grids from {(cell, tilt): (own-band dBm, cross-band dBm)}."""
    y, z = GRID_SHAPE
    rsrp = np.empty((3, 2, y, z))
    for (cell, tilt), (own, cross) in levels.items():
        plane = np.full((y, z), cross)
        plane[:, cell * BAND_COLS:(cell + 1) * BAND_COLS] = own
        rsrp[cell, tilt] = plane
    return RsrpGridSet(cell_ids=(0, 1, 2), tilt_set_deg=TOY_TILTS, rsrp=rsrp)


def _dataset_at_baseline(grids: RsrpGridSet) -> MdtDataset:
    """All pixels retained, measurements equal to the baseline simulation."""
    baseline = {c: 0 for c in grids.cell_ids}
    stack = np.stack([grids.grid(c, 0) for c in grids.cell_ids])
    pixels: dict[tuple[int, int], Pixel] = {}
    for yy in range(GRID_SHAPE[0]):
        for zz in range(GRID_SHAPE[1]):
            col = stack[:, yy, zz]
            sidx = int(np.argmax(col))
            interf = float(np.sum(db_to_mw(col)) - db_to_mw(col[sidx]))
            sinr = float(col[sidx] - mw_to_db(interf + NOISE_FLOOR_MW))
            pixels[(yy, zz)] = Pixel(rsrp=float(col[sidx]), sinr=sinr,
                                     weight=TOY_LAMBDA, lam=TOY_LAMBDA,
                                     serving_cell=int(grids.cell_ids[sidx]))
    kpis = CellKpis(act_ues={c: 10.0 for c in grids.cell_ids},
                    load_rho={c: 0.5 for c in grids.cell_ids})
    ds = MdtDataset(pixels=pixels, kpis=kpis, baseline_tilts=baseline,
                    discarded_fraction=0.0)
    _refresh_act_ue_shares(ds)
    return compute_deltas(ds, grids)


def deception_scenario() -> tuple[RsrpGridSet, MdtDataset]:
    grids = _banded_grids({
        (0, 0): (-118.0, -120.0), (0, 1): (-65.0, -120.0),
        (1, 0): (-118.0, -120.0), (1, 1): (-65.0, -120.0),
        (2, 0): (-90.0, -120.0),  (2, 1): (-90.0, -82.0),
    })
    return grids, _dataset_at_baseline(grids)


def control_scenario() -> tuple[RsrpGridSet, MdtDataset]:
    grids = _banded_grids({
        (0, 0): (-100.0, -200.0), (0, 1): (-60.0, -200.0),
        (1, 0): (-100.0, -200.0), (1, 1): (-70.0, -200.0),
        (2, 0): (-100.0, -200.0), (2, 1): (-80.0, -200.0),
    })
    return grids, _dataset_at_baseline(grids)


def make_env(kind: str = "deception", seed: int = 0,
             d_range: float | None = None) -> TiltEnv:
    """Environment over one of the toy scenarios, case2 reward."""
    if kind == "deception":
        grids, ds = deception_scenario()
    elif kind == "control":
        grids, ds = control_scenario()
    else:
        raise ValueError(f"unknown toy scenario {kind!r}")
    config = EnvConfig(reward_mode="case2", d_range=d_range)
    return TiltEnv(grids, ds, target_cells=(0, 1, 2), config=config, seed=seed)
