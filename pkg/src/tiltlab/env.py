"""Episodic tilt-optimization environment.

One episode is a fixed-length pass over the cluster: the agent picks one
(cell, tilt) pair per step for C steps, with gamma = 1 so the episode return
is the plain sum of step rewards.  Each step

1. writes the chosen tilt into the assignment (boundary cells stay frozen),
2. pulls the per-cell RSRP grids of the new assignment,
3. reselects every pixel to its max-RSRP cell,
4. recomputes the simulated SINR from the full interferer sum,
5. reconstructs synthetic measurements  MDT' = SIM + delta  per pixel
   (the pixel's frozen baseline corrections, applied in the dB domain),
6. re-attributes the episode's active UEs to cells by pixel serving,
7. scores the resulting state (case 1: throughput minus coverage cost,
   case 2: weighted RSRP+SINR mean), subtracting a penalty when the touched
   cell was already modified this episode.

Observations are three min-max-normalized pixel channels (RSRP, WEIGHT,
SINR) over the full grid (non-retained pixels read 0) plus P*C episode
history bits, one per flat action, all zero right after reset.  Channel
bounds are fixed -- RSRP [-140, -60] dBm, SINR [-10, 25] dB -- except the
weight bound, the 99th percentile of the weights sampled at reset.

Weights resample from Poisson(lambda) on reset.  In stress mode
(``d_range`` set) the Poisson draw is replaced by the perturbation
w' = lambda_norm + U(-d/2, +d/2) followed by min-max normalization of the
whole field into [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .mdt import NOISE_FLOOR_MW, MdtDataset
from .reward import (CoverageCostParams, CqiTable, SchedulerConfig,
                     reward_case1_arrays, reward_case2_arrays)
from .scenario import RsrpGridSet

RSRP_BOUNDS_DBM = (-140.0, -60.0)
SINR_BOUNDS_DB = (-10.0, 25.0)
WEIGHT_PERCENTILE = 99.0


@dataclass(frozen=True)
class Action:
    """cell is an index into the target-cell list, tilt a tilt-set index."""

    cell: int
    tilt: int

    def flat(self, n_tilts: int) -> int:
        return self.cell * n_tilts + self.tilt

    @classmethod
    def from_flat(cls, flat_id: int, n_tilts: int) -> "Action":
        return cls(flat_id // n_tilts, flat_id % n_tilts)


@dataclass
class Observation:
    rsrp_channel: np.ndarray       # (Y, Z) in [0, 1]
    weight_channel: np.ndarray
    sinr_channel: np.ndarray
    history: np.ndarray            # (P*C,) of {0.0, 1.0}

    def image(self) -> np.ndarray:
        """Channels stacked to (3, Y, Z) for the conv branch."""
        return np.stack([self.rsrp_channel, self.weight_channel, self.sinr_channel])


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    info: dict


@dataclass
class EnvConfig:
    reward_mode: str = "case1"                 # "case1" | "case2"
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    cost_params: CoverageCostParams = field(default_factory=CoverageCostParams)
    cqi_table: CqiTable = field(default_factory=CqiTable.default)
    repeat_penalty: float = 5.0
    d_range: float | None = None               # stress mode when set

    def __post_init__(self) -> None:
        if self.reward_mode not in ("case1", "case2"):
            raise ValueError(f"unknown reward mode {self.reward_mode!r}")
        if self.d_range is not None and self.d_range < 0:
            raise ValueError("d_range must be >= 0")


class TiltEnv:
    """Stateful single-threaded environment over immutable grids + dataset."""

    def __init__(self, grids: RsrpGridSet, dataset: MdtDataset,
                 target_cells: Sequence[int], config: EnvConfig | None = None,
                 seed: int = 0):
        self.config = config or EnvConfig()
        self.grids = grids
        self.dataset = dataset
        self.target_cells = tuple(int(c) for c in target_cells)
        if not set(self.target_cells) <= set(grids.cell_ids):
            raise ValueError("target cells missing from grid set")
        if not set(grids.cell_ids) <= set(dataset.baseline_tilts):
            raise ValueError("baseline tilts missing for some cells")
        self.n_tilts = len(grids.tilt_set_deg)
        self.n_cells_total = len(grids.cell_ids)
        self.episode_len = len(self.target_cells)
        self.n_actions = self.episode_len * self.n_tilts
        self.shape = grids.shape

        cols = dataset.arrays()
        self._yz = cols["yz"]
        self._lam = cols["lam"].astype(np.float64)
        self._delta_r = cols["delta_r"]
        self._delta_s = cols["delta_s"]
        self.n_pixels = len(self._lam)
        # per-cell, per-tilt RSRP at retained pixels, dB and mW
        ys, zs = self._yz[:, 0], self._yz[:, 1]
        self._rsrp_px = np.ascontiguousarray(grids.rsrp[:, :, ys, zs])   # (n_cells, P, n_px)
        self._rsrp_px_mw = np.power(10.0, self._rsrp_px / 10.0)
        self._cell_ids = np.asarray(grids.cell_ids, dtype=np.int64)
        self._baseline = np.array([dataset.baseline_tilts[c] for c in grids.cell_ids],
                                  dtype=np.int64)
        self._target_pos = np.array([grids.index_of(c) for c in self.target_cells],
                                    dtype=np.int64)
        self._total_act_ues = float(sum(dataset.kpis.act_ues.values()))

        self._auto_rng = np.random.default_rng(seed)
        self._tilts = self._baseline.copy()
        self._history = np.zeros(self.n_actions, dtype=np.float64)
        self._steps = 0
        self._started = False

    # -- state machinery ---------------------------------------------------

    def _refresh_pixel_state(self) -> None:
        idx = np.arange(self.n_cells_total)
        rsrp = self._rsrp_px[idx, self._tilts]          # (n_cells, n_px) dB
        mw = self._rsrp_px_mw[idx, self._tilts]
        self._serving_pos = np.argmax(rsrp, axis=0)     # ties: lowest position = lowest cell id
        cols = np.arange(self.n_pixels)
        serv_rsrp = rsrp[self._serving_pos, cols]
        interf = mw.sum(axis=0) - mw[self._serving_pos, cols]
        self._sim_rsrp = serv_rsrp
        self._sim_sinr = serv_rsrp - 10.0 * np.log10(interf + NOISE_FLOOR_MW)
        self._mdt_rsrp = self._sim_rsrp + self._delta_r
        self._mdt_sinr = self._sim_sinr + self._delta_s
        self._serving_cell = self._cell_ids[self._serving_pos]

    def _sample_weights(self, rng: np.random.Generator) -> np.ndarray:
        if self.config.d_range is not None:
            return self._perturbed_weights(self.config.d_range, rng)
        w = rng.poisson(self._lam).astype(np.float64)
        while self._lam.sum() > 0 and w.sum() == 0:
            w = rng.poisson(self._lam).astype(np.float64)
        return w

    def _perturbed_weights(self, d_range: float, rng: np.random.Generator) -> np.ndarray:
        span = self._lam.max() - self._lam.min()
        defaults = (self._lam - self._lam.min()) / span if span > 0 \
            else np.ones_like(self._lam)
        w = defaults + rng.uniform(-d_range / 2.0, d_range / 2.0, size=defaults.shape)
        lo, hi = w.min(), w.max()
        if hi > lo:
            w = (w - lo) / (hi - lo)
        return w

    def _set_weights(self, w: np.ndarray) -> None:
        self._weights = w
        wmax = float(np.percentile(w, WEIGHT_PERCENTILE))
        if wmax <= 0:
            wmax = float(w.max()) or 1.0
        self._w_max = wmax
        wsum = w.sum()
        self._act_ue = self._total_act_ues * w / wsum if wsum > 0 else np.zeros_like(w)

    def clone(self, seed: int = 0) -> "TiltEnv":
        """Independent env over the same (immutable) grids and dataset."""
        return TiltEnv(self.grids, self.dataset, self.target_cells, self.config, seed)

    def reset(self, seed: int | None = None) -> Observation:
        rng = self._auto_rng if seed is None else np.random.default_rng(seed)
        self._tilts = self._baseline.copy()
        self._set_weights(self._sample_weights(rng))
        self._history = np.zeros(self.n_actions, dtype=np.float64)
        self._steps = 0
        self._started = True
        self._refresh_pixel_state()
        return self.encode_observation()

    def perturb_weights(self, d_range: float, seed: int | None = None) -> None:
        """Replace the episode weights with perturbed normalized defaults."""
        if d_range < 0:
            raise ValueError("d_range must be >= 0")
        rng = self._auto_rng if seed is None else np.random.default_rng(seed)
        self._set_weights(self._perturbed_weights(d_range, rng))

    @property
    def done(self) -> bool:
        return self._steps >= self.episode_len

    @property
    def tilt_assignment(self) -> dict[int, int]:
        return {int(c): int(t) for c, t in zip(self._cell_ids, self._tilts)}

    def step(self, action: Action | int) -> StepResult:
        if not self._started:
            raise RuntimeError("step before reset")
        if self.done:
            raise RuntimeError("step after episode end")
        if isinstance(action, (int, np.integer)):
            action = Action.from_flat(int(action), self.n_tilts)
        if not (0 <= action.cell < self.episode_len and 0 <= action.tilt < self.n_tilts):
            raise ValueError(f"action out of range: {action}")
        flat = action.flat(self.n_tilts)
        cell_bits = self._history[action.cell * self.n_tilts:(action.cell + 1) * self.n_tilts]
        repeated = bool(cell_bits.any())

        self._tilts[self._target_pos[action.cell]] = action.tilt
        self._refresh_pixel_state()

        reward, info = self._score()
        if repeated:
            reward -= self.config.repeat_penalty
        info["constraint_violation"] = repeated
        self._history[flat] = 1.0
        self._steps += 1
        return StepResult(self.encode_observation(), float(reward), self.done, info)

    def _score(self) -> tuple[float, dict]:
        if self.config.reward_mode == "case1":
            return reward_case1_arrays(
                self._mdt_rsrp, self._mdt_sinr, self._weights, self._act_ue,
                self._serving_cell, self.target_cells, self.config.scheduler,
                self.config.cqi_table, self.config.cost_params)
        return reward_case2_arrays(self._mdt_rsrp, self._mdt_sinr, self._weights)

    def assignment_value(self, tilts_by_step_index: Mapping[int, int]) -> float:
        """Reward of (baseline + given target-cell tilt overrides).

        Keys are episode cell indices (positions in ``target_cells``), values
        tilt indices.  Evaluated under the current episode's traffic draw;
        episode state (tilts, history, step counter) is left untouched, so
        search code can price arbitrary configurations without rollouts.
        """
        if not self._started:
            raise RuntimeError("reset() must run before assignment_value()")
        saved = self._tilts
        tilts = self._baseline.copy()
        for ci, ti in tilts_by_step_index.items():
            if not (0 <= ci < self.episode_len and 0 <= ti < self.n_tilts):
                raise ValueError(f"assignment ({ci}, {ti}) out of range")
            tilts[self._target_pos[ci]] = ti
        try:
            self._tilts = tilts
            self._refresh_pixel_state()
            reward, _ = self._score()
            return float(reward)
        finally:
            self._tilts = saved
            self._refresh_pixel_state()

    def state_reward(self) -> float:
        """Reward of the current pixel state (no action, no penalty)."""
        return self._score()[0]

    # -- observations ------------------------------------------------------

    def _channel(self, values: np.ndarray, lo: float, hi: float) -> np.ndarray:
        grid = np.zeros(self.shape, dtype=np.float64)
        scaled = (np.clip(values, lo, hi) - lo) / (hi - lo)
        grid[self._yz[:, 0], self._yz[:, 1]] = scaled
        return grid

    def encode_observation(self) -> Observation:
        return Observation(
            rsrp_channel=self._channel(self._mdt_rsrp, *RSRP_BOUNDS_DBM),
            weight_channel=self._channel(self._weights, 0.0, self._w_max),
            sinr_channel=self._channel(self._mdt_sinr, *SINR_BOUNDS_DB),
            history=self._history.copy(),
        )

    # -- cloning for search baselines ---------------------------------------

    def snapshot(self) -> dict:
        """Copy of the mutable episode state (weights stay frozen per episode)."""
        return {
            "tilts": self._tilts.copy(),
            "history": self._history.copy(),
            "steps": self._steps,
            "weights": self._weights.copy(),
            "w_max": self._w_max,
            "act_ue": self._act_ue.copy(),
            "started": self._started,
        }

    def restore(self, snap: dict) -> None:
        self._tilts = snap["tilts"].copy()
        self._history = snap["history"].copy()
        self._steps = snap["steps"]
        self._weights = snap["weights"].copy()
        self._w_max = snap["w_max"]
        self._act_ue = snap["act_ue"].copy()
        self._started = snap["started"]
        self._refresh_pixel_state()
