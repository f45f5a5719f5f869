"""Behaviour of the two hand-built toy scenarios.

The deception scenario must punish one-step gregreedy search; the control
must not.  Both claims are verified against the exact optimum.
"""

import numpy as np
import pytest

from tiltlab import toys
from tiltlab.baselines import best_first_search, brute_force_optimum


class TestConstruction:

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown toy"):
            toys.make_env("chaos")

    def test_all_pixels_retained_with_flat_traffic(self):
        _, ds = toys.deception_scenario()
        assert len(ds.pixels) == 6 * 9
        assert ds.discarded_fraction == 0.0
        assert all(p.lam == toys.TOY_LAMBDA for p in ds.pixels.values())

    def test_deltas_are_exactly_zero(self):
        """Toy measurements equal the baseline simulation by construction."""
        for scenario in (toys.deception_scenario, toys.control_scenario):
            _, ds = scenario()
            for p in ds.pixels.values():
                assert p.delta_r == 0.0
                assert p.delta_s == 0.0

    def test_env_dimensions(self, deception_env):
        assert deception_env.episode_len == 3
        assert deception_env.n_tilts == 2
        assert deception_env.n_actions == 6
        assert deception_env.shape == (6, 9)


class TestDeceptionScenario:

    def test_lure_has_best_immediate_reward(self, deception_env):
        deception_env.reset(seed=0)
        snap = deception_env.snapshot()
        gains = []
        for flat in range(6):
            gains.append(deception_env.step(flat).reward)
            deception_env.restore(snap)
        assert int(np.argmax(gains)) == toys.DECEPTION_LURE_ACTION
        # the lure is clear of the runner-up by a wide margin
        rest = [g for i, g in enumerate(gains) if i != toys.DECEPTION_LURE_ACTION]
        assert gains[toys.DECEPTION_LURE_ACTION] > max(rest) + 5.0

    def test_greedy_takes_the_lure_and_loses(self, deception_env):
        bfs = best_first_search(deception_env, seed=0)
        orc = brute_force_optimum(deception_env, seed=0)
        assert bfs.actions[0] == toys.DECEPTION_LURE_ACTION
        assert bfs.total_reward < orc.total_reward - 10.0

    def test_oracle_leaves_the_trap_alone(self, deception_env):
        orc = brute_force_optimum(deception_env, seed=0)
        got = tuple(orc.tilt_assignment[c] for c in (0, 1, 2))
        assert got == toys.DECEPTION_ORACLE_ASSIGNMENT

    def test_gap_persists_across_traffic_draws(self, deception_env):
        for seed in range(10):
            bfs = best_first_search(deception_env, seed=seed)
            orc = brute_force_optimum(deception_env, seed=seed)
            assert bfs.total_reward < orc.total_reward


class TestControlScenario:

    def test_greedy_equals_oracle_bitwise(self, control_env):
        """No coupling, strictly ordered gains: both searches walk the same
        path, so the totals are the same float."""
        for seed in range(20):
            bfs = best_first_search(control_env, seed=seed)
            orc = brute_force_optimum(control_env, seed=seed)
            assert bfs.actions == orc.actions
            assert bfs.total_reward == orc.total_reward

    def test_oracle_enables_every_enhancement(self, control_env):
        orc = brute_force_optimum(control_env, seed=0)
        got = tuple(orc.tilt_assignment[c] for c in (0, 1, 2))
        assert got == toys.CONTROL_ORACLE_ASSIGNMENT

    def test_cells_are_mutually_invisible(self, control_env):
        """Changing one cell's tilt never moves another band's pixels."""
        control_env.reset(seed=0)
        before = control_env._mdt_sinr.copy()
        control_env.step(1)                      # cell 0 enhanced
        after = control_env._mdt_sinr
        moved = np.flatnonzero(~np.isclose(before, after, atol=1e-9))
        cols = control_env._yz[moved, 1]
        assert cols.max() < toys.BAND_COLS       # only band 0 moved


class TestStressMode:

    def test_d_range_environment(self):
        env = toys.make_env("deception", d_range=0.5)
        env.reset(seed=0)
        w = env._weights
        assert w.min() >= 0.0 and w.max() <= 1.0
        env2 = toys.make_env("deception")
        env2.reset(seed=0)
        assert not np.array_equal(w, env2._weights)
