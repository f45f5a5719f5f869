"""Link adaptation, scheduling, and the two reward definitions.

Coverage-cost reference points are recomputed with ``math.pow`` so the numpy
implementation is checked against an independent arithmetic route.
"""

import math

import numpy as np
import pytest

from tiltlab.reward import (
    CQI_TABLE_ROWS,
    PRB_BANDWIDTH_HZ,
    CoverageCostParams,
    CqiTable,
    SchedulerConfig,
    cell_spectral_efficiency,
    cell_user_throughput,
    cluster_throughput,
    coverage_cost,
    coverage_fraction,
    cqi_class,
    cqi_from_sinr,
    prbs_per_ue,
    reward_case1_arrays,
    reward_case2_arrays,
)


class TestCqiTable:
    def test_fifteen_rows_with_known_anchors(self):
        table = CqiTable.default()
        assert len(table.cqis) == 15
        assert table.cqis == tuple(range(1, 16))
        assert table.thresholds[0] == -6.4
        assert table.thresholds[-1] == 17.1
        assert table.efficiencies[0] == 0.1524
        assert table.efficiencies[-1] == 7.4064
        assert table.modulations[0] == "QPSK"
        assert table.modulations[-1] == "256QAM"

    def test_thresholds_and_efficiencies_increase(self):
        table = CqiTable.default()
        assert all(b > a for a, b in zip(table.thresholds, table.thresholds[1:]))
        assert all(b > a for a, b in zip(table.efficiencies, table.efficiencies[1:]))

    def test_lookup_below_table_is_outage(self):
        cqi, eff = cqi_from_sinr(-6.4000001)
        assert (cqi, eff) == (0, 0.0)

    def test_lookup_at_exact_threshold_reaches_the_row(self):
        for k, thr, _, _, eff in CQI_TABLE_ROWS:
            assert cqi_from_sinr(thr) == (k, eff)

    def test_lookup_just_below_next_threshold_keeps_the_row(self):
        for (k, _, _, _, eff), (_, nxt, _, _, _) in zip(CQI_TABLE_ROWS, CQI_TABLE_ROWS[1:]):
            assert cqi_from_sinr(nxt - 1e-9) == (k, eff)

    def test_lookup_above_table_saturates(self):
        assert cqi_from_sinr(55.0) == (15, 7.4064)

    def test_vectorized_lookup_matches_scalar(self, rng):
        table = CqiTable.default()
        sinr = rng.uniform(-12.0, 22.0, size=200)
        cqi, eff = table.lookup(sinr)
        for s, k, e in zip(sinr, cqi, eff):
            assert cqi_from_sinr(float(s)) == (int(k), float(e))

    def test_csv_roundtrip_matches_default(self, tmp_path):
        path = tmp_path / "cqi.csv"
        lines = ["cqi,sinr_threshold,modulation,code_rate,spectral_efficiency"]
        for row in CQI_TABLE_ROWS:
            lines.append(",".join(str(v) for v in row))
        path.write_text("\n".join(lines) + "\n")
        assert CqiTable.from_csv(path) == CqiTable.default()

    def test_non_monotone_table_rejected(self):
        with pytest.raises(ValueError, match="increasing"):
            CqiTable((1, 2), (0.0, -1.0), ("QPSK", "QPSK"), (0.1, 0.2), (0.1, 0.2))


class TestCoverage:
    def test_fraction_is_weighted(self):
        rsrp = np.array([-100.0, -130.0, -100.0])
        sinr = np.array([5.0, 5.0, 5.0])
        w = np.array([1.0, 1.0, 2.0])
        assert coverage_fraction(rsrp, sinr, w) == pytest.approx(75.0)

    def test_outage_limits_are_strict(self):
        # exactly at the limits still counts as covered
        rsrp = np.array([-125.0])
        sinr = np.array([-6.4])
        assert coverage_fraction(rsrp, sinr, np.array([1.0])) == 100.0
        assert coverage_fraction(rsrp - 1e-9, sinr, np.array([1.0])) == 0.0
        assert coverage_fraction(rsrp, sinr - 1e-9, np.array([1.0])) == 0.0

    def test_zero_weight_rejected(self):
        with pytest.raises(ValueError, match="weight"):
            coverage_fraction(np.array([-90.0]), np.array([1.0]), np.array([0.0]))


def reference_cost(a):
    """Piecewise cost recomputed with scalar math.pow."""
    if 99.5 <= a <= 100.0:
        return 0.0
    if 98.0 <= a < 99.5:
        g = math.pow(4.6, a - 101.1)
        return (1.0 - g) / (11.2 * g)
    return 10.0


class TestCoverageCost:
    def test_frozen_reference_points(self):
        assert coverage_cost(100.0) == 0.0
        assert coverage_cost(99.5) == 0.0
        assert coverage_cost(99.0) == pytest.approx(2.1114780353, abs=1e-6)
        assert coverage_cost(98.0) == pytest.approx(10.0342275340, abs=1e-6)
        assert coverage_cost(97.0) == 10.0
        assert coverage_cost(0.0) == 10.0

    def test_matches_scalar_reference_on_a_sweep(self):
        for a in np.arange(95.0, 100.0001, 0.01):
            assert coverage_cost(float(a)) == pytest.approx(reference_cost(float(a)),
                                                            abs=1e-12)

    def test_middle_branch_decreases_with_coverage(self):
        band = np.arange(98.0, 99.5, 0.01)
        costs = [coverage_cost(float(a)) for a in band]
        assert all(b < a for a, b in zip(costs, costs[1:]))

    def test_discontinuity_at_full_band_edge(self):
        # the branch form does not meet 0 at 99.5; the jump is by design
        g = math.pow(4.6, 99.5 - 101.1)
        below = (1.0 - g) / (11.2 * g)
        assert coverage_cost(99.5 - 1e-9) == pytest.approx(below, abs=1e-6)
        assert below > 0.9


class TestSchedulers:
    def test_round_robin_splits_evenly(self):
        cfg = SchedulerConfig(kind="round_robin")
        shares = prbs_per_ue(cfg, [3.0])
        assert shares[0] == pytest.approx(90.0 / 3.0)

    def test_fair_shares_follow_betas(self):
        cfg = SchedulerConfig(kind="fair", betas=(1.0, 2.0, 3.0))
        counts = (2.0, 1.0, 1.0)
        base = 90.0 / (1.0 * 2.0 + 2.0 * 1.0 + 3.0 * 1.0)
        shares = prbs_per_ue(cfg, counts)
        assert shares == pytest.approx([base, 2 * base, 3 * base])
        # granted PRBs never exceed the usable band
        assert float(np.dot(shares, counts)) == pytest.approx(90.0)

    def test_idle_cell_gets_the_whole_band(self):
        cfg = SchedulerConfig(kind="fair")
        assert np.all(prbs_per_ue(cfg, [0.0, 0.0, 0.0]) == 90.0)

    def test_thr_reserves_prbs(self):
        cfg = SchedulerConfig(kind="round_robin", n_prb_tot=50, thr=20)
        assert cfg.usable_prbs == 30.0

    def test_bad_configs_rejected(self):
        with pytest.raises(ValueError, match="kind"):
            SchedulerConfig(kind="weighted")
        with pytest.raises(ValueError, match="thr"):
            SchedulerConfig(thr=100)
        with pytest.raises(ValueError, match="increasing"):
            SchedulerConfig(betas=(2.0, 1.0))


class TestCqiClasses:
    def test_three_class_banding(self):
        # bands of the 0..15 range: [0,5] -> worst, [6,10] -> mid, [11,15] -> best
        cqi = np.arange(0, 16)
        classes = cqi_class(cqi, 3)
        assert list(classes[:6]) == [2] * 6
        assert list(classes[6:11]) == [1] * 5
        assert list(classes[11:]) == [0] * 5

    def test_single_class_collapses(self):
        assert np.all(cqi_class(np.arange(16), 1) == 0)


class TestThroughput:
    def test_weighted_cell_efficiency(self):
        eff = np.array([1.0, 3.0])
        w = np.array([1.0, 3.0])
        assert cell_spectral_efficiency(eff, w) == pytest.approx(2.5)

    def test_zero_weight_cell_rejected(self):
        with pytest.raises(ValueError, match="zero total weight"):
            cell_spectral_efficiency(np.array([1.0]), np.array([0.0]))

    def test_user_throughput_formula(self):
        assert cell_user_throughput(2.0, 45.0) == pytest.approx(2.0 * 45.0 * PRB_BANDWIDTH_HZ)

    def test_cluster_mean_is_ue_weighted(self):
        per_cell = [(2.0, 10e6), (6.0, 2e6)]
        expect = (2.0 * 10e6 + 6.0 * 2e6) / 8.0
        assert cluster_throughput(per_cell) == pytest.approx(expect)

    def test_cluster_with_no_ues_rejected(self):
        with pytest.raises(ValueError, match="active UEs"):
            cluster_throughput([(0.0, 1e6)])


class TestCaseOneReward:
    def test_single_cell_single_class_hand_value(self):
        """One target cell, all pixels in the same CQI class.

        With every UE in one class the fair scheduler reduces to an even
        split of the usable band, so the whole reward can be written down
        in closed form.
        """
        sinr = np.array([18.0, 18.5, 19.0])        # all CQI 15
        rsrp = np.full(3, -90.0)
        w = np.array([1.0, 2.0, 1.0])
        act_ue = np.array([2.0, 4.0, 2.0])
        serving = np.zeros(3, dtype=np.int64)
        sched = SchedulerConfig(kind="fair", betas=(1.0, 2.0, 3.0))
        value, info = reward_case1_arrays(rsrp, sinr, w, act_ue, serving, [0], sched)
        eta = 7.4064                                # CQI 15 everywhere
        share = 90.0 / 8.0                          # 8 UEs, all best class
        expect_mbps = eta * share * PRB_BANDWIDTH_HZ / 1e6
        assert info["coverage_pct"] == 100.0
        assert info["coverage_cost"] == 0.0
        assert value == pytest.approx(expect_mbps, rel=1e-12)

    def test_outage_pixels_pull_coverage_cost(self):
        sinr = np.array([18.0] * 97 + [-8.0] * 3)   # 97 % coverage
        rsrp = np.full(100, -90.0)
        w = np.ones(100)
        act_ue = np.ones(100)
        serving = np.zeros(100, dtype=np.int64)
        value, info = reward_case1_arrays(rsrp, sinr, w, act_ue, serving, [0])
        assert info["coverage_pct"] == pytest.approx(97.0)
        assert info["coverage_cost"] == 10.0
        assert value == pytest.approx(info["throughput_mbps"] - 10.0)

    def test_boundary_cells_carry_coverage_but_not_throughput(self):
        """Pixels served by non-target cells count only in coverage."""
        sinr = np.array([18.0, -8.0])
        rsrp = np.array([-90.0, -90.0])
        w = np.array([1.0, 1.0])
        act_ue = np.array([1.0, 1.0])
        serving = np.array([0, 7])                  # cell 7 is not a target
        value, info = reward_case1_arrays(rsrp, sinr, w, act_ue, serving, [0])
        assert info["coverage_pct"] == pytest.approx(50.0)   # the outage pixel counts
        # throughput reflects only cell 0's single-UE full-band share
        eta = 7.4064
        expect_mbps = eta * 90.0 * PRB_BANDWIDTH_HZ / 1e6
        assert info["throughput_mbps"] == pytest.approx(expect_mbps, rel=1e-12)


class TestCaseTwoReward:
    def test_weighted_mean_hand_value(self):
        rsrp = np.array([-80.0, -100.0])
        sinr = np.array([10.0, -5.0])
        w = np.array([3.0, 1.0])
        expect = (3.0 * (-70.0) + 1.0 * (-105.0)) / 4.0
        value, info = reward_case2_arrays(rsrp, sinr, w)
        assert value == pytest.approx(expect, rel=1e-12)
        assert info["mean_rsrp_plus_sinr"] == value

    def test_zero_weight_rejected(self):
        with pytest.raises(ValueError, match="zero total weight"):
            reward_case2_arrays(np.array([-90.0]), np.array([0.0]), np.array([0.0]))
