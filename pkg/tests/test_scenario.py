"""Radio-map generation: path loss, antenna pattern, shadowing, caching.

The reference values are recomputed in the tests with scalar ``math`` calls
so a regression in the vectorized implementation cannot hide behind its own
arithmetic.
"""

import math

import numpy as np
import pytest

from tiltlab.scenario import (
    REF_DISTANCE_M,
    RsrpGridSet,
    ScenarioConfig,
    generate_grids,
    load_grids,
    save_grids,
    scenario_from_file,
    serving_cell_map,
)


def one_cell_config(**kw):
    base = dict(
        sites=[(275.0, 275.0)],
        sectors_per_site=1,
        azimuths_deg=[0.0],
        target_cells=[0],
        boundary_cells=[],
        tilt_set_deg=[0.0, -6.0],
        grid=[11, 11],
        pixel_size_m=50.0,
        tx_power_dbm=15.0,
        shadowing_sigma_db=0.0,
        seed=7,
        site_height_m=45.0,
        theta3db_v_deg=6.2,
        theta3db_h_deg=65.0,
    )
    base.update(kw)
    return ScenarioConfig(**base)


def scalar_rsrp(cfg, cell, tilt_deg, pixel_y, pixel_z, shadow_db=0.0):
    """Straight-line reimplementation of the radio model for one pixel."""
    sx, sy = cfg.sites[cfg.cell_site(cell)]
    px = (pixel_y + 0.5) * cfg.pixel_size_m
    py = (pixel_z + 0.5) * cfg.pixel_size_m
    d2d = math.hypot(px - sx, py - sy)
    d3d = math.hypot(d2d, cfg.site_height_m)
    if d3d == 0.0:
        d3d = REF_DISTANCE_M
    pl = cfg.pl_ref_db + 10.0 * cfg.pl_exponent * math.log10(d3d / REF_DISTANCE_M)
    theta = math.degrees(math.atan2(-cfg.site_height_m, d2d))
    dphi = math.degrees(math.atan2(py - sy, px - sx)) - cfg.cell_azimuth_deg(cell)
    dphi = 180.0 - math.fmod(180.0 - dphi, 360.0)
    if dphi > 180.0:
        dphi -= 360.0
    att = min(12.0 * ((theta - tilt_deg) / cfg.theta3db_v_deg) ** 2
              + 12.0 * (dphi / cfg.theta3db_h_deg) ** 2, cfg.att_max_db)
    return min(cfg.tx_power_dbm - pl - att + shadow_db, cfg.tx_power_dbm)


class TestRadioModel:
    def test_grid_matches_scalar_model_everywhere(self):
        """Vectorized grids equal the per-pixel scalar recomputation."""
        cfg = one_cell_config()
        grids = generate_grids(cfg)
        for p, tilt in enumerate(cfg.tilt_set_deg):
            for y in range(cfg.grid[0]):
                for z in range(cfg.grid[1]):
                    expect = scalar_rsrp(cfg, 0, tilt, y, z)
                    assert grids.rsrp[0, p, y, z] == pytest.approx(expect, abs=1e-12)

    def test_pathloss_at_reference_distance(self):
        # pixel (5,5) center is the site position, so d3d is the mast height
        cfg = one_cell_config()
        d3d = cfg.site_height_m
        pl = 128.1 + 37.6 * math.log10(d3d / 1000.0)
        # straight down: the pattern is fully off-boresight, attenuation caps
        expect = cfg.tx_power_dbm - pl - cfg.att_max_db
        assert generate_grids(cfg).rsrp[0, 0, 5, 5] == pytest.approx(expect, abs=1e-12)

    def test_tilt_changes_only_the_vertical_term(self):
        """grid(t0) - grid(t1) must equal the capped-pattern difference."""
        cfg = one_cell_config(shadowing_sigma_db=5.0)
        grids = generate_grids(cfg)
        diff = grids.rsrp[0, 0] - grids.rsrp[0, 1]
        for y in range(cfg.grid[0]):
            for z in range(cfg.grid[1]):
                a = scalar_rsrp(cfg, 0, cfg.tilt_set_deg[0], y, z)
                b = scalar_rsrp(cfg, 0, cfg.tilt_set_deg[1], y, z)
                assert diff[y, z] == pytest.approx(a - b, abs=1e-9)

    def test_sectors_share_the_site_shadowing(self):
        """Same-site sectors differ only through the horizontal pattern."""
        cfg = one_cell_config(sectors_per_site=2, azimuths_deg=[0.0, 90.0],
                              target_cells=[0, 1], shadowing_sigma_db=8.0)
        grids = generate_grids(cfg)
        diff = grids.rsrp[0, 0] - grids.rsrp[1, 0]
        for y in range(0, cfg.grid[0], 3):
            for z in range(0, cfg.grid[1], 3):
                a = scalar_rsrp(cfg, 0, cfg.tilt_set_deg[0], y, z)
                b = scalar_rsrp(cfg, 1, cfg.tilt_set_deg[0], y, z)
                assert diff[y, z] == pytest.approx(a - b, abs=1e-9)

    def test_rsrp_clipped_at_tx_power(self):
        # enormous shadowing guarantees some pixels would exceed the
        # conducted power without the clip
        cfg = one_cell_config(shadowing_sigma_db=60.0, seed=3)
        grids = generate_grids(cfg)
        assert grids.rsrp.max() <= cfg.tx_power_dbm
        assert np.any(grids.rsrp == cfg.tx_power_dbm)

    def test_zero_distance_clamped_to_reference(self):
        cfg = one_cell_config(site_height_m=0.0)
        grids = generate_grids(cfg)
        # one degenerate pixel per tilt
        assert grids.clamped_pixels == len(cfg.tilt_set_deg)
        pl_ref = cfg.pl_ref_db          # log10(1) term vanishes
        att = min(12.0 * (0.0 / cfg.theta3db_v_deg) ** 2, cfg.att_max_db)
        expect = cfg.tx_power_dbm - pl_ref - att
        assert grids.rsrp[0, 0, 5, 5] == pytest.approx(expect, abs=1e-12)

    def test_shadowing_is_deterministic_in_seed(self):
        cfg = one_cell_config(shadowing_sigma_db=6.0)
        a = generate_grids(cfg)
        b = generate_grids(cfg)
        assert np.array_equal(a.rsrp, b.rsrp)
        c = generate_grids(one_cell_config(shadowing_sigma_db=6.0, seed=8))
        assert not np.array_equal(a.rsrp, c.rsrp)


class TestServingMap:
    def test_ties_go_to_the_lowest_cell_id(self):
        rsrp = np.zeros((2, 1, 3, 3))
        grids = RsrpGridSet((4, 9), (0.0,), rsrp)
        assert np.all(serving_cell_map(grids, {4: 0, 9: 0}) == 4)

    def test_missing_assignment_raises(self):
        rsrp = np.zeros((2, 1, 3, 3))
        grids = RsrpGridSet((0, 1), (0.0,), rsrp)
        with pytest.raises(ValueError, match="no tilt assigned"):
            serving_cell_map(grids, {0: 0})

    def test_strongest_cell_serves(self):
        rsrp = np.zeros((2, 1, 2, 2))
        rsrp[1, 0, 0, 0] = 5.0
        rsrp[0, 0, 1, 1] = 3.0
        grids = RsrpGridSet((0, 1), (0.0,), rsrp)
        served = serving_cell_map(grids, {0: 0, 1: 0})
        assert served[0, 0] == 1
        assert served[1, 1] == 0


class TestGridCache:
    def test_roundtrip_is_bit_exact(self, tmp_path, rng):
        rsrp = rng.normal(-100.0, 10.0, size=(3, 2, 6, 5))
        grids = RsrpGridSet((0, 2, 5), (0.0, -4.0), rsrp, clamped_pixels=3)
        path = tmp_path / "grids.tlgr"
        save_grids(grids, path)
        back = load_grids(path)
        assert back.cell_ids == grids.cell_ids
        assert back.tilt_set_deg == grids.tilt_set_deg
        assert back.clamped_pixels == 3
        assert np.array_equal(back.rsrp, grids.rsrp)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.tlgr"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError, match="magic"):
            load_grids(path)

    def test_non_finite_grids_rejected(self):
        rsrp = np.zeros((1, 1, 3, 3))
        rsrp[0, 0, 1, 1] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            RsrpGridSet((0,), (0.0,), rsrp)


class TestScenarioConfig:
    def test_duplicate_tilts_rejected(self):
        with pytest.raises(ValueError, match="distinct"):
            one_cell_config(tilt_set_deg=[0.0, 0.0])

    def test_azimuth_count_must_match_sectors(self):
        with pytest.raises(ValueError, match="azimuth"):
            one_cell_config(sectors_per_site=2)

    def test_target_boundary_overlap_rejected(self):
        with pytest.raises(ValueError, match="disjoint"):
            one_cell_config(boundary_cells=[0])

    def test_boundary_tilt_index_range(self):
        with pytest.raises(ValueError, match="boundary_tilt_index"):
            one_cell_config(boundary_tilt_index=2)

    def test_cell_id_layout(self):
        cfg = one_cell_config(sites=[(100.0, 100.0), (400.0, 400.0)],
                              sectors_per_site=2, azimuths_deg=[10.0, 200.0],
                              target_cells=[0, 3])
        assert cfg.n_cells == 4
        assert cfg.cell_site(3) == 1
        assert cfg.cell_azimuth_deg(3) == 200.0
        assert cfg.modelled_cells == (0, 3)

    def test_dict_roundtrip(self):
        cfg = one_cell_config()
        assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_field_rejected(self):
        d = one_cell_config().to_dict()
        d["bogus"] = 1
        with pytest.raises(ValueError, match="unknown scenario fields"):
            ScenarioConfig.from_dict(d)


class TestScenarioFromFile:
    def test_json_with_section_wrapper(self, tmp_path):
        import json
        cfg = one_cell_config()
        path = tmp_path / "scen.json"
        path.write_text(json.dumps({"scenario": cfg.to_dict()}))
        assert scenario_from_file(path) == cfg

    def test_toml(self, tmp_path):
        path = tmp_path / "scen.toml"
        path.write_text(
            "sites = [[275.0, 275.0]]\n"
            "sectors_per_site = 1\n"
            "azimuths_deg = [0.0]\n"
            "target_cells = [0]\n"
            "boundary_cells = []\n"
            "tilt_set_deg = [0.0, -6.0]\n"
            "grid = [11, 11]\n"
        )
        cfg = scenario_from_file(path)
        assert cfg.sites == ((275.0, 275.0),)
        assert cfg.n_tilts == 2

    def test_unsupported_extension(self, tmp_path):
        path = tmp_path / "scen.yaml"
        path.write_text("sites: []")
        with pytest.raises(ValueError, match="extension"):
            scenario_from_file(path)
