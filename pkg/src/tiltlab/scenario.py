"""Synthetic radio scenario: per-cell, per-tilt RSRP grids over a pixel map.

A scenario is a small cluster of three-sector sites on a rectangular pixel
grid.  For every cell and every candidate downtilt the module precomputes the
reference-signal received power (RSRP, dBm) at each pixel center:

    RSRP = tx_power - PL(d) + G_ant(theta, phi; tilt) + S(site, pixel)

with log-distance path loss referenced at 1 km,

    PL(d) = pl_ref_db + 10 * pl_exponent * log10(d / 1000 m)

a parabolic main-lobe antenna pattern attenuating quadratic deviations from
the electrical boresight in both planes,

    A(theta, phi) = min(12 * ((theta - tilt) / theta3db_v)^2
                        + 12 * (dphi / theta3db_h)^2, att_max_db)

and a log-normal shadowing field S drawn once per (site, pixel) pair from the
scenario seed.  Tilt only moves the vertical boresight; the horizontal term
and the shadowing draw are tilt-independent, so the P grids of one cell
differ exclusively through the vertical pattern.

Grids are plain float64 arrays and can be cached to a small binary format
(fixed header plus row-major payload) that round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

# Reference distance of the path-loss model (the "1 km" in 128.1 + 37.6 log10 d).
REF_DISTANCE_M = 1000.0

_GRID_MAGIC = b"TLGR"
_GRID_VERSION = 1


@dataclass
class ScenarioConfig:
    """Static description of one cluster.

    ``sites`` are (x, y) positions in meters inside the pixel map; every site
    carries ``sectors_per_site`` cells whose boresight azimuths are
    ``azimuths_deg``.  Cell ids are ``site_index * sectors_per_site +
    sector_index``.  ``target_cells`` are the cells the optimizer may touch;
    ``boundary_cells`` keep ``boundary_tilt_index`` for the whole run but
    still radiate (interference and coverage are computed with them).
    """

    sites: tuple[tuple[float, float], ...]
    sectors_per_site: int
    azimuths_deg: tuple[float, ...]
    target_cells: tuple[int, ...]
    boundary_cells: tuple[int, ...]
    tilt_set_deg: tuple[float, ...]
    grid: tuple[int, int]                 # (Y, Z) pixel counts
    pixel_size_m: float = 50.0
    tx_power_dbm: float = 15.0            # per resource element
    carrier_mhz: float = 1800.0
    shadowing_sigma_db: float = 6.0
    seed: int = 0
    site_height_m: float = 25.0
    pl_ref_db: float = 128.1
    pl_exponent: float = 3.76
    theta3db_v_deg: float = 10.0
    theta3db_h_deg: float = 65.0
    att_max_db: float = 20.0
    boundary_tilt_index: int = 0

    def __post_init__(self) -> None:
        self.sites = tuple((float(x), float(y)) for x, y in self.sites)
        self.azimuths_deg = tuple(float(a) for a in self.azimuths_deg)
        self.target_cells = tuple(int(c) for c in self.target_cells)
        self.boundary_cells = tuple(int(c) for c in self.boundary_cells)
        self.tilt_set_deg = tuple(float(t) for t in self.tilt_set_deg)
        self.grid = (int(self.grid[0]), int(self.grid[1]))
        if not self.sites:
            raise ValueError("at least one site is required")
        if self.sectors_per_site < 1:
            raise ValueError("sectors_per_site must be >= 1")
        if len(self.azimuths_deg) != self.sectors_per_site:
            raise ValueError("need one azimuth per sector")
        if len(self.target_cells) < 1:
            raise ValueError("need at least one target cell")
        if len(self.tilt_set_deg) < 2:
            raise ValueError("need at least two candidate tilts")
        if len(set(self.tilt_set_deg)) != len(self.tilt_set_deg):
            raise ValueError("tilt values must be distinct")
        if set(self.target_cells) & set(self.boundary_cells):
            raise ValueError("target and boundary cells must be disjoint")
        n = self.n_cells
        for c in self.target_cells + self.boundary_cells:
            if not 0 <= c < n:
                raise ValueError(f"cell id {c} outside [0, {n})")
        if self.grid[0] < 1 or self.grid[1] < 1:
            raise ValueError("grid must have positive extent")
        if self.pixel_size_m <= 0:
            raise ValueError("pixel_size_m must be positive")
        if self.shadowing_sigma_db < 0:
            raise ValueError("shadowing_sigma_db must be >= 0")
        if not 0 <= self.boundary_tilt_index < len(self.tilt_set_deg):
            raise ValueError("boundary_tilt_index outside tilt set")

    @property
    def n_cells(self) -> int:
        return len(self.sites) * self.sectors_per_site

    @property
    def n_tilts(self) -> int:
        return len(self.tilt_set_deg)

    @property
    def modelled_cells(self) -> tuple[int, ...]:
        """Target plus boundary cells, ascending; only these get grids."""
        return tuple(sorted(set(self.target_cells) | set(self.boundary_cells)))

    def cell_site(self, cell_id: int) -> int:
        return cell_id // self.sectors_per_site

    def cell_azimuth_deg(self, cell_id: int) -> float:
        return self.azimuths_deg[cell_id % self.sectors_per_site]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown scenario fields: {sorted(extra)}")
        kw = dict(d)
        kw["sites"] = tuple(tuple(p) for p in kw["sites"])
        for key in ("azimuths_deg", "target_cells", "boundary_cells", "tilt_set_deg", "grid"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)


def scenario_from_file(path: str | Path) -> ScenarioConfig:
    """Load a ScenarioConfig from a TOML or JSON file (by extension)."""
    path = Path(path)
    if path.suffix == ".toml":
        try:
            import tomllib  # type: ignore[import-not-found]
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    elif path.suffix == ".json":
        with open(path) as fh:
            raw = json.load(fh)
    else:
        raise ValueError(f"unsupported config extension: {path.suffix}")
    if "scenario" in raw:
        raw = raw["scenario"]
    return ScenarioConfig.from_dict(raw)


@dataclass
class RsrpGridSet:
    """Precomputed RSRP maps: one (Y, Z) grid per (cell, tilt index).

    ``rsrp[i, p]`` is the grid of ``cell_ids[i]`` at tilt index ``p``.
    ``clamped_pixels`` counts (site, pixel, tilt) entries whose distance was
    clamped to the 1 km path-loss reference because it was exactly zero.
    """

    cell_ids: tuple[int, ...]
    tilt_set_deg: tuple[float, ...]
    rsrp: np.ndarray                      # (n_cells, P, Y, Z) float64
    clamped_pixels: int = 0
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.cell_ids = tuple(int(c) for c in self.cell_ids)
        self.tilt_set_deg = tuple(float(t) for t in self.tilt_set_deg)
        self.rsrp = np.asarray(self.rsrp, dtype=np.float64)
        n, p = len(self.cell_ids), len(self.tilt_set_deg)
        if self.rsrp.shape[:2] != (n, p):
            raise ValueError(f"rsrp shape {self.rsrp.shape} != ({n}, {p}, Y, Z)")
        if not np.all(np.isfinite(self.rsrp)):
            raise ValueError("RSRP grids contain non-finite values")
        self._index = {c: i for i, c in enumerate(self.cell_ids)}

    @property
    def shape(self) -> tuple[int, int]:
        return self.rsrp.shape[2], self.rsrp.shape[3]

    def index_of(self, cell_id: int) -> int:
        return self._index[cell_id]

    def grid(self, cell_id: int, tilt_index: int) -> np.ndarray:
        return self.rsrp[self._index[cell_id], tilt_index]


def _wrap_deg(angle: np.ndarray) -> np.ndarray:
    """Wrap angles to (-180, 180]."""
    return 180.0 - np.mod(180.0 - angle, 360.0)


def generate_grids(config: ScenarioConfig) -> RsrpGridSet:
    """Compute the RSRP grid of every modelled cell at every candidate tilt."""
    y_n, z_n = config.grid
    s = config.pixel_size_m
    # pixel centers
    px = (np.arange(y_n, dtype=np.float64)[:, None] + 0.5) * s * np.ones((1, z_n))
    py = np.ones((y_n, 1)) * (np.arange(z_n, dtype=np.float64)[None, :] + 0.5) * s

    rng = np.random.default_rng(config.seed)
    # frozen per-(site, pixel) log-normal shadowing, shared by sectors and tilts
    shadow = rng.normal(0.0, config.shadowing_sigma_db, size=(len(config.sites), y_n, z_n))

    cells = config.modelled_cells
    tilts = np.asarray(config.tilt_set_deg)
    out = np.empty((len(cells), len(tilts), y_n, z_n), dtype=np.float64)
    clamped = 0
    for i, cell in enumerate(cells):
        site = config.cell_site(cell)
        sx, sy = config.sites[site]
        dx = px - sx
        dy = py - sy
        d2d = np.hypot(dx, dy)
        d3d = np.hypot(d2d, config.site_height_m)
        zero = d3d == 0.0
        if np.any(zero):
            d3d = np.where(zero, REF_DISTANCE_M, d3d)
        pl = config.pl_ref_db + 10.0 * config.pl_exponent * np.log10(d3d / REF_DISTANCE_M)
        # elevation of the pixel seen from the antenna, negative below horizon
        theta = np.degrees(np.arctan2(-config.site_height_m, d2d))
        dphi = _wrap_deg(np.degrees(np.arctan2(dy, dx)) - config.cell_azimuth_deg(cell))
        a_h = 12.0 * (dphi / config.theta3db_h_deg) ** 2
        for p, tilt in enumerate(tilts):
            a_v = 12.0 * ((theta - tilt) / config.theta3db_v_deg) ** 2
            att = np.minimum(a_v + a_h, config.att_max_db)
            rsrp = config.tx_power_dbm - pl - att + shadow[site]
            out[i, p] = np.minimum(rsrp, config.tx_power_dbm)
            clamped += int(np.count_nonzero(zero))
    return RsrpGridSet(cells, config.tilt_set_deg, out, clamped)


def serving_cell_map(grids: RsrpGridSet, tilt_by_cell: Mapping[int, int]) -> np.ndarray:
    """Max-RSRP server per pixel under the given tilt assignment.

    ``tilt_by_cell`` must name a tilt index for every cell in ``grids``.
    Ties go to the lowest cell id.  Returns a (Y, Z) int array of cell ids.
    """
    missing = set(grids.cell_ids) - set(tilt_by_cell)
    if missing:
        raise ValueError(f"no tilt assigned for cells {sorted(missing)}")
    stack = np.stack([grids.grid(c, int(tilt_by_cell[c])) for c in grids.cell_ids])
    best = np.argmax(stack, axis=0)     # first (lowest) index wins ties
    return np.asarray(grids.cell_ids, dtype=np.int64)[best]


def save_grids(grids: RsrpGridSet, path: str | Path) -> None:
    """Write the grid set to the binary cache format."""
    n, p, y, z = grids.rsrp.shape
    with open(path, "wb") as fh:
        fh.write(_GRID_MAGIC)
        fh.write(struct.pack("<5I", _GRID_VERSION, n, p, y, z))
        fh.write(np.asarray(grids.cell_ids, dtype="<i4").tobytes())
        fh.write(np.asarray(grids.tilt_set_deg, dtype="<f8").tobytes())
        fh.write(struct.pack("<q", grids.clamped_pixels))
        fh.write(np.ascontiguousarray(grids.rsrp, dtype="<f8").tobytes())


def load_grids(path: str | Path) -> RsrpGridSet:
    """Read a grid set written by :func:`save_grids` (bit-exact round trip)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _GRID_MAGIC:
            raise ValueError(f"not a grid cache file (magic {magic!r})")
        version, n, p, y, z = struct.unpack("<5I", fh.read(20))
        if version != _GRID_VERSION:
            raise ValueError(f"unsupported grid cache version {version}")
        cell_ids = np.frombuffer(fh.read(4 * n), dtype="<i4")
        tilt_set = np.frombuffer(fh.read(8 * p), dtype="<f8")
        (clamped,) = struct.unpack("<q", fh.read(8))
        data = np.frombuffer(fh.read(8 * n * p * y * z), dtype="<f8")
        if data.size != n * p * y * z:
            raise ValueError("truncated grid cache file")
        rsrp = data.reshape(n, p, y, z).copy()
    return RsrpGridSet(tuple(int(c) for c in cell_ids), tuple(float(t) for t in tilt_set),
                       rsrp, int(clamped))
