"""Synthetic two-epoch landscapes with a known deforestation hazard.

Forest and terrain are box-smoothed white noise; urban areas are small discs
grown from seeds placed on non-forest cells. Between epochs each forest pixel
is cleared independently with probability

    sigmoid(intercept + a_cover * cover + b_dist * dist + c_elev * elev)

where the three features are min-max scaled over the valid pixels.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .features import FeatureStack, distance_to_class, forest_cover_index, stack_features
from .mlp import sigmoid
from .raster import CellClass, Grid, GridHeader, assert_aligned, save_grid

# land-cover codes written by the generator
FOREST_CODE = 1
OTHER_CODE = 2
URBAN_CODE = 3


@dataclass
class ScenarioConfig:
    nrows: int = 128
    ncols: int = 128
    cellsize: float = 30.0
    forest_fraction: float = 0.6
    n_urban_seeds: int = 6
    urban_radius: int = 2
    forest_smoothing: int = 9
    dem_smoothing: int = 25
    dem_roughness: float = 0.2
    dem_min: float = 80.0
    dem_max: float = 943.0
    window: int = 3
    a_cover: float = -1.0
    b_dist: float = -20.0
    c_elev: float = -1.0
    intercept: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.nrows < 16 or self.ncols < 16:
            raise ValueError(f"scenario must be at least 16x16, got {self.nrows}x{self.ncols}")
        if not 0.0 < self.forest_fraction < 1.0:
            raise ValueError("forest_fraction must be in (0, 1)")
        if self.n_urban_seeds < 0 or self.urban_radius < 0:
            raise ValueError("n_urban_seeds and urban_radius must be non-negative")
        if not 0.0 <= self.dem_roughness <= 1.0:
            raise ValueError("dem_roughness must be in [0, 1]")
        if not self.dem_max > self.dem_min:
            raise ValueError("dem_max must exceed dem_min")
        if not self.cellsize > 0:
            raise ValueError("cellsize must be positive")

    @property
    def header(self) -> GridHeader:
        return GridHeader(self.ncols, self.nrows, 0.0, 0.0, self.cellsize)

    @property
    def coefficients(self) -> dict:
        return {
            "intercept": self.intercept,
            "a_cover": self.a_cover,
            "b_dist": self.b_dist,
            "c_elev": self.c_elev,
        }


def _rngs(seed: int) -> list[np.random.Generator]:
    # separate streams so changing one stage never shifts another's draws
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


def _smooth_noise(rng: np.random.Generator, shape, size: int) -> np.ndarray:
    return uniform_filter(rng.standard_normal(shape), size=max(1, size), mode="reflect")


def generate_landscape(cfg: ScenarioConfig) -> tuple[Grid, Grid, Grid]:
    """Return ``(forest_mask_t0, urban_mask, dem)``.

    The forest mask uses 0 = forest, 1 = non-forest; the urban mask uses
    1 = urban, 0 = not urban.
    """
    forest_rng, urban_rng, dem_rng, _ = _rngs(cfg.seed)
    shape = (cfg.nrows, cfg.ncols)

    field = _smooth_noise(forest_rng, shape, cfg.forest_smoothing)
    cut = np.quantile(field, 1.0 - cfg.forest_fraction)
    forest = field > cut

    candidates = np.flatnonzero(~forest)
    if cfg.n_urban_seeds > len(candidates):
        raise ValueError(
            f"cannot place {cfg.n_urban_seeds} urban seeds on {len(candidates)} non-forest cells"
        )
    seeds = urban_rng.choice(candidates, size=cfg.n_urban_seeds, replace=False)
    urban = np.zeros(shape, dtype=bool)
    rr, cc = np.mgrid[: cfg.nrows, : cfg.ncols]
    for r, c in zip(*np.unravel_index(np.sort(seeds), shape)):
        urban |= (rr - r) ** 2 + (cc - c) ** 2 <= cfg.urban_radius**2
    urban &= ~forest

    smooth = _smooth_noise(dem_rng, shape, cfg.dem_smoothing)
    rough = _smooth_noise(dem_rng, shape, 3)
    smooth = (smooth - smooth.mean()) / smooth.std()
    rough = (rough - rough.mean()) / rough.std()
    z = (1.0 - cfg.dem_roughness) * smooth + cfg.dem_roughness * rough
    z = (z - z.min()) / (z.max() - z.min())
    dem = cfg.dem_min + z * (cfg.dem_max - cfg.dem_min)

    header = cfg.header
    mask = np.where(forest, float(CellClass.FOREST), float(CellClass.NON_FOREST))
    return Grid(header, mask), Grid(header, urban.astype(np.float64)), Grid(header, dem)


def scenario_features(forest_mask: Grid, urban_mask: Grid, dem: Grid, window: int = 3) -> FeatureStack:
    return stack_features(
        forest_cover_index(forest_mask, window), distance_to_class(urban_mask, 1), dem
    )


def _minmax(layer: Grid) -> np.ndarray:
    v = layer.cells
    lo, hi = v[layer.valid].min(), v[layer.valid].max()
    return (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)


def hazard(features: FeatureStack, cfg: ScenarioConfig) -> np.ndarray:
    """True per-pixel clearing probability (NaN where any feature is NoData)."""
    cover, dist, elev = (_minmax(g) for g in features.layers)
    z = cfg.intercept + cfg.a_cover * cover + cfg.b_dist * dist + cfg.c_elev * elev
    p = sigmoid(z)
    return np.where(features.valid, p, np.nan)


def simulate_step(mask_t0: Grid, features: FeatureStack, cfg: ScenarioConfig, seed: int | None = None) -> Grid:
    """Clear each forest pixel independently with the hazard probability.

    ``seed`` defaults to the scenario seed; pass another one for a fresh
    realisation of the same transition.
    """
    assert_aligned([mask_t0, *features.layers])
    rng = _rngs(cfg.seed)[3] if seed is None else np.random.default_rng(seed)
    p = hazard(features, cfg)
    u = rng.random(mask_t0.shape)
    forest = mask_t0.valid & (mask_t0.cells == CellClass.FOREST)
    cleared = forest & features.valid & (u < np.nan_to_num(p))
    cells = mask_t0.cells.copy()
    cells[cleared] = float(CellClass.NON_FOREST)
    return Grid(mask_t0.header, cells)


def landcover(forest_mask: Grid, urban_mask: Grid) -> Grid:
    """Three-class land cover: forest 1, other 2, urban 3."""
    cells = np.full(forest_mask.shape, float(OTHER_CODE))
    cells[forest_mask.cells == CellClass.FOREST] = FOREST_CODE
    cells[urban_mask.cells == 1] = URBAN_CODE
    cells[~forest_mask.valid] = forest_mask.nodata
    return Grid(forest_mask.header, cells)


@dataclass
class Scenario:
    config: ScenarioConfig
    forest_t0: Grid
    forest_t1: Grid
    urban: Grid
    dem: Grid
    features: FeatureStack

    @property
    def landcover_t0(self) -> Grid:
        return landcover(self.forest_t0, self.urban)

    @property
    def landcover_t1(self) -> Grid:
        return landcover(self.forest_t1, self.urban)


def make_scenario(cfg: ScenarioConfig) -> Scenario:
    forest_t0, urban, dem = generate_landscape(cfg)
    feats = scenario_features(forest_t0, urban, dem, cfg.window)
    forest_t1 = simulate_step(forest_t0, feats, cfg)
    return Scenario(cfg, forest_t0, forest_t1, urban, dem, feats)


CONFIG_TEMPLATE = """\
# written by `deforest synth`
seed = {seed}

[inputs]
landcover_t0 = "landcover_t0.asc"
landcover_t1 = "landcover_t1.asc"
dem = "dem.asc"

[classes]
forest = [{forest}]
urban = [{urban}]

[features]
window = {window}
"""


def write_scenario(scenario: Scenario, out_dir: str | os.PathLike) -> dict[str, str]:
    """Write grids, a manifest of the true hazard and a ready-to-run pipeline config."""
    os.makedirs(out_dir, exist_ok=True)
    cfg = scenario.config
    grids = {
        "forest_t0": scenario.forest_t0,
        "forest_t1": scenario.forest_t1,
        "urban": scenario.urban,
        "dem": scenario.dem,
        "landcover_t0": scenario.landcover_t0,
        "landcover_t1": scenario.landcover_t1,
    }
    paths = {}
    for name, grid in grids.items():
        paths[name] = os.path.join(out_dir, f"{name}.asc")
        save_grid(grid, paths[name])

    forest0 = scenario.forest_t0.cells == CellClass.FOREST
    cleared = forest0 & (scenario.forest_t1.cells == CellClass.NON_FOREST)
    manifest = {
        "scenario": asdict(cfg),
        "coefficients": cfg.coefficients,
        "feature_order": list(scenario.features.names),
        "landcover_codes": {"forest": FOREST_CODE, "other": OTHER_CODE, "urban": URBAN_CODE},
        "forest_pixels_t0": int(forest0.sum()),
        "cleared_pixels": int(cleared.sum()),
        "files": {k: os.path.basename(v) for k, v in paths.items()},
    }
    paths["manifest"] = os.path.join(out_dir, "manifest.json")
    with open(paths["manifest"], "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths["config"] = os.path.join(out_dir, "config.toml")
    with open(paths["config"], "w") as fh:
        fh.write(
            CONFIG_TEMPLATE.format(seed=cfg.seed, forest=FOREST_CODE, urban=URBAN_CODE, window=cfg.window)
        )
    return paths
