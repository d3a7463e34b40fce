"""Per-pixel predictor rasters: forest cover index, Matheron index, distances.

Focal windows are odd-sided squares centred on each pixel and clipped to the
raster, so edge pixels see fewer cells instead of padding. Both focal
statistics use summed-area tables; counts stay integer until the final
division.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .raster import AlignmentError, CellClass, Grid, assert_aligned

FEATURE_NAMES = ("cover", "dist_urban", "elev")
STANDARD_WINDOWS = (3, 9, 15)


@dataclass(frozen=True)
class WindowSpec:
    side: int = 3

    def __post_init__(self):
        if int(self.side) != self.side or self.side < 3 or self.side % 2 == 0:
            raise ValueError(f"window side must be an odd integer >= 3, got {self.side}")

    @property
    def half(self) -> int:
        return self.side // 2


def _as_window(window: WindowSpec | int) -> WindowSpec:
    return window if isinstance(window, WindowSpec) else WindowSpec(int(window))


def _forest_classes(mask: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Return (forest, valid) boolean arrays, checking the 0/1/NoData alphabet."""
    valid = mask.valid
    vals = mask.cells[valid]
    bad = (vals != CellClass.FOREST) & (vals != CellClass.NON_FOREST)
    if bad.any():
        raise ValueError(
            f"forest mask must contain only 0 (forest), 1 (non-forest) or NoData; found {vals[bad][0]!r}"
        )
    return valid & (mask.cells == CellClass.FOREST), valid


def _check_window_fits(mask: Grid, window: WindowSpec) -> None:
    nrows, ncols = mask.shape
    if window.side > nrows or window.side > ncols:
        raise ValueError(f"{window.side}x{window.side} window is larger than the {nrows}x{ncols} raster")


def _box_sum(a: np.ndarray, r0, r1, c0, c1) -> np.ndarray:
    """Sum of ``a[r0[i]:r1[i], c0[j]:c1[j]]`` for every (i, j)."""
    s = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=np.int64)
    np.cumsum(np.cumsum(a, axis=0, dtype=np.int64), axis=1, out=s[1:, 1:])
    return (
        s[np.ix_(r1, c1)] - s[np.ix_(r0, c1)] - s[np.ix_(r1, c0)] + s[np.ix_(r0, c0)]
    )


def _window_bounds(n: int, half: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(n)
    return np.clip(idx - half, 0, n), np.clip(idx + half + 1, 0, n)


def focal_counts(mask: Grid, window: WindowSpec | int = 3) -> dict[str, np.ndarray]:
    """Integer window counts used by both fragmentation indices.

    Returns arrays ``n`` (valid cells), ``n_forest`` and ``n_edges`` (4-adjacent
    forest/non-forest pairs with both cells inside the clipped window).
    """
    window = _as_window(window)
    _check_window_fits(mask, window)
    forest, valid = _forest_classes(mask)
    nonforest = valid & ~forest
    nrows, ncols = mask.shape
    r0, r1 = _window_bounds(nrows, window.half)
    c0, c1 = _window_bounds(ncols, window.half)

    horiz = (forest[:, :-1] & nonforest[:, 1:]) | (nonforest[:, :-1] & forest[:, 1:])
    vert = (forest[:-1, :] & nonforest[1:, :]) | (nonforest[:-1, :] & forest[1:, :])
    # a pair starting at column c lies inside [c0, c1) iff c0 <= c < c1 - 1
    n_edges = _box_sum(horiz, r0, r1, np.minimum(c0, ncols - 1), c1 - 1)
    n_edges += _box_sum(vert, np.minimum(r0, nrows - 1), r1 - 1, c0, c1)
    return {
        "n": _box_sum(valid, r0, r1, c0, c1),
        "n_forest": _box_sum(forest, r0, r1, c0, c1),
        "n_edges": n_edges,
    }


def forest_cover_index(mask: Grid, window: WindowSpec | int = 3) -> Grid:
    """Percentage of forest among the valid cells of each pixel's window."""
    counts = focal_counts(mask, window)
    center_valid = mask.valid
    out = np.full(mask.shape, mask.nodata, dtype=np.float64)
    out[center_valid] = 100.0 * counts["n_forest"][center_valid] / counts["n"][center_valid]
    return Grid(mask.header, out)


def matheron_index(mask: Grid, window: WindowSpec | int = 3) -> Grid:
    """Edge count over ``sqrt(n_forest) * sqrt(n)`` per window; 0 with no forest."""
    counts = focal_counts(mask, window)
    center_valid = mask.valid
    n, nf, ne = (counts[k][center_valid] for k in ("n", "n_forest", "n_edges"))
    value = np.zeros(n.shape, dtype=np.float64)
    has_forest = nf > 0
    value[has_forest] = ne[has_forest] / (np.sqrt(nf[has_forest]) * np.sqrt(n[has_forest]))
    out = np.full(mask.shape, mask.nodata, dtype=np.float64)
    out[center_valid] = value
    return Grid(mask.header, out)


def _column_distances(target: np.ndarray) -> np.ndarray:
    """Row offset to the nearest target in the same column (large if none)."""
    nrows, ncols = target.shape
    far = nrows + ncols + 1
    g = np.empty((nrows, ncols), dtype=np.int64)
    g[0] = np.where(target[0], 0, far)
    for r in range(1, nrows):
        g[r] = np.where(target[r], 0, g[r - 1] + 1)
    for r in range(nrows - 2, -1, -1):
        np.minimum(g[r], g[r + 1] + 1, out=g[r])
    return np.where(g >= far, -1, g)


def _lower_envelope(f: list[int]) -> list[int]:
    """1-D squared distance transform, ``min_q (p - q)**2 + f[q]``; ``f[q] < 0`` means no site."""
    sites = [q for q, fq in enumerate(f) if fq >= 0]
    v: list[int] = []
    z: list[float] = []
    for q in sites:
        fq = f[q] + q * q
        while v:
            p = v[-1]
            s = (fq - (f[p] + p * p)) / (2 * (q - p))
            if s <= z[-1]:
                v.pop()
                z.pop()
            else:
                break
        if v:
            z.append(s)
            v.append(q)
        else:
            v.append(q)
            z.append(-np.inf)
    out = []
    k = 0
    for p in range(len(f)):
        while k + 1 < len(v) and z[k + 1] < p:
            k += 1
        q = v[k]
        out.append((p - q) * (p - q) + f[q])
    return out


def squared_distance_transform(target: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance, in pixels, to the nearest True cell."""
    target = np.asarray(target, dtype=bool)
    if not target.any():
        raise ValueError("no target cell present")
    g = _column_distances(target)
    f = np.where(g >= 0, g * g, -1).tolist()
    return np.array([_lower_envelope(row) for row in f], dtype=np.int64)


def distance_to_class(mask: Grid, target: float = 1, cellsize: float | None = None) -> Grid:
    """Euclidean distance in map units from each cell centre to the nearest ``target`` cell.

    NoData cells are not targets but still receive a distance, so the output
    has no NoData cells.
    """
    cellsize = mask.header.cellsize if cellsize is None else float(cellsize)
    if not cellsize > 0:
        raise ValueError(f"cellsize must be positive, got {cellsize}")
    is_target = mask.valid & (mask.cells == target)
    if not is_target.any():
        raise ValueError(f"no target cell present (value {target!r})")
    d2 = squared_distance_transform(is_target)
    return Grid(mask.header, np.sqrt(d2.astype(np.float64)) * cellsize)


@dataclass(frozen=True)
class FeatureStack:
    """Aligned predictor layers in a fixed caller-supplied order."""

    names: tuple[str, ...]
    layers: tuple[Grid, ...]

    def __post_init__(self):
        if len(self.names) != len(self.layers):
            raise ValueError("names and layers must have the same length")
        if not self.layers:
            raise ValueError("a feature stack needs at least one layer")
        assert_aligned(list(self.layers))

    @property
    def shape(self) -> tuple[int, int]:
        return self.layers[0].shape

    @property
    def valid(self) -> np.ndarray:
        """True where every layer has data."""
        return np.logical_and.reduce([g.valid for g in self.layers])

    def values(self) -> np.ndarray:
        """Array of shape ``(nrows, ncols, n_features)``."""
        return np.stack([g.cells for g in self.layers], axis=-1)


def stack_features(cover: Grid, distance: Grid, elevation: Grid) -> FeatureStack:
    """Stack the three model inputs as ``(cover, dist_urban, elev)``.

    Arguments are trusted to be in this order; nothing is reordered.
    """
    return FeatureStack(FEATURE_NAMES, (cover, distance, elevation))


def stack_layers(names: Sequence[str], layers: Sequence[Grid]) -> FeatureStack:
    return FeatureStack(tuple(names), tuple(layers))


__all__ = [
    "AlignmentError",
    "FEATURE_NAMES",
    "FeatureStack",
    "WindowSpec",
    "distance_to_class",
    "focal_counts",
    "forest_cover_index",
    "matheron_index",
    "squared_distance_transform",
    "stack_features",
    "stack_layers",
]
