"""Deforestation labels from two forest masks."""

from __future__ import annotations

import numpy as np

from .raster import CellClass, Grid, assert_aligned

DEFORESTED = 1.0
STABLE = 0.0


def deforestation_labels(mask_t0: Grid, mask_t1: Grid) -> Grid:
    """Label pixels that were forest at t0: 1 if lost by t1, 0 if kept.

    Every other pixel (non-forest at t0, or NoData in either mask) is NoData,
    so regrowth is never labelled. The output carries the t0 header.
    """
    assert_aligned([mask_t0, mask_t1])
    nodata = mask_t0.nodata
    was_forest = mask_t0.valid & (mask_t0.cells == CellClass.FOREST)
    t1_valid = mask_t1.valid
    out = np.full(mask_t0.shape, nodata, dtype=np.float64)
    out[was_forest & t1_valid & (mask_t1.cells == CellClass.NON_FOREST)] = DEFORESTED
    out[was_forest & t1_valid & (mask_t1.cells == CellClass.FOREST)] = STABLE
    return Grid(mask_t0.header, out)
