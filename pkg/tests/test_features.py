import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import make_grid
from deforest.features import (
    FEATURE_NAMES,
    WindowSpec,
    distance_to_class,
    focal_counts,
    forest_cover_index,
    matheron_index,
    squared_distance_transform,
    stack_features,
)
from deforest.raster import AlignmentError
from oracles import cover_loop, distance_all_pairs, focal_counts_loop, matheron_loop

ND = -9999.0


def random_mask(rng, shape, p_nodata=0.1):
    cells = rng.integers(0, 2, size=shape).astype(float)
    cells[rng.random(shape) < p_nodata] = ND
    return make_grid(cells)


def test_window_spec_validation():
    assert WindowSpec().side == 3
    for bad in (1, 2, 4, 0, -3):
        with pytest.raises(ValueError):
            WindowSpec(bad)
    assert WindowSpec(21).half == 10


def test_cover_all_forest():
    out = forest_cover_index(make_grid(np.zeros((3, 3))), 3)
    assert out.cells[1, 1] == 100.0


def test_cover_only_center_forest():
    cells = np.ones((3, 3))
    cells[1, 1] = 0
    out = forest_cover_index(make_grid(cells), 3)
    assert out.cells[1, 1] == pytest.approx(100 / 9, abs=1e-12)


def test_cover_edge_window_is_clipped():
    # corner pixel sees the 2x2 block only
    cells = np.array([[0, 1, 1], [1, 1, 1], [1, 1, 1]], dtype=float)
    assert forest_cover_index(make_grid(cells), 3).cells[0, 0] == 25.0


def test_cover_nodata_center_and_neighbours():
    cells = np.array([[0, ND, 1], [0, 0, 1], [1, 1, 1]])
    out = forest_cover_index(make_grid(cells), 3)
    assert out.cells[0, 1] == ND
    # centre window: 8 valid cells, 3 forest
    assert out.cells[1, 1] == pytest.approx(100 * 3 / 8, abs=1e-12)


def test_window_larger_than_raster():
    with pytest.raises(ValueError, match="larger than"):
        forest_cover_index(make_grid(np.zeros((5, 20))), 9)


def test_mask_alphabet_checked():
    with pytest.raises(ValueError, match="only 0"):
        forest_cover_index(make_grid([[0, 2, 1], [0, 0, 0], [1, 1, 1]]), 3)


def test_matheron_uniform_forest_is_zero():
    assert matheron_index(make_grid(np.zeros((3, 3))), 3).cells[1, 1] == 0.0


def test_matheron_no_forest_is_zero():
    assert matheron_index(make_grid(np.ones((3, 3))), 3).cells[1, 1] == 0.0


def test_matheron_checkerboard():
    # forest on the four corners and the centre
    cells = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    pairs = 0
    for i in range(3):
        for j in range(3):
            for di, dj in ((0, 1), (1, 0)):
                if i + di < 3 and j + dj < 3 and cells[i, j] != cells[i + di, j + dj]:
                    pairs += 1
    assert pairs == 12
    out = matheron_index(make_grid(cells), 3).cells[1, 1]
    assert out == pytest.approx(pairs / (math.sqrt(5) * math.sqrt(9)), abs=1e-12)
    assert out == pytest.approx(1.7888543819998317, abs=1e-12)


def test_matheron_excludes_pairs_touching_nodata():
    cells = np.array([[0, ND, 0], [1, 1, 1], [1, 1, 1]])
    c = focal_counts(make_grid(cells), 3)
    # valid pairs: (0,0)-(1,0), (0,2)-(1,2)
    assert c["n_edges"][1, 1] == 2
    assert c["n"][1, 1] == 8


@pytest.mark.parametrize("side", [3, 5, 9])
def test_focal_counts_match_loop_oracle(rng, side):
    for shape in [(9, 9), (17, 12), (10, 23)]:
        mask = random_mask(rng, shape)
        got = focal_counts(mask, side)
        n, nf, ne = focal_counts_loop(mask.cells, mask.valid, side)
        assert np.array_equal(got["n"], n)
        assert np.array_equal(got["n_forest"], nf)
        assert np.array_equal(got["n_edges"], ne)


def test_indices_match_loop_oracle(rng):
    mask = random_mask(rng, (32, 32))
    v = mask.valid
    cover = forest_cover_index(mask, 3)
    m = matheron_index(mask, 3)
    np.testing.assert_allclose(cover.cells[v], cover_loop(mask.cells, v, 3)[v], rtol=0, atol=1e-12)
    np.testing.assert_allclose(m.cells[v], matheron_loop(mask.cells, v, 3)[v], rtol=0, atol=1e-12)
    assert (cover.cells[~v] == ND).all() and (m.cells[~v] == ND).all()


@settings(max_examples=60, deadline=None)
@given(
    cells=hnp.arrays(np.int8, st.tuples(st.integers(5, 16), st.integers(5, 16)), elements=st.sampled_from([0, 1, -1])),
    side=st.sampled_from([3, 5]),
)
def test_index_ranges(cells, side):
    cells = np.where(cells < 0, ND, cells).astype(float)
    mask = make_grid(cells)
    v = mask.valid
    cover = forest_cover_index(mask, side).cells[v]
    m = matheron_index(mask, side).cells[v]
    assert ((cover >= 0) & (cover <= 100)).all()
    assert (m >= 0).all()


def test_distance_target_is_zero_and_neighbour_is_cellsize():
    cells = np.zeros((5, 5))
    cells[2, 2] = 1
    d = distance_to_class(make_grid(cells, cellsize=90), 1)
    assert d.cells[2, 2] == 0.0
    assert d.cells[2, 3] == 90.0 and d.cells[1, 2] == 90.0
    assert d.cells[0, 0] == pytest.approx(90 * math.sqrt(8), abs=1e-9)


def test_distance_cellsize_override():
    cells = np.zeros((1, 4))
    cells[0, 0] = 1
    d = distance_to_class(make_grid(cells, cellsize=90), 1, cellsize=2.0)
    assert d.cells.tolist() == [[0.0, 2.0, 4.0, 6.0]]


def test_distance_no_target():
    with pytest.raises(ValueError, match="no target cell"):
        distance_to_class(make_grid(np.zeros((3, 3))), 1)


def test_distance_nodata_cells_get_distance():
    cells = np.array([[1, ND, 0]])
    d = distance_to_class(make_grid(cells, cellsize=10), 1)
    assert d.cells.tolist() == [[0.0, 10.0, 20.0]]


def test_distance_matches_all_pairs(rng):
    for _ in range(5):
        cells = (rng.random((40, 33)) < 0.02).astype(float)
        cells[rng.integers(40), rng.integers(33)] = 1
        d = distance_to_class(make_grid(cells, cellsize=30), 1)
        np.testing.assert_allclose(d.cells, distance_all_pairs(cells == 1, 30), rtol=0, atol=1e-9)


def test_distance_single_row_and_column():
    t = np.zeros((1, 7), dtype=bool)
    t[0, 5] = True
    assert squared_distance_transform(t).tolist() == [[25, 16, 9, 4, 1, 0, 1]]
    assert squared_distance_transform(t.T).ravel().tolist() == [25, 16, 9, 4, 1, 0, 1]


@settings(max_examples=80, deadline=None)
@given(hnp.arrays(np.bool_, st.tuples(st.integers(1, 20), st.integers(1, 20)), elements=st.booleans()))
def test_distance_properties(target):
    if not target.any():
        target[0, 0] = True
    d2 = squared_distance_transform(target)
    assert np.array_equal(d2, squared_distance_transform(target.T).T)
    assert (d2[target] == 0).all()
    assert (d2[~target] > 0).all()
    np.testing.assert_allclose(np.sqrt(d2), distance_all_pairs(target), atol=1e-9)


def test_stack_features_valid_mask():
    cover = make_grid([[10, 20], [30, 40]])
    dist = make_grid([[0, 1], [2, 3]])
    elev = make_grid([[100, ND], [300, 400]])
    stack = stack_features(cover, dist, elev)
    assert stack.names == FEATURE_NAMES == ("cover", "dist_urban", "elev")
    assert stack.values().shape == (2, 2, 3)
    assert stack.valid.tolist() == [[True, False], [True, True]]


def test_stack_all_valid():
    g = make_grid([[1, 2], [3, 4]])
    assert stack_features(g, g, g).valid.sum() == 4


def test_stack_does_not_reorder():
    a, b, c = make_grid([[1.0]]), make_grid([[2.0]]), make_grid([[3.0]])
    assert stack_features(c, a, b).values()[0, 0].tolist() == [3.0, 1.0, 2.0]


def test_stack_alignment_error():
    with pytest.raises(AlignmentError):
        stack_features(make_grid([[1]]), make_grid([[1]], cellsize=2), make_grid([[1]]))
