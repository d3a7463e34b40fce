import numpy as np
import pytest

from deforest.raster import Grid, GridHeader

ACCEPTANCE_LINES: list[str] = []


def make_grid(cells, cellsize=1.0, nodata=-9999.0, xll=0.0, yll=0.0) -> Grid:
    cells = np.asarray(cells, dtype=float)
    return Grid(GridHeader(cells.shape[1], cells.shape[0], xll, yll, cellsize, nodata), cells)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
