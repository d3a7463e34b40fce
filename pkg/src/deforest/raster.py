"""Single-band rasters and the plain-text ASCII grid format.

A grid file is a short header of ``key value`` lines followed by
``nrows * ncols`` whitespace separated numbers, row 0 being the northernmost
row::

    ncols 4
    nrows 3
    xllcorner 0
    yllcorner 0
    cellsize 90
    nodata_value -9999
    0 0 1 1
    ...

Forest masks use 0 for forest and 1 for non-forest on disk. Code should
refer to :class:`CellClass` rather than to the raw numbers.
"""

from __future__ import annotations

import enum
import io
import math
import os
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence, TextIO

import numpy as np

DEFAULT_NODATA = -9999.0
CORNER_TOLERANCE = 1e-6

HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")
_REQUIRED_KEYS = HEADER_KEYS[:5]
_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?\Z")


class RasterFormatError(ValueError):
    """Raised when an ASCII grid cannot be parsed."""


class AlignmentError(ValueError):
    """Raised when grids that must overlay pixel-to-pixel do not."""

    def __init__(self, field_name: str, message: str):
        super().__init__(message)
        self.field = field_name


class CellClass(enum.IntEnum):
    """Forest mask alphabet. NoData is whatever the grid's sentinel is."""

    FOREST = 0
    NON_FOREST = 1


@dataclass(frozen=True)
class GridHeader:
    ncols: int
    nrows: int
    xllcorner: float = 0.0
    yllcorner: float = 0.0
    cellsize: float = 1.0
    nodata_value: float = DEFAULT_NODATA

    def __post_init__(self):
        if self.ncols < 1 or self.nrows < 1:
            raise ValueError(f"grid dimensions must be positive, got {self.nrows}x{self.ncols}")
        if not self.cellsize > 0:
            raise ValueError(f"cellsize must be positive, got {self.cellsize}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)


@dataclass(frozen=True, eq=False)
class Grid:
    """A header plus a read-only ``(nrows, ncols)`` float64 array."""

    header: GridHeader
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.float64)
        if cells.shape != self.header.shape:
            raise ValueError(f"cells shape {cells.shape} does not match header {self.header.shape}")
        bad = ~np.isfinite(cells)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise ValueError(f"non-finite cell at row {r}, col {c}")
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)

    @classmethod
    def like(cls, template: "Grid", cells: np.ndarray, nodata_value: float | None = None) -> "Grid":
        header = template.header
        if nodata_value is not None:
            header = replace(header, nodata_value=float(nodata_value))
        return cls(header, cells)

    @property
    def shape(self) -> tuple[int, int]:
        return self.header.shape

    @property
    def nodata(self) -> float:
        return self.header.nodata_value

    @property
    def valid(self) -> np.ndarray:
        """Boolean mask of cells that are not the NoData sentinel."""
        return self.cells != self.header.nodata_value

    def masked(self) -> np.ma.MaskedArray:
        return np.ma.masked_array(self.cells, mask=~self.valid)

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return self.header == other.header and np.array_equal(self.cells, other.cells)

    __hash__ = None


def format_number(value: float) -> str:
    """Shortest text that parses back to exactly ``value``.

    Integral values are written without a decimal point.
    """
    value = float(value)
    if value == 0.0:
        return "-0" if math.copysign(1.0, value) < 0 else "0"
    if value.is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def _parse_number(token: str, where: str) -> float:
    if not _NUMBER.match(token):
        raise RasterFormatError(f"{where}: non-numeric token {token!r}")
    value = float(token)
    if not math.isfinite(value):
        raise RasterFormatError(f"{where}: token {token!r} overflows to infinity")
    return value


def read_ascii_grid(source: str | TextIO) -> Grid:
    """Parse an ASCII grid from a string or an open text stream.

    Header keys are case-insensitive and may appear in any order; ``nodata_value``
    is optional and defaults to -9999. Cell tokens may be laid out over any
    number of lines as long as there are exactly ``nrows * ncols`` of them.
    """
    text = source if isinstance(source, str) else source.read()
    lines = text.splitlines()

    header: dict[str, float] = {}
    lineno = 0
    while lineno < len(lines):
        parts = lines[lineno].split()
        if not parts:
            lineno += 1
            continue
        if _NUMBER.match(parts[0]) or len(header) == len(HEADER_KEYS):
            break
        key = parts[0].lower()
        where = f"line {lineno + 1}"
        if key not in HEADER_KEYS:
            raise RasterFormatError(f"{where}: unknown header key {parts[0]!r}")
        if key in header:
            raise RasterFormatError(f"{where}: duplicate header key {parts[0]!r}")
        if len(parts) != 2:
            raise RasterFormatError(f"{where}: header line must be 'key value', got {lines[lineno]!r}")
        header[key] = _parse_number(parts[1], where)
        lineno += 1

    missing = [k for k in _REQUIRED_KEYS if k not in header]
    if missing:
        raise RasterFormatError(f"missing header key(s): {', '.join(missing)}")
    for key in ("ncols", "nrows"):
        v = header[key]
        if not v.is_integer() or v < 1:
            raise RasterFormatError(f"header {key} must be a positive integer, got {format_number(v)}")
    if header["cellsize"] <= 0:
        raise RasterFormatError(f"header cellsize must be positive, got {format_number(header['cellsize'])}")

    nrows, ncols = int(header["nrows"]), int(header["ncols"])
    expected = nrows * ncols
    values = []
    for i in range(lineno, len(lines)):
        for j, token in enumerate(lines[i].split()):
            if len(values) == expected:
                raise RasterFormatError(
                    f"line {i + 1}, token {j + 1}: too many cells, expected {expected}"
                )
            values.append(_parse_number(token, f"line {i + 1}, token {j + 1}"))
    if len(values) != expected:
        raise RasterFormatError(f"wrong cell count: expected {expected} ({nrows}x{ncols}), got {len(values)}")

    gh = GridHeader(
        ncols=ncols,
        nrows=nrows,
        xllcorner=header["xllcorner"],
        yllcorner=header["yllcorner"],
        cellsize=header["cellsize"],
        nodata_value=header.get("nodata_value", DEFAULT_NODATA),
    )
    return Grid(gh, np.array(values, dtype=np.float64).reshape(nrows, ncols))


def write_ascii_grid(grid: Grid, stream: TextIO | None = None) -> str:
    """Render ``grid`` in canonical form; also write it to ``stream`` if given."""
    h = grid.header
    out = io.StringIO()
    for key in HEADER_KEYS:
        out.write(f"{key} {format_number(getattr(h, key))}\n")
    for row in grid.cells:
        out.write(" ".join(format_number(v) for v in row.tolist()))
        out.write("\n")
    text = out.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def load_grid(path: str | os.PathLike) -> Grid:
    with open(path, "r", encoding="ascii") as fh:
        try:
            return read_ascii_grid(fh)
        except RasterFormatError as exc:
            raise RasterFormatError(f"{os.fspath(path)}: {exc}") from None


def save_grid(grid: Grid, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        write_ascii_grid(grid, fh)


def reclassify(
    grid: Grid,
    mapping: Sequence[tuple[Iterable[float], float]] | dict,
    default: float | None = None,
) -> Grid:
    """Map sets of source values onto target values.

    ``mapping`` is a sequence of ``(source_values, target)`` pairs or a dict
    ``{target: source_values}``. Cells that match no source set get
    ``default`` (``None`` means NoData). NoData cells stay NoData.

    >>> lc = Grid(GridHeader(3, 1), np.array([[1.0, 2.0, 3.0]]))
    >>> reclassify(lc, [({1}, 0)], default=1).cells.tolist()
    [[0.0, 1.0, 1.0]]
    """
    if isinstance(mapping, dict):
        mapping = [(sources, target) for target, sources in mapping.items()]
    seen: dict[float, float] = {}
    for sources, target in mapping:
        for s in sources:
            s = float(s)
            if s in seen:
                raise ValueError(f"source value {format_number(s)} appears in more than one mapping set")
            seen[s] = float(target)

    nodata = grid.nodata
    fill = nodata if default is None else float(default)
    out = np.full(grid.shape, fill, dtype=np.float64)
    for source, target in seen.items():
        out[grid.cells == source] = target
    out[~grid.valid] = nodata
    return Grid(grid.header, out)


def assert_aligned(grids: Sequence[Grid], tol: float = CORNER_TOLERANCE) -> None:
    """Raise :class:`AlignmentError` unless all grids overlay pixel-to-pixel."""
    if not grids:
        raise ValueError("assert_aligned needs at least one grid")
    ref = grids[0].header
    for i, g in enumerate(grids[1:], start=1):
        h = g.header
        for name in ("ncols", "nrows", "cellsize"):
            if getattr(h, name) != getattr(ref, name):
                raise AlignmentError(
                    name, f"grid {i} {name} {getattr(h, name)} differs from grid 0 ({getattr(ref, name)})"
                )
        for name in ("xllcorner", "yllcorner"):
            if abs(getattr(h, name) - getattr(ref, name)) > tol:
                raise AlignmentError(
                    name, f"grid {i} {name} {getattr(h, name)} differs from grid 0 ({getattr(ref, name)})"
                )
