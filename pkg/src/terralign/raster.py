"""Georeferenced elevation grids with point and circular-buffer queries.

The :class:`RasterGrid` is the in-memory representation of a DEM or geoid
raster. Cell values are stored as float64 with NaN marking nodata; the
original on-disk sentinel is kept so grids can be written back out. Grids
are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np


class RasterError(Exception):
    """Base class for raster loading and sampling errors."""


class RasterFormatError(RasterError):
    """File is not a raster format this package can read or write."""


class CrsMismatchError(RasterError):
    """Two datasets declare different coordinate reference systems."""


class AggregationKind(str, Enum):
    """Statistic applied to cell values inside a circular buffer."""

    MEAN = "mean"
    MEDIAN = "median"
    MODE = "mode"


# Bin width used by the MODE aggregation; continuous elevations are
# histogrammed at this resolution and the densest bin wins (ties -> lower bin).
MODE_BIN_M = 0.1

# Cap on temporary array size in the vectorised buffer query.
_CHUNK_ELEMENTS = 4_000_000


@dataclass
class RasterGrid:
    """Single-band elevation grid with affine (axis-aligned) cell geometry.

    Attributes:
        origin_x: x coordinate of the grid's upper-left corner (m).
        origin_y: y coordinate of the grid's upper-left corner (m).
        cell_size_x: cell width (m), > 0.
        cell_size_y: cell height (m); negative for north-up grids.
        values: (n_rows, n_cols) float64 array, NaN where nodata.
        nodata: on-disk nodata sentinel, or None if the source had none.
        crs_tag: opaque CRS identifier (e.g. "EPSG:32654"); "" if unknown.
    """

    origin_x: float
    origin_y: float
    cell_size_x: float
    cell_size_y: float
    values: np.ndarray
    nodata: float | None = None
    crs_tag: str = ""

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.size == 0:
            raise ValueError("values must be a non-empty 2-D array")
        if not (math.isfinite(self.cell_size_x) and self.cell_size_x > 0):
            raise ValueError(f"cell_size_x must be finite and > 0, got {self.cell_size_x}")
        if not math.isfinite(self.cell_size_y) or self.cell_size_y == 0:
            raise ValueError(f"cell_size_y must be finite and nonzero, got {self.cell_size_y}")
        if np.isinf(self.values).any():
            raise ValueError("raster contains non-finite (inf) values")
        self.values.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max) of the grid's outer edges."""
        x0 = self.origin_x
        x1 = self.origin_x + self.n_cols * self.cell_size_x
        y0 = self.origin_y
        y1 = self.origin_y + self.n_rows * self.cell_size_y
        return (min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))


def check_crs(tag_a: str, tag_b: str, context: str = "") -> None:
    """Raise CrsMismatchError when two declared CRS tags disagree.

    An empty tag means "unknown" and is compatible with anything; the
    package never reprojects, it only refuses explicit mismatches.
    """
    if tag_a and tag_b and tag_a != tag_b:
        where = f" ({context})" if context else ""
        raise CrsMismatchError(f"CRS mismatch{where}: {tag_a!r} vs {tag_b!r}")


def sample_point(grid: RasterGrid, x: float, y: float) -> float:
    """Value of the cell containing (x, y); NaN outside the extent or on nodata."""
    out = sample_points(grid, np.array([x], dtype=float), np.array([y], dtype=float))
    return float(out[0])


def sample_points(grid: RasterGrid, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorised cell lookup; returns float64 with NaN where undefined."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    cols = np.floor((xs - grid.origin_x) / grid.cell_size_x).astype(np.int64)
    rows = np.floor((ys - grid.origin_y) / grid.cell_size_y).astype(np.int64)
    inside = (rows >= 0) & (rows < grid.n_rows) & (cols >= 0) & (cols < grid.n_cols)
    out = np.full(xs.shape, np.nan)
    out[inside] = grid.values[rows[inside], cols[inside]]
    return out


def aggregate_buffer(
    grid: RasterGrid,
    cx: float,
    cy: float,
    radius: float,
    agg: AggregationKind = AggregationKind.MEAN,
) -> float:
    """Aggregate of all non-nodata cells whose centers lie within `radius` of (cx, cy).

    Returns NaN when no cell qualifies (empty buffer, fully off-grid, or all
    member cells nodata). Partial coverage aggregates over the remaining cells.
    """
    out = aggregate_buffer_points(
        grid, np.array([cx], dtype=float), np.array([cy], dtype=float), radius, agg
    )
    return float(out[0])


def aggregate_buffer_points(
    grid: RasterGrid,
    xs: np.ndarray,
    ys: np.ndarray,
    radius: float,
    agg: AggregationKind = AggregationKind.MEAN,
) -> np.ndarray:
    """Circular-buffer aggregation for many centers at once.

    Args:
        grid: source raster.
        xs, ys: 1-D arrays of buffer center coordinates (m).
        radius: buffer radius (m), > 0.
        agg: statistic over member cells.

    Returns:
        float64 array of the same length; NaN marks empty buffers.
    """
    if not (math.isfinite(radius) and radius > 0):
        raise ValueError(f"buffer radius must be > 0, got {radius}")
    agg = AggregationKind(agg)
    xs = np.ascontiguousarray(xs, dtype=float).ravel()
    ys = np.ascontiguousarray(ys, dtype=float).ravel()
    if xs.shape != ys.shape:
        raise ValueError("xs and ys must have the same length")

    offs_r, offs_c = _stencil_offsets(grid, radius)
    out = np.empty(xs.shape[0], dtype=np.float64)
    chunk = max(1, _CHUNK_ELEMENTS // max(1, offs_r.size))
    for start in range(0, xs.shape[0], chunk):
        stop = min(start + chunk, xs.shape[0])
        out[start:stop] = _buffer_stats_chunk(
            grid, xs[start:stop], ys[start:stop], radius, agg, offs_r, offs_c
        )
    return out


def _stencil_offsets(grid: RasterGrid, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Relative (row, col) offsets of cells that could fall in the buffer.

    The stencil is anchored at the cell containing the buffer center, so cells
    whose nearest possible center distance already exceeds the radius are
    pruned up front (roughly the square's corners).
    """
    csx = grid.cell_size_x
    csy = abs(grid.cell_size_y)
    kx = int(math.ceil(radius / csx)) + 1
    ky = int(math.ceil(radius / csy)) + 1
    dr, dc = np.meshgrid(np.arange(-ky, ky + 1), np.arange(-kx, kx + 1), indexing="ij")
    dr = dr.ravel()
    dc = dc.ravel()
    # Anchor cell contains the center, so a stencil cell's center is at least
    # (|offset| - 1) cells away in each axis.
    min_dx = np.maximum(np.abs(dc) - 1, 0) * csx
    min_dy = np.maximum(np.abs(dr) - 1, 0) * csy
    keep = min_dx * min_dx + min_dy * min_dy <= radius * radius
    return dr[keep], dc[keep]


def _buffer_stats_chunk(
    grid: RasterGrid,
    xs: np.ndarray,
    ys: np.ndarray,
    radius: float,
    agg: AggregationKind,
    offs_r: np.ndarray,
    offs_c: np.ndarray,
) -> np.ndarray:
    colf = (xs - grid.origin_x) / grid.cell_size_x
    rowf = (ys - grid.origin_y) / grid.cell_size_y
    c0 = np.floor(colf).astype(np.int64)
    r0 = np.floor(rowf).astype(np.int64)

    rows = r0[:, None] + offs_r[None, :]
    cols = c0[:, None] + offs_c[None, :]
    in_bounds = (rows >= 0) & (rows < grid.n_rows) & (cols >= 0) & (cols < grid.n_cols)

    cx_cell = grid.origin_x + (cols + 0.5) * grid.cell_size_x
    cy_cell = grid.origin_y + (rows + 0.5) * grid.cell_size_y
    ddx = cx_cell - xs[:, None]
    ddy = cy_cell - ys[:, None]
    within = ddx * ddx + ddy * ddy <= radius * radius

    vals = grid.values[rows.clip(0, grid.n_rows - 1), cols.clip(0, grid.n_cols - 1)]
    valid = in_bounds & within & np.isfinite(vals)

    if agg is AggregationKind.MEAN:
        counts = valid.sum(axis=1)
        sums = np.where(valid, vals, 0.0).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        return out
    if agg is AggregationKind.MEDIAN:
        masked = np.where(valid, vals, np.nan)
        counts = valid.sum(axis=1)
        out = np.full(xs.shape[0], np.nan)
        has = counts > 0
        if has.any():
            out[has] = np.nanmedian(masked[has], axis=1)
        return out
    # MODE: histogram member values at MODE_BIN_M; the densest bin wins, ties
    # break toward the lower bin, and the bin's member mean is reported.
    out = np.full(xs.shape[0], np.nan)
    for i in range(xs.shape[0]):
        member = vals[i][valid[i]]
        if member.size == 0:
            continue
        bins = np.floor(member * (1.0 / MODE_BIN_M)).astype(np.int64)
        uniq, counts = np.unique(bins, return_counts=True)
        winner = uniq[np.argmax(counts)]  # np.unique sorts, argmax takes first max
        out[i] = member[bins == winner].mean()
    return out


def load_raster(path: str | Path, kind: str = "raster") -> RasterGrid:
    """Load a GeoTIFF or ESRI ASCII grid from disk.

    Args:
        path: file to read.
        kind: label used in error messages ("dem", "geoid", ...).

    Raises:
        RasterFormatError: unreadable file, unsupported layout (multi-band,
            compressed, tiled), or a non-raster file.
    """
    path = Path(path)
    if not path.is_file():
        raise RasterFormatError(f"{kind} file not found: {path}")
    try:
        head = path.open("rb").read(4)
    except OSError as exc:
        raise RasterFormatError(f"cannot read {kind} file {path}: {exc}") from exc
    if head[:2] in (b"II", b"MM"):
        from .geotiff import read_geotiff

        grid = read_geotiff(path)
    else:
        from .esri_ascii import read_ascii_grid

        grid = read_ascii_grid(path)
    if not math.isfinite(grid.cell_size_x) or not math.isfinite(grid.cell_size_y):
        raise RasterFormatError(f"{kind} file {path} declares a non-finite cell size")
    return grid


def write_raster(grid: RasterGrid, path: str | Path) -> None:
    """Write a grid to GeoTIFF (.tif/.tiff) or ESRI ASCII (anything else)."""
    path = Path(path)
    if path.suffix.lower() in (".tif", ".tiff"):
        from .geotiff import write_geotiff

        write_geotiff(grid, path)
    else:
        from .esri_ascii import write_ascii_grid

        write_ascii_grid(grid, path)
