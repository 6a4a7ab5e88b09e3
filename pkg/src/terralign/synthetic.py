"""Synthetic terrains and footprint tracks with planted geolocation offsets.

A planted offset shifts the reported footprint positions while keeping the
elevations sampled at the true positions, reproducing the real situation
of wrong coordinates over correct measurements. The ideal recovered
displacement is therefore the negated planted offset.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .evaluate import mae
from .footprints import Footprint, ShotGroup, attach_reference
from .metrics import MetricKind
from .optimize import Bounds, OptimizerConfig, correct_group
from .raster import AggregationKind, RasterGrid, aggregate_buffer_points

BASE_ELEVATION_M = 100.0
TRACK_MARGIN_M = 25.0
TERRAIN_KINDS = ("flat", "ramp", "gaussian_hills", "fractal")

_N_HILLS = 10
_FRACTAL_OCTAVES = 5
_FRACTAL_PERSISTENCE = 0.5
_FRACTAL_BASE_FREQ = 4


class TrackError(ValueError):
    """Raised when a track cannot be placed inside the terrain."""


@dataclass
class TerrainSpec:
    kind: str
    n_rows: int = 256
    n_cols: int = 256
    cell_size: float = 1.0
    relief: float = 100.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in TERRAIN_KINDS:
            raise ValueError(f"unknown terrain kind {self.kind!r}; expected one of {TERRAIN_KINDS}")
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError("terrain dimensions must be positive")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.relief < 0:
            raise ValueError("relief must be non-negative")


@dataclass
class TrackSpec:
    n_footprints: int = 20
    spacing: float = 60.0
    heading: float = 0.0
    noise_sd: float = 0.0
    planted_dx: float = 0.0
    planted_dy: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_footprints < 3:
            raise ValueError("a track needs at least 3 footprints")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        if abs(self.planted_dx) > 25.0 or abs(self.planted_dy) > 25.0:
            raise ValueError("planted offsets must stay within the 25 m window")


def _rescale(z: np.ndarray, relief: float) -> np.ndarray:
    """Map a raw field to [base - relief/2, base + relief/2] exactly."""
    z_min = float(z.min())
    z_max = float(z.max())
    if z_max == z_min or relief == 0.0:
        return np.full_like(z, BASE_ELEVATION_M)
    unit = (z - z_min) / (z_max - z_min)
    return BASE_ELEVATION_M + relief * (unit - 0.5)


def _smootherstep(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def _value_noise(rng: np.random.Generator, n_rows: int, n_cols: int, freq: int) -> np.ndarray:
    """One octave of lattice value noise with smootherstep interpolation."""
    lattice = rng.uniform(-1.0, 1.0, size=(freq + 1, freq + 1))
    u = np.linspace(0.0, freq, n_cols) if n_cols > 1 else np.zeros(1)
    v = np.linspace(0.0, freq, n_rows) if n_rows > 1 else np.zeros(1)
    i0 = np.minimum(v.astype(np.int64), freq - 1)
    j0 = np.minimum(u.astype(np.int64), freq - 1)
    tv = _smootherstep(v - i0)[:, np.newaxis]
    tu = _smootherstep(u - j0)[np.newaxis, :]
    a = lattice[np.ix_(i0, j0)]
    b = lattice[np.ix_(i0, j0 + 1)]
    c = lattice[np.ix_(i0 + 1, j0)]
    d = lattice[np.ix_(i0 + 1, j0 + 1)]
    top = a + (b - a) * tu
    bottom = c + (d - c) * tu
    return top + (bottom - top) * tv


def gen_terrain(spec: TerrainSpec) -> RasterGrid:
    """Deterministic terrain for (kind, seed); grid origin at (0, height)."""
    rng = np.random.default_rng(spec.seed)
    rows, cols = spec.n_rows, spec.n_cols

    if spec.kind == "flat":
        values = np.full((rows, cols), BASE_ELEVATION_M)
    elif spec.kind == "ramp":
        if cols > 1:
            unit = np.arange(cols, dtype=np.float64) / (cols - 1)
        else:
            unit = np.zeros(1)
        values = np.broadcast_to(
            BASE_ELEVATION_M + spec.relief * (unit - 0.5), (rows, cols)
        ).copy()
    elif spec.kind == "gaussian_hills":
        width = cols * spec.cell_size
        height = rows * spec.cell_size
        # cell-center coordinates
        xs = (np.arange(cols, dtype=np.float64) + 0.5) * spec.cell_size
        ys = height - (np.arange(rows, dtype=np.float64) + 0.5) * spec.cell_size
        cx = rng.uniform(0.0, width, _N_HILLS)
        cy = rng.uniform(0.0, height, _N_HILLS)
        sigma = rng.uniform(0.05, 0.15, _N_HILLS) * min(width, height)
        amp = rng.uniform(0.5, 1.0, _N_HILLS)
        sign = np.where(rng.random(_N_HILLS) < 0.5, -1.0, 1.0)
        raw = np.zeros((rows, cols))
        gx = xs[np.newaxis, :]
        gy = ys[:, np.newaxis]
        for j in range(_N_HILLS):
            d2 = (gx - cx[j]) ** 2 + (gy - cy[j]) ** 2
            raw += sign[j] * amp[j] * np.exp(-d2 / (2.0 * sigma[j] ** 2))
        values = _rescale(raw, spec.relief)
    else:  # fractal
        raw = np.zeros((rows, cols))
        amplitude = 1.0
        for octave in range(_FRACTAL_OCTAVES):
            freq = _FRACTAL_BASE_FREQ * (2**octave)
            raw += amplitude * _value_noise(rng, rows, cols, freq)
            amplitude *= _FRACTAL_PERSISTENCE
        values = _rescale(raw, spec.relief)

    return RasterGrid(
        origin_x=0.0,
        origin_y=rows * spec.cell_size,
        cell_size_x=spec.cell_size,
        cell_size_y=-spec.cell_size,
        values=values,
        nodata=None,
        crs_tag="",
    )


def _group_key(seed: int) -> str:
    return f"{abs(seed) % 10**10:010d}"


def gen_track(
    terrain: RasterGrid,
    spec: TrackSpec,
    radius: float = 12.5,
    agg: AggregationKind = AggregationKind.MEAN,
) -> ShotGroup:
    """Footprints along a straight track through the terrain center.

    Heading uses compass convention (0 = +y, 90 = +x). Elevations are the
    footprint-buffer aggregate at the true position plus seeded Gaussian
    noise; they double as elev_lowestmode so the group passes ingestion.
    """
    x_min, y_min, x_max, y_max = terrain.extent
    cx = (x_min + x_max) / 2.0
    cy = (y_min + y_max) / 2.0
    heading_rad = math.radians(spec.heading)
    ux = math.sin(heading_rad)
    uy = math.cos(heading_rad)
    n = spec.n_footprints
    s = (np.arange(n, dtype=np.float64) - (n - 1) / 2.0) * spec.spacing
    xs = cx + s * ux
    ys = cy + s * uy

    margin = TRACK_MARGIN_M
    if (
        xs.min() < x_min + margin
        or xs.max() > x_max - margin
        or ys.min() < y_min + margin
        or ys.max() > y_max - margin
    ):
        raise TrackError(
            f"track of {n} footprints at spacing {spec.spacing} m does not fit "
            f"inside the terrain with a {margin} m margin"
        )

    clean = aggregate_buffer_points(terrain, xs, ys, radius, agg)
    if not np.all(np.isfinite(clean)):
        raise TrackError("track crosses a nodata region of the terrain")
    rng = np.random.default_rng(spec.seed)
    noise = rng.normal(0.0, spec.noise_sd, n)
    elev = clean + noise

    prefix = _group_key(spec.seed)
    footprints = [
        Footprint(
            shot_number=f"{prefix}{i:05d}",
            beam="BEAM0101",
            x=float(xs[i]),
            y=float(ys[i]),
            elev_lowestmode=float(elev[i]),
            degrade_flag=0,
            quality_flag=1,
            sensitivity=0.98,
            rh100=10.0,
            gedi_dem=float(elev[i]),
        )
        for i in range(n)
    ]
    return ShotGroup(key=prefix, footprints=footprints)


def plant_offset(group: ShotGroup, spec: TrackSpec) -> ShotGroup:
    """Shift reported positions by the planted offset; elevations stay put."""
    shifted = [
        replace(fp, x=fp.x + spec.planted_dx, y=fp.y + spec.planted_dy)
        for fp in group.footprints
    ]
    return ShotGroup(key=group.key, footprints=shifted)


@dataclass
class ExperimentRow:
    method: str
    metric: str
    planted_dx: float
    planted_dy: float
    dx: float
    dy: float
    recovery_error_m: float
    objective_value: float
    mae_before_m: float
    mae_after_m: float
    evaluations: int
    wall_time_s: float


EXPERIMENT_COLUMNS = (
    "method",
    "metric",
    "planted_dx",
    "planted_dy",
    "dx_m",
    "dy_m",
    "recovery_error_m",
    "objective_value",
    "mae_before_m",
    "mae_after_m",
    "evaluations",
    "wall_time_s",
)


@dataclass
class ExperimentReport:
    terrain: TerrainSpec
    track: TrackSpec
    rows: list[ExperimentRow] = field(default_factory=list)

    def to_csv(self, include_timing: bool = False) -> str:
        """Timing is excluded by default so equal seeds give equal bytes."""
        lines = [",".join(EXPERIMENT_COLUMNS)]
        for r in self.rows:
            wall = f"{r.wall_time_s:.6f}" if include_timing else ""
            lines.append(
                ",".join(
                    [
                        r.method,
                        r.metric,
                        f"{r.planted_dx:.6f}",
                        f"{r.planted_dy:.6f}",
                        f"{r.dx:.6f}",
                        f"{r.dy:.6f}",
                        f"{r.recovery_error_m:.6f}",
                        f"{r.objective_value:.6f}",
                        f"{r.mae_before_m:.6f}",
                        f"{r.mae_after_m:.6f}",
                        str(r.evaluations),
                        wall,
                    ]
                )
            )
        return "\n".join(lines) + "\n"


def run_recovery_experiment(
    terrain_spec: TerrainSpec,
    track_spec: TrackSpec,
    methods: Sequence[str],
    metrics: Sequence[str],
    cfg: OptimizerConfig | None = None,
    bounds: Bounds = Bounds(),
    radius: float = 12.5,
    agg: AggregationKind = AggregationKind.MEAN,
) -> ExperimentReport:
    """Plant an offset, run every method x metric, measure the recovery."""
    cfg = cfg or OptimizerConfig()
    terrain = gen_terrain(terrain_spec)
    truth = gen_track(terrain, track_spec, radius, agg)
    observed = plant_offset(truth, track_spec)
    # no 50 m exclusion here: synthetic elevations are honest by construction
    observed = attach_reference(observed, terrain, radius, agg, max_dem_diff=math.inf)
    elev = observed.elevations
    mae_before = mae(elev, observed.ref_elevs)

    report = ExperimentReport(terrain=terrain_spec, track=track_spec)
    for method in methods:
        for metric in metrics:
            start = time.perf_counter()
            sol, corrected = correct_group(
                observed, terrain, method=method, metric=metric,
                cfg=cfg, bounds=bounds, radius=radius, agg=agg,
            )
            wall = time.perf_counter() - start
            kept = [fp for fp in corrected.footprints if fp.ref_elev is not None]
            if kept:
                mae_after = mae(
                    np.array([fp.gedi_dem for fp in kept]),
                    np.array([fp.ref_elev for fp in kept]),
                )
            else:
                mae_after = math.nan
            report.rows.append(
                ExperimentRow(
                    method=method,
                    metric=MetricKind(metric).value,
                    planted_dx=track_spec.planted_dx,
                    planted_dy=track_spec.planted_dy,
                    dx=sol.dx,
                    dy=sol.dy,
                    recovery_error_m=math.hypot(
                        sol.dx + track_spec.planted_dx, sol.dy + track_spec.planted_dy
                    ),
                    objective_value=sol.objective_value,
                    mae_before_m=mae_before,
                    mae_after_m=mae_after,
                    evaluations=sol.evaluations,
                    wall_time_s=wall,
                )
            )
    return report
