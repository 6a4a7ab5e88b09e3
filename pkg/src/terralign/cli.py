"""Command-line entry point: correct, evaluate, simulate and bench workflows.

Exit codes: 0 success, 1 usage/config error, 2 data error. Diagnostics go
to stderr; machine-readable output only ever lands in files under --out.
The `correct` reports blank the wall_time_s column so reruns with the same
seed are byte-identical; `bench` keeps real timings.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from .config import ConfigError, RunConfig, config_from_dict, dump_config, parse_toml
from .evaluate import (
    OffsetSummary,
    ReportRow,
    compare_methods,
    displacement_stats,
    mae,
    rows_to_csv,
    rows_to_json,
    rows_to_text,
)
from .footprints import (
    REQUIRED_COLUMNS,
    FootprintError,
    parse_footprints,
    prepare_groups,
)
from .metrics import MetricError, MetricKind
from .optimize import METHOD_NAMES, Bounds, correct_dataset
from .raster import (
    AggregationKind,
    RasterError,
    aggregate_buffer_points,
    check_crs,
    load_raster,
    sample_points,
    write_raster,
)
from .synthetic import (
    TERRAIN_KINDS,
    TerrainSpec,
    TrackError,
    TrackSpec,
    gen_terrain,
    gen_track,
    plant_offset,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

CORRECTED_EXTRA_COLUMNS = (
    "group_key",
    "dx_m",
    "dy_m",
    "x_corrected",
    "y_corrected",
    "ref_elev_before",
    "ref_elev_after",
    "method",
    "metric",
)

_METRIC_NAMES = tuple(m.value for m in MetricKind)
_AGG_NAMES = tuple(a.value for a in AggregationKind)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # exit 1 for usage problems, not argparse's 2
        raise UsageError(message)


def _add_common_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dem", help="reference DEM raster (GeoTIFF or ESRI ASCII)")
    p.add_argument("--geoid", help="geoid undulation raster in the same CRS")
    p.add_argument("--footprints", help="footprint CSV")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="TOML-style config file; flags override it")
    p.add_argument("--methods", help=f"comma list from {{{','.join(METHOD_NAMES)}}}")
    p.add_argument("--metrics", help=f"comma list from {{{','.join(_METRIC_NAMES)}}}")
    p.add_argument("--radius", type=float, help="footprint buffer radius in meters")
    p.add_argument("--agg", choices=_AGG_NAMES, help="buffer aggregation statistic")
    p.add_argument("--workers", type=int, help="parallel workers over shot groups")
    p.add_argument("--seed", type=int, help="global random seed")
    p.add_argument("--max-dx", type=float, help="search half-window on dx (m)")
    p.add_argument("--max-dy", type=float, help="search half-window on dy (m)")

    q = p.add_argument_group("quality filters")
    q.add_argument("--min-elev", type=float)
    q.add_argument("--max-elev", type=float)
    q.add_argument("--min-sensitivity", type=float)
    q.add_argument("--max-dem-diff", type=float)
    q.add_argument("--outlier-window", type=int)
    q.add_argument("--outlier-k", type=float)
    q.add_argument("--require-tree-cover", action="store_const", const=True, default=None)

    o = p.add_argument_group("optimizer settings")
    o.add_argument("--grid-step", type=float)
    o.add_argument("--lbfgsb-max-iter", type=int)
    o.add_argument("--lbfgsb-tol", type=float)
    o.add_argument("--lbfgsb-fd-step", type=float)
    o.add_argument("--lbfgsb-starts", type=int, choices=(1, 5))
    o.add_argument("--lbfgsb-history", type=int)
    o.add_argument("--ga-pop", type=int)
    o.add_argument("--ga-generations", type=int)
    o.add_argument("--ga-crossover-rate", type=float)
    o.add_argument("--ga-mutation-rate", type=float)
    o.add_argument("--ga-tournament-size", type=int)
    o.add_argument("--ga-blend-alpha", type=float)
    o.add_argument("--ga-mutation-sigma", type=float)
    o.add_argument("--ga-elitism", type=int)
    o.add_argument("--pso-swarm", type=int)
    o.add_argument("--pso-iterations", type=int)
    o.add_argument("--pso-cognitive", type=float)
    o.add_argument("--pso-social", type=float)
    o.add_argument("--pso-inertia", type=float)


def build_parser() -> _Parser:
    parser = _Parser(
        prog="terralign",
        description="Correct horizontal geolocation errors of spaceborne LiDAR "
        "footprints by matching elevation profiles against a reference DEM.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p_correct = sub.add_parser("correct", help="run the full correction pipeline")
    _add_common_run_flags(p_correct)
    p_correct.set_defaults(func=cmd_correct)

    p_eval = sub.add_parser("evaluate", help="recompute statistics from a corrected CSV")
    p_eval.add_argument("--corrected", required=True, help="corrected CSV from `correct`")
    p_eval.add_argument("--dem", required=True)
    p_eval.add_argument("--geoid")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--radius", type=float, default=12.5)
    p_eval.add_argument("--agg", choices=_AGG_NAMES, default="mean")
    p_eval.set_defaults(func=cmd_evaluate)

    p_sim = sub.add_parser("simulate", help="generate a synthetic scene with planted offsets")
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--terrain", choices=TERRAIN_KINDS, default="gaussian_hills")
    p_sim.add_argument("--rows", type=int, default=512)
    p_sim.add_argument("--cols", type=int, default=512)
    p_sim.add_argument("--cell-size", type=float, default=5.0)
    p_sim.add_argument("--relief", type=float, default=150.0)
    p_sim.add_argument("--terrain-seed", type=int, default=0)
    p_sim.add_argument("--n-groups", type=int, default=1)
    p_sim.add_argument("--n-footprints", type=int, default=20)
    p_sim.add_argument("--spacing", type=float, default=60.0)
    p_sim.add_argument("--heading", type=float, default=0.0)
    p_sim.add_argument("--noise-sd", type=float, default=0.0)
    p_sim.add_argument("--dx", type=float, default=0.0, help="planted x offset (m)")
    p_sim.add_argument("--dy", type=float, default=0.0, help="planted y offset (m)")
    p_sim.add_argument("--track-seed", type=int, default=1)
    p_sim.set_defaults(func=cmd_simulate)

    p_bench = sub.add_parser("bench", help="method x metric sweep with wall-clock timings")
    _add_common_run_flags(p_bench)
    p_bench.set_defaults(func=cmd_bench)

    return parser


def _build_config(args: argparse.Namespace) -> RunConfig:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            cfg = config_from_dict(parse_toml(path.read_text()))
        except ConfigError as exc:
            raise UsageError(f"{path}: {exc}") from exc
    else:
        cfg = RunConfig()

    def take(flag_value, setter):
        if flag_value is not None:
            setter(flag_value)

    take(args.dem, lambda v: setattr(cfg, "dem_path", v))
    take(args.geoid, lambda v: setattr(cfg, "geoid_path", v))
    take(args.footprints, lambda v: setattr(cfg, "footprints_path", v))
    take(args.out, lambda v: setattr(cfg, "output_dir", v))
    take(args.radius, lambda v: setattr(cfg, "radius", v))
    take(args.workers, lambda v: setattr(cfg, "workers", v))
    take(args.seed, lambda v: setattr(cfg, "seed", v))
    if args.methods is not None:
        cfg.methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.metrics is not None:
        cfg.metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    if args.agg is not None:
        cfg.agg = AggregationKind(args.agg)
    if args.max_dx is not None or args.max_dy is not None:
        cfg.bounds = Bounds(
            cfg.bounds.max_abs_dx if args.max_dx is None else args.max_dx,
            cfg.bounds.max_abs_dy if args.max_dy is None else args.max_dy,
        )

    q = cfg.quality
    take(args.min_elev, lambda v: setattr(q, "min_elev", v))
    take(args.max_elev, lambda v: setattr(q, "max_elev", v))
    take(args.min_sensitivity, lambda v: setattr(q, "min_sensitivity", v))
    take(args.max_dem_diff, lambda v: setattr(q, "max_dem_diff", v))
    take(args.outlier_window, lambda v: setattr(q, "outlier_window", v))
    take(args.outlier_k, lambda v: setattr(q, "outlier_k", v))
    take(args.require_tree_cover, lambda v: setattr(q, "require_tree_cover", v))

    opt = cfg.optimizer
    take(args.grid_step, lambda v: setattr(opt, "grid_step", v))
    lb = opt.lbfgsb
    take(args.lbfgsb_max_iter, lambda v: setattr(lb, "max_iter", v))
    take(args.lbfgsb_tol, lambda v: setattr(lb, "tol", v))
    take(args.lbfgsb_fd_step, lambda v: setattr(lb, "fd_step", v))
    take(args.lbfgsb_starts, lambda v: setattr(lb, "starts", v))
    take(args.lbfgsb_history, lambda v: setattr(lb, "history", v))
    ga = opt.ga
    take(args.ga_pop, lambda v: setattr(ga, "pop", v))
    take(args.ga_generations, lambda v: setattr(ga, "generations", v))
    take(args.ga_crossover_rate, lambda v: setattr(ga, "crossover_rate", v))
    take(args.ga_mutation_rate, lambda v: setattr(ga, "mutation_rate", v))
    take(args.ga_tournament_size, lambda v: setattr(ga, "tournament_size", v))
    take(args.ga_blend_alpha, lambda v: setattr(ga, "blend_alpha", v))
    take(args.ga_mutation_sigma, lambda v: setattr(ga, "mutation_sigma", v))
    take(args.ga_elitism, lambda v: setattr(ga, "elitism", v))
    pso = opt.pso
    take(args.pso_swarm, lambda v: setattr(pso, "swarm", v))
    take(args.pso_iterations, lambda v: setattr(pso, "iterations", v))
    take(args.pso_cognitive, lambda v: setattr(pso, "cognitive", v))
    take(args.pso_social, lambda v: setattr(pso, "social", v))
    take(args.pso_inertia, lambda v: setattr(pso, "inertia", v))

    try:
        q.__post_init__()
        lb.__post_init__()
        ga.__post_init__()
        pso.__post_init__()
        opt.__post_init__()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    opt.seed = cfg.seed
    for m in cfg.methods:
        if m not in METHOD_NAMES:
            raise UsageError(f"unknown method {m!r}; expected one of {METHOD_NAMES}")
    for m in cfg.metrics:
        if m not in _METRIC_NAMES:
            raise UsageError(f"unknown metric {m!r}; expected one of {_METRIC_NAMES}")
    try:
        cfg.validate()
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc

    if not cfg.dem_path:
        raise UsageError("a DEM is required (--dem or dem_path in the config)")
    if not cfg.footprints_path:
        raise UsageError("a footprint CSV is required (--footprints or footprints_path)")
    if not cfg.output_dir:
        raise UsageError("an output directory is required (--out or output_dir)")
    return cfg


def _fmt_float(value: float | None) -> str:
    if value is None or not math.isfinite(value):
        return ""
    return repr(float(value))


def _load_pipeline(cfg: RunConfig):
    dem_path = Path(cfg.dem_path)
    if not dem_path.exists():
        raise DataError(f"DEM not found: {dem_path}")
    dem = load_raster(dem_path)
    geoid = None
    if cfg.geoid_path:
        geoid_path = Path(cfg.geoid_path)
        if not geoid_path.exists():
            raise DataError(f"geoid raster not found: {geoid_path}")
        geoid = load_raster(geoid_path)
        check_crs(geoid.crs_tag, dem.crs_tag, context="geoid vs DEM")

    fps_path = Path(cfg.footprints_path)
    if not fps_path.exists():
        raise DataError(f"footprint CSV not found: {fps_path}")
    with fps_path.open(newline="") as fh:
        fps, parse_stats = parse_footprints(fh, source=str(fps_path))
    if not fps:
        raise DataError(
            f"{fps_path}: no parseable footprints "
            f"({parse_stats.n_dropped_na} NA rows, {parse_stats.n_dropped_bad_numeric} bad rows)"
        )

    groups, stats = prepare_groups(
        fps,
        dem,
        geoid=geoid,
        rules=cfg.quality,
        radius=cfg.radius,
        agg=cfg.agg,
        footprint_crs=dem.crs_tag,
    )
    if stats.n_after_attach == 0:
        raise DataError(f"no footprints left after preprocessing; {stats.empty_stage()} removed the last row")
    return dem, groups, stats


def _run_sweep(cfg: RunConfig, dem, groups):
    results = []
    for method in cfg.methods:
        for metric in cfg.metrics:
            logger.info("correcting with method=%s metric=%s", method, metric)
            results.append(
                correct_dataset(
                    groups,
                    dem,
                    method=method,
                    metric=metric,
                    cfg=cfg.optimizer,
                    bounds=cfg.bounds,
                    radius=cfg.radius,
                    agg=cfg.agg,
                    workers=cfg.workers,
                )
            )
    return results


def _write_corrected_csv(path: Path, result) -> None:
    base_columns: list[str] | None = None
    for group in result.original_groups:
        for fp in group.footprints:
            if fp.raw:
                base_columns = list(fp.raw.keys())
            break
        if base_columns:
            break
    if base_columns is None:
        base_columns = list(REQUIRED_COLUMNS)

    def base_value(fp, col: str) -> str:
        if fp.raw and col in fp.raw:
            return fp.raw[col]
        return {
            "shot_number": fp.shot_number,
            "beam": fp.beam,
            "x": _fmt_float(fp.x),
            "y": _fmt_float(fp.y),
            "elev_lowestmode": _fmt_float(fp.elev_lowestmode),
            "degrade_flag": str(fp.degrade_flag),
            "quality_flag": str(fp.quality_flag),
            "sensitivity": _fmt_float(fp.sensitivity),
            "rh100": _fmt_float(fp.rh100),
        }.get(col, "")

    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(base_columns + list(CORRECTED_EXTRA_COLUMNS))
        for sol, original, corrected in zip(
            result.solutions, result.original_groups, result.corrected_groups
        ):
            for fp_before, fp_after in zip(original.footprints, corrected.footprints):
                writer.writerow(
                    [base_value(fp_before, c) for c in base_columns]
                    + [
                        original.key,
                        _fmt_float(sol.dx),
                        _fmt_float(sol.dy),
                        _fmt_float(fp_after.x),
                        _fmt_float(fp_after.y),
                        _fmt_float(fp_before.ref_elev),
                        _fmt_float(fp_after.ref_elev),
                        result.method,
                        result.metric,
                    ]
                )


def _write_reports(out_dir: Path, rows, with_timing: bool) -> None:
    (out_dir / "report.csv").write_text(rows_to_csv(rows, with_timing=with_timing))
    (out_dir / "report.json").write_text(rows_to_json(rows, with_timing=with_timing))
    (out_dir / "report.txt").write_text(rows_to_text(rows, with_timing=with_timing))


def cmd_correct(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    dem, groups, _ = _load_pipeline(cfg)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    results = _run_sweep(cfg, dem, groups)
    for result in results:
        name = f"corrected_{result.method}_{result.metric}.csv"
        _write_corrected_csv(out_dir / name, result)
        logger.info("wrote %s", out_dir / name)

    rows = compare_methods(results, groups)
    # timings stay out of `correct` reports so equal seeds give equal bytes
    _write_reports(out_dir, rows, with_timing=False)
    (out_dir / "effective_config.toml").write_text(dump_config(cfg))
    logger.info("reports written to %s", out_dir)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    dem, groups, _ = _load_pipeline(cfg)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    results = _run_sweep(cfg, dem, groups)
    rows = compare_methods(results, groups)
    _write_reports(out_dir, rows, with_timing=True)
    (out_dir / "effective_config.toml").write_text(dump_config(cfg))
    sys.stderr.write(rows_to_text(rows, with_timing=True))
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    terrain_spec = TerrainSpec(
        kind=args.terrain,
        n_rows=args.rows,
        n_cols=args.cols,
        cell_size=args.cell_size,
        relief=args.relief,
        seed=args.terrain_seed,
    )
    terrain = gen_terrain(terrain_spec)
    write_raster(terrain, out_dir / "terrain.asc")

    if args.n_groups < 1:
        raise UsageError("--n-groups must be >= 1")
    truth: dict = {
        "terrain": {
            "kind": args.terrain,
            "n_rows": args.rows,
            "n_cols": args.cols,
            "cell_size": args.cell_size,
            "relief": args.relief,
            "seed": args.terrain_seed,
        },
        "groups": {},
    }
    all_rows: list[list[str]] = []
    for i in range(args.n_groups):
        spec = TrackSpec(
            n_footprints=args.n_footprints,
            spacing=args.spacing,
            heading=(args.heading + i * 360.0 / args.n_groups) % 360.0,
            noise_sd=args.noise_sd,
            planted_dx=args.dx,
            planted_dy=args.dy,
            seed=args.track_seed + i,
        )
        clean = gen_track(terrain, spec)
        observed = plant_offset(clean, spec)
        truth["groups"][clean.key] = {
            "planted_dx": spec.planted_dx,
            "planted_dy": spec.planted_dy,
            "heading": spec.heading,
            "seed": spec.seed,
            "true_positions": [[fp.x, fp.y] for fp in clean.footprints],
        }
        for fp in observed.footprints:
            all_rows.append(
                [
                    fp.shot_number,
                    fp.beam,
                    repr(fp.x),
                    repr(fp.y),
                    repr(fp.elev_lowestmode),
                    str(fp.degrade_flag),
                    str(fp.quality_flag),
                    repr(fp.sensitivity),
                    repr(fp.rh100),
                ]
            )

    with (out_dir / "footprints.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REQUIRED_COLUMNS)
        writer.writerows(all_rows)
    (out_dir / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    logger.info("synthetic scene written to %s", out_dir)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    corrected_path = Path(args.corrected)
    if not corrected_path.exists():
        raise DataError(f"corrected CSV not found: {corrected_path}")
    dem_path = Path(args.dem)
    if not dem_path.exists():
        raise DataError(f"DEM not found: {dem_path}")
    dem = load_raster(dem_path)
    geoid = None
    if args.geoid:
        geoid = load_raster(Path(args.geoid))
        check_crs(geoid.crs_tag, dem.crs_tag, context="geoid vs DEM")
    agg = AggregationKind(args.agg)

    with corrected_path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{corrected_path}: empty file")
        needed = set(CORRECTED_EXTRA_COLUMNS) | {"x", "y", "elev_lowestmode"}
        missing = needed - set(reader.fieldnames)
        if missing:
            raise DataError(
                f"{corrected_path}: missing columns: {', '.join(sorted(missing))}"
            )
        records = list(reader)
    if not records:
        raise DataError(f"{corrected_path}: no data rows")

    try:
        x = np.array([float(r["x"]) for r in records])
        y = np.array([float(r["y"]) for r in records])
        xc = np.array([float(r["x_corrected"]) for r in records])
        yc = np.array([float(r["y_corrected"]) for r in records])
        elev = np.array([float(r["elev_lowestmode"]) for r in records])
    except ValueError as exc:
        raise DataError(f"{corrected_path}: unparseable numeric field: {exc}") from exc

    if geoid is not None:
        und = sample_points(geoid, x, y)
        elev = elev - und
    ref_before = aggregate_buffer_points(dem, x, y, args.radius, agg)
    ref_after = aggregate_buffer_points(dem, xc, yc, args.radius, agg)
    usable = np.isfinite(elev) & np.isfinite(ref_before) & np.isfinite(ref_after)
    if not np.any(usable):
        raise DataError("no footprint has DEM coverage at both original and corrected positions")

    combos: dict[tuple[str, str], list[int]] = {}
    for i, rec in enumerate(records):
        if usable[i]:
            combos.setdefault((rec["method"], rec["metric"]), []).append(i)

    rows = []
    first = next(iter(combos.values()))
    n_groups = len({records[i]["group_key"] for i in first})
    rows.append(
        ReportRow(
            method="original",
            metric="",
            mae_m=mae(elev[first], ref_before[first]),
            offsets=OffsetSummary(*([math.nan] * 6), n_groups),
            n_footprints=len(first),
            wall_time_s=math.nan,
        )
    )
    for (method, metric), idx in combos.items():
        by_group: dict[str, SimpleNamespace] = {}
        for i in idx:
            key = records[i]["group_key"]
            if key not in by_group:
                by_group[key] = SimpleNamespace(
                    dx=float(records[i]["dx_m"]), dy=float(records[i]["dy_m"])
                )
        summary = displacement_stats(list(by_group.values()))
        rows.append(
            ReportRow(
                method=method,
                metric=metric,
                mae_m=mae(elev[idx], ref_after[idx]),
                offsets=summary,
                n_footprints=len(idx),
                wall_time_s=math.nan,
            )
        )

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_reports(out_dir, rows, with_timing=False)
    logger.info("evaluation reports written to %s", out_dir)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    if not logging.getLogger().handlers:
        logging.basicConfig(
            stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
        )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        sys.stderr.write(parser.format_usage())
        return EXIT_USAGE
    except SystemExit as exc:  # --help prints and exits 0
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        sys.stderr.write(parser.format_usage())
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except (DataError, RasterError, FootprintError, MetricError, TrackError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
