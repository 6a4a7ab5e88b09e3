"""Run configuration: a small TOML-style file format plus CLI merging.

Only the subset this package writes is parsed back: [section.sub] headers,
scalar keys (quoted strings, integers, floats, booleans) and flat arrays.
CLI flags override file values; the merged result is echoed back into the
output directory so a run can be reproduced from its artifacts.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields
from typing import Any

from .footprints import QualityRules
from .optimize import Bounds, GaConfig, LbfgsbConfig, OptimizerConfig, PsoConfig
from .raster import AggregationKind

_INT_RE = re.compile(r"^[+-]?\d+$")
_SECTION_RE = re.compile(r"^\[([A-Za-z0-9_.]+)\]$")
_KEY_RE = re.compile(r"^([A-Za-z0-9_]+)\s*=\s*(.+)$")


class ConfigError(ValueError):
    """Raised for unreadable config files or unknown keys."""


@dataclass
class RunConfig:
    dem_path: str = ""
    geoid_path: str | None = None
    footprints_path: str = ""
    output_dir: str = ""
    methods: list[str] = field(default_factory=lambda: ["grid"])
    metrics: list[str] = field(default_factory=lambda: ["euclidean"])
    quality: QualityRules = field(default_factory=QualityRules)
    bounds: Bounds = field(default_factory=Bounds)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    radius: float = 12.5
    agg: AggregationKind = AggregationKind.MEAN
    workers: int = 1
    seed: int = 0

    def validate(self) -> None:
        if not self.methods:
            raise ConfigError("at least one method is required")
        if not self.metrics:
            raise ConfigError("at least one metric is required")
        if self.radius <= 0:
            raise ConfigError("radius must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def _parse_string(raw: str, lineno: int) -> tuple[str, str]:
    """Parse a leading quoted string; returns (value, remainder)."""
    assert raw[0] == '"'
    out = []
    i = 1
    while i < len(raw):
        ch = raw[i]
        if ch == "\\":
            if i + 1 >= len(raw):
                raise ConfigError(f"line {lineno}: dangling escape in string")
            esc = raw[i + 1]
            mapped = {"\\": "\\", '"': '"', "n": "\n", "t": "\t"}.get(esc)
            if mapped is None:
                raise ConfigError(f"line {lineno}: unsupported escape \\{esc}")
            out.append(mapped)
            i += 2
        elif ch == '"':
            return "".join(out), raw[i + 1 :]
        else:
            out.append(ch)
            i += 1
    raise ConfigError(f"line {lineno}: unterminated string")


def _parse_scalar(raw: str, lineno: int) -> Any:
    raw = raw.strip()
    if raw.startswith('"'):
        value, rest = _parse_string(raw, lineno)
        rest = rest.strip()
        if rest and not rest.startswith("#"):
            raise ConfigError(f"line {lineno}: trailing characters after string: {rest!r}")
        return value
    # for unquoted values a '#' always starts a comment
    raw = raw.split("#", 1)[0].strip()
    if raw == "true":
        return True
    if raw == "false":
        return False
    if _INT_RE.match(raw):
        return int(raw)
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: cannot parse value {raw!r}") from exc


def _parse_value(raw: str, lineno: int) -> Any:
    raw = raw.strip()
    if raw.startswith("["):
        close = raw.rfind("]")
        if close < 0:
            raise ConfigError(f"line {lineno}: unterminated array")
        tail = raw[close + 1 :].strip()
        if tail and not tail.startswith("#"):
            raise ConfigError(f"line {lineno}: trailing characters after array: {tail!r}")
        body = raw[1:close].strip()
        if not body:
            return []
        return [_parse_scalar(part, lineno) for part in body.split(",")]
    return _parse_scalar(raw, lineno)


def parse_toml(text: str) -> dict:
    """Parse the supported TOML subset into nested dicts."""
    root: dict[str, Any] = {}
    current = root
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        section = _SECTION_RE.match(stripped)
        if section:
            current = root
            for part in section.group(1).split("."):
                current = current.setdefault(part, {})
                if not isinstance(current, dict):
                    raise ConfigError(f"line {lineno}: section path collides with a value")
            continue
        kv = _KEY_RE.match(stripped)
        if not kv:
            raise ConfigError(f"line {lineno}: expected 'key = value' or '[section]'")
        key, raw = kv.group(1), kv.group(2)
        if key in current:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        current[key] = _parse_value(raw, lineno)
    return root


def _apply(obj: Any, data: dict, path: str) -> None:
    """Overwrite dataclass fields from a dict, rejecting unknown keys."""
    known = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key: {path}{key}")
        current = getattr(obj, key)
        if isinstance(value, dict):
            _apply(current, value, f"{path}{key}.")
        else:
            setattr(obj, key, value)
    post = getattr(obj, "__post_init__", None)
    if post is not None:
        try:
            post()
        except ValueError as exc:
            raise ConfigError(f"invalid value under {path or 'top level'}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from a parsed config dict."""
    cfg = RunConfig()
    data = dict(data)
    optimizer = data.pop("optimizer", None)
    quality = data.pop("quality", None)
    bounds = data.pop("bounds", None)
    _apply(cfg, data, "")
    if quality is not None:
        _apply(cfg.quality, quality, "quality.")
    if bounds is not None:
        # Bounds is frozen: rebuild instead of mutating
        unknown = set(bounds) - {"max_abs_dx", "max_abs_dy"}
        if unknown:
            raise ConfigError(f"unknown config key: bounds.{sorted(unknown)[0]}")
        try:
            cfg.bounds = Bounds(
                bounds.get("max_abs_dx", cfg.bounds.max_abs_dx),
                bounds.get("max_abs_dy", cfg.bounds.max_abs_dy),
            )
        except ValueError as exc:
            raise ConfigError(f"invalid value under bounds: {exc}") from exc
    if optimizer is not None:
        _apply(cfg.optimizer, optimizer, "optimizer.")
    if isinstance(cfg.agg, str):
        try:
            cfg.agg = AggregationKind(cfg.agg)
        except ValueError as exc:
            raise ConfigError(f"unknown aggregation {cfg.agg!r}") from exc
    cfg.methods = [str(m) for m in cfg.methods]
    cfg.metrics = [str(m) for m in cfg.metrics]
    cfg.optimizer.seed = cfg.seed
    cfg.validate()
    return cfg


def load_config(text: str) -> RunConfig:
    return config_from_dict(parse_toml(text))


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dump_config(cfg: RunConfig) -> str:
    """Serialize the effective configuration; parse_toml round-trips it."""
    lines = [
        f"dem_path = {_fmt(cfg.dem_path)}",
    ]
    if cfg.geoid_path is not None:
        lines.append(f"geoid_path = {_fmt(cfg.geoid_path)}")
    lines += [
        f"footprints_path = {_fmt(cfg.footprints_path)}",
        f"output_dir = {_fmt(cfg.output_dir)}",
        f"methods = {_fmt(cfg.methods)}",
        f"metrics = {_fmt(cfg.metrics)}",
        f"radius = {_fmt(cfg.radius)}",
        f"agg = {_fmt(cfg.agg.value)}",
        f"workers = {_fmt(cfg.workers)}",
        f"seed = {_fmt(cfg.seed)}",
        "",
        "[bounds]",
        f"max_abs_dx = {_fmt(cfg.bounds.max_abs_dx)}",
        f"max_abs_dy = {_fmt(cfg.bounds.max_abs_dy)}",
        "",
        "[quality]",
    ]
    q = cfg.quality
    lines += [
        f"min_elev = {_fmt(q.min_elev)}",
        f"max_elev = {_fmt(q.max_elev)}",
        f"require_degrade_zero = {_fmt(q.require_degrade_zero)}",
        f"require_quality_one = {_fmt(q.require_quality_one)}",
        f"min_sensitivity = {_fmt(q.min_sensitivity)}",
        f"require_positive_rh100 = {_fmt(q.require_positive_rh100)}",
        f"require_tree_cover = {_fmt(q.require_tree_cover)}",
        f"max_dem_diff = {_fmt(q.max_dem_diff)}",
        f"outlier_window = {_fmt(q.outlier_window)}",
        f"outlier_k = {_fmt(q.outlier_k)}",
        "",
        "[optimizer]",
        f"grid_step = {_fmt(cfg.optimizer.grid_step)}",
        "",
        "[optimizer.lbfgsb]",
        f"max_iter = {_fmt(cfg.optimizer.lbfgsb.max_iter)}",
        f"tol = {_fmt(cfg.optimizer.lbfgsb.tol)}",
    ]
    if cfg.optimizer.lbfgsb.fd_step is not None:
        lines.append(f"fd_step = {_fmt(cfg.optimizer.lbfgsb.fd_step)}")
    lines += [
        f"starts = {_fmt(cfg.optimizer.lbfgsb.starts)}",
        f"history = {_fmt(cfg.optimizer.lbfgsb.history)}",
        "",
        "[optimizer.ga]",
    ]
    g = cfg.optimizer.ga
    lines += [
        f"pop = {_fmt(g.pop)}",
        f"generations = {_fmt(g.generations)}",
        f"crossover_rate = {_fmt(g.crossover_rate)}",
        f"mutation_rate = {_fmt(g.mutation_rate)}",
        f"tournament_size = {_fmt(g.tournament_size)}",
        f"blend_alpha = {_fmt(g.blend_alpha)}",
        f"mutation_sigma = {_fmt(g.mutation_sigma)}",
        f"elitism = {_fmt(g.elitism)}",
        "",
        "[optimizer.pso]",
    ]
    p = cfg.optimizer.pso
    lines += [
        f"swarm = {_fmt(p.swarm)}",
        f"iterations = {_fmt(p.iterations)}",
        f"cognitive = {_fmt(p.cognitive)}",
        f"social = {_fmt(p.social)}",
        f"inertia = {_fmt(p.inertia)}",
    ]
    return "\n".join(lines) + "\n"
