"""
Flat ``group.key=value`` configuration.

Every parameter group has paper defaults; a config file overrides any
subset. Values are typed by the default they replace (tuples are
comma-separated). Loading validates every group before returning.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .codecs import parse_kv
from .errors import ConfigError, LoadError
from .eef_evolution import EefParams
from .grasp_feasibility import GripperSpec
from .nav_belief import NavParams
from .object_cascade import CascadeParams


@dataclass
class GeometryParams:
    z_band_min: float = 0.3
    z_band_max: float = 2.0
    d_min: float = 0.30
    leaf: float = 0.01
    ransac_thresh: float = 0.0085
    ransac_iters: int = 2000
    ransac_remove: float = 0.005
    ransac_downsample: float = 0.002
    normal_radius: float = 0.005
    k_nn: int = 5
    feature_alpha: float = 0.1
    min_cluster_size: int = 15
    cluster_eps: float = 0.02
    cluster_min_samples: int = 5

    def validate(self) -> None:
        if not 0 <= self.z_band_min < self.z_band_max:
            raise ConfigError("need 0 <= geometry.z_band_min < geometry.z_band_max")
        for name in ("d_min", "leaf", "ransac_thresh", "ransac_remove", "normal_radius", "cluster_eps"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"geometry.{name} must be > 0")
        if self.ransac_downsample < 0 or self.feature_alpha < 0:
            raise ConfigError("geometry.ransac_downsample and feature_alpha must be >= 0")
        if min(self.ransac_iters, self.k_nn, self.min_cluster_size, self.cluster_min_samples) < 1:
            raise ConfigError("geometry integer counts must be >= 1")


@dataclass
class FusionParams:
    tau: float = 0.9
    eps: float = 1e-8
    max_area_frac: float = 0.25
    tau_conf: float = 0.4

    def validate(self) -> None:
        if not (0 <= self.tau < 1 and self.eps > 0 and 0 < self.max_area_frac <= 1 and 0 <= self.tau_conf <= 1):
            raise ConfigError("fusion parameters out of range")


@dataclass
class EvalParams:
    hold: float = 0.5

    def validate(self) -> None:
        if not self.hold >= 0:
            raise ConfigError("eval.hold must be >= 0")


@dataclass
class Config:
    nav: NavParams = field(default_factory=NavParams)
    geometry: GeometryParams = field(default_factory=GeometryParams)
    fusion: FusionParams = field(default_factory=FusionParams)
    grasp: GripperSpec = field(default_factory=GripperSpec)
    cascade: CascadeParams = field(default_factory=CascadeParams)
    eef: EefParams = field(default_factory=EefParams)
    eval: EvalParams = field(default_factory=EvalParams)

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            getattr(self, f.name).validate()


GROUPS = tuple(f.name for f in dataclasses.fields(Config))


def _convert(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0"):
                raise ValueError(f"not a boolean: {raw!r}")
            return low in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(p) for p in raw.split(",") if p.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value).lower() if isinstance(value, bool) else str(value)


def config_from_items(items: dict[str, str], path=None) -> Config:
    overrides: dict[str, dict] = {g: {} for g in GROUPS}
    defaults = Config()
    for key, raw in items.items():
        group, _, name = key.partition(".")
        if group not in overrides or not name:
            raise ConfigError(f"unknown config key {key!r}" + (f" in {path}" if path else ""))
        target = getattr(defaults, group)
        valid = {f.name for f in dataclasses.fields(target)}
        if name not in valid:
            raise ConfigError(f"unknown config key {key!r}" + (f" in {path}" if path else ""))
        overrides[group][name] = _convert(raw, getattr(target, name), key)
    cfg = Config(**{g: dataclasses.replace(getattr(defaults, g), **overrides[g]) for g in GROUPS})
    cfg.validate()
    return cfg


def load_config(path=None) -> Config:
    if path is None:
        cfg = Config()
        cfg.validate()
        return cfg
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        items = parse_kv(text, path)
    except LoadError as exc:
        raise ConfigError(str(exc)) from None
    return config_from_items(items, path)


def dump_config(cfg: Config) -> str:
    lines = []
    for g in GROUPS:
        grp = getattr(cfg, g)
        for f in dataclasses.fields(grp):
            lines.append(f"{g}.{f.name}={_format(getattr(grp, f.name))}")
    return "\n".join(lines) + "\n"
