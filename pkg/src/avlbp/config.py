"""Flat ``key = value`` run configuration covering every stage's defaults."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import AvlbpError


class ConfigError(AvlbpError, ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # matched filter bank
    mf_sigma: float = 2.0
    mf_length: float = 9.0
    mf_orientations: int = 12
    # threshold probing
    probe_threshold_high: float = 100.0
    probe_threshold_low: float = 40.0
    probe_threshold_step: float = 10.0
    probe_min_region_size: int = 10
    probe_max_region_size: int = 400
    probe_fill_ratio_limit: float = 0.5
    segment_channel: str = "green"
    # skeleton
    min_object_size: int = 50
    max_spur_length: int = 5
    min_segment_length: int = 3
    # features
    lbp_scales: str = "8:1,8:2"
    lbp_rotation_invariant: bool = True
    lbp_window: int = 15
    lbp_channel: str = "green"
    rgb_half_width: int = 2
    label_radius: float = 2.0
    pca_components: int = 4
    # classifier
    classifier: str = "random_forest"
    n_trees: int = 100
    max_depth: int = 0
    min_leaf: int = 1
    voting_members: str = "naive_bayes,cart,random_tree"
    classifier_seed: int = 0
    # evaluation
    cv_folds: int = 10
    cv_seed: int = 0
    cv_group_by_image: bool = False
    # synthetic data
    synth_images: int = 20
    synth_width: int = 320
    synth_height: int = 320
    synth_vessels: int = 10
    synth_noise_sigma: float = 3.0
    synth_reflex_amplitude: float = 22.0
    synth_seed: int = 0

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **overrides) -> "RunConfig":
        known = {f.name for f in fields(self)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return dataclasses.replace(self, **{k: _coerce(k, v) for k, v in overrides.items()})

    def lbp_configs(self):
        from .lbp import LbpConfig

        out = []
        for item in self.lbp_scales.split(","):
            try:
                p, r = item.strip().split(":")
                out.append(LbpConfig(int(p), float(r), self.lbp_rotation_invariant))
            except ValueError as exc:
                raise ConfigError(f"bad lbp_scales entry {item!r}: {exc}") from exc
        return out

    def format(self) -> str:
        return "".join(f"{k} = {_render(v)}\n" for k, v in self.as_dict().items())


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(key: str, value):
    kind = _TYPES[key]
    if not isinstance(value, str):
        if kind == "float" and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        return value
    text = value.strip()
    try:
        if kind == "bool":
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc
    return text


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        values[key] = value
    return (base or RunConfig()).replace(**values)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())
