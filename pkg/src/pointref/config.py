"""Run configuration loaded from YAML (or JSON, which YAML accepts)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import yaml

from .ensemble import EnsembleConfig
from .exceptions import ValidationError
from .heatmap import HeatmapSpec
from .losses import BoxLossWeights, LossWeights
from .metrics import DEFAULT_THRESHOLDS, LARGE_AREA_RATIO, SMALL_AREA_RATIO


@dataclass(frozen=True)
class RunConfig:
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    heatmap: HeatmapSpec = field(default_factory=HeatmapSpec)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    box_loss: BoxLossWeights = field(default_factory=BoxLossWeights)
    iou_thresholds: Tuple[float, ...] = DEFAULT_THRESHOLDS
    size_thresholds: Tuple[float, float] = (SMALL_AREA_RATIO, LARGE_AREA_RATIO)
    output_dir: Optional[str] = None

    def __post_init__(self):
        if not self.iou_thresholds or not all(0.0 < t <= 1.0 for t in self.iou_thresholds):
            raise ValidationError("IoU thresholds must lie in (0, 1]", field="iou_thresholds")
        small, large = self.size_thresholds
        if not 0.0 < small < large < 1.0:
            raise ValidationError("size thresholds need 0 < small < large < 1", field="size_thresholds")

    def to_dict(self) -> dict:
        heat = asdict(self.heatmap)
        heat["style"] = self.heatmap.style.value
        heat["line"] = self.heatmap.line.value
        heat["cone_half_angle_deg"] = round(math.degrees(heat.pop("cone_half_angle")), 9)
        return {
            "ensemble": asdict(self.ensemble),
            "heatmap": heat,
            "loss_weights": asdict(self.loss_weights),
            "box_loss": asdict(self.box_loss),
            "evaluation": {
                "iou_thresholds": list(self.iou_thresholds),
                "size_thresholds": list(self.size_thresholds),
            },
            "output": {"dir": self.output_dir},
        }


def _section(raw, name, allowed):
    section = raw.get(name) or {}
    if not isinstance(section, dict):
        raise ValidationError(f"config section {name!r} must be a mapping", field=name)
    unknown = set(section) - set(allowed)
    if unknown:
        raise ValidationError(f"unknown keys in {name!r}: {sorted(unknown)}", field=name)
    return section


def config_from_dict(raw: dict) -> RunConfig:
    raw = raw or {}
    unknown = set(raw) - {"ensemble", "heatmap", "loss_weights", "box_loss", "evaluation", "output"}
    if unknown:
        raise ValidationError(f"unknown config sections {sorted(unknown)}", field="config")
    try:
        ens = EnsembleConfig(**_section(raw, "ensemble", ("top2_threshold", "fusion_scale", "small_area_ratio")))
        heat = dict(_section(raw, "heatmap", ("style", "line", "sigma", "cone_half_angle_deg")))
        if "cone_half_angle_deg" in heat:
            heat["cone_half_angle"] = math.radians(float(heat.pop("cone_half_angle_deg")))
        spec = HeatmapSpec(**heat)
        weights = LossWeights(**_section(raw, "loss_weights", LossWeights.__dataclass_fields__))
        box = BoxLossWeights(**_section(raw, "box_loss", ("l1", "giou")))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"invalid config value: {exc}", field="config") from exc
    ev = _section(raw, "evaluation", ("iou_thresholds", "size_thresholds"))
    out = _section(raw, "output", ("dir",))
    return RunConfig(
        ensemble=ens,
        heatmap=spec,
        loss_weights=weights,
        box_loss=box,
        iou_thresholds=tuple(float(t) for t in ev.get("iou_thresholds", DEFAULT_THRESHOLDS)),
        size_thresholds=tuple(float(t) for t in ev.get("size_thresholds", (SMALL_AREA_RATIO, LARGE_AREA_RATIO))),
        output_dir=out.get("dir"),
    )


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(Path(path), encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ValidationError(f"{path}: not valid YAML: {exc}", field="config") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ValidationError(f"{path}: top level must be a mapping", field="config")
    return config_from_dict(raw)
