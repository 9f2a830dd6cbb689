"""Schema-validated run configuration (YAML file + env + flag overrides)."""

import os
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import DomainError

ENV_PREFIX = "FRSBD_"


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TriggerConfig(Strict):
    kind: Literal["badnets_bordered", "badnets_random_patch", "sig", "solid_square", "file_pattern"]
    size: float = Field(64, gt=0)
    alpha: float = Field(1.0, ge=0, le=1)
    placement: Literal["bottom_right", "random_square", "full_region", "centered"] = "bottom_right"
    frequency: float = Field(6.0, gt=0)
    amplitude: float = Field(1.0, gt=0, le=1)
    border_width: int = Field(4, ge=0)
    color: tuple[float, float, float] = (0.0, 0.0, 1.0)
    seed: Optional[int] = None
    pattern_path: Optional[str] = None


class PlanConfig(Strict):
    attack: Literal["fga", "lsa", "antispoof_flip", "extractor_pl", "extractor_cl", "mf_pl"]
    beta: float = Field(0.1, gt=0, lt=1)
    target_identity: Optional[Union[int, str]] = None
    rotation_degrees: float = 30.0
    rotation_center: Literal["box", "origin"] = "box"
    trigger: TriggerConfig

    @model_validator(mode="after")
    def _target(self):
        if self.attack in ("extractor_pl", "extractor_cl") and self.target_identity is None:
            raise ValueError(f"{self.attack} requires target_identity")
        return self


class Common(Strict):
    seed: int = Field(0, ge=0, lt=2**64)
    workers: int = Field(1, ge=1)
    out: str


class PoisonConfig(Common):
    manifest: str
    image_root: Optional[str] = None
    plan: PlanConfig


class SyntheticConfig(Strict):
    n_identities: int = Field(16, ge=1)
    live_per_identity: int = Field(8, ge=1)
    spoof_per_identity: int = Field(8, ge=0)
    image_size: int = Field(128, ge=8)
    face_size: int = Field(112, ge=8)
    jitter: int = Field(4, ge=0)


class SynthConfig(Common, SyntheticConfig):
    pass


class BuildConfig(Strict):
    n_identities: int = Field(256, ge=1)
    per_class: int = Field(8, ge=1)


class BenchmarkConfig(Strict):
    manifest: Optional[str] = None
    image_root: Optional[str] = None
    build: Optional[BuildConfig] = None
    synthetic: Optional[SyntheticConfig] = None

    @model_validator(mode="after")
    def _source(self):
        if (self.manifest is None) == (self.synthetic is None):
            raise ValueError("give exactly one of manifest or synthetic")
        return self


class StageConfig(Strict):
    type: Literal["oracle", "scripted", "constant", "toy"]
    path: Optional[str] = None
    score: float = Field(1.0, ge=0, le=1)
    patch_weight: float = 50.0
    gate: float = Field(0.5, ge=0, lt=1)
    probe: Optional[TriggerConfig] = None

    @model_validator(mode="after")
    def _needs(self):
        if self.type == "scripted" and not self.path:
            raise ValueError("scripted stage requires path")
        return self


class StagesConfig(Strict):
    detector: StageConfig = StageConfig(type="oracle")
    antispoofer: StageConfig = StageConfig(type="oracle")
    extractor: StageConfig
    thread_safe: bool = True


class ThresholdConfig(Strict):
    delta: Optional[float] = None
    far_target: float = Field(1e-3, gt=0, le=1)
    liveness: float = Field(0.5, ge=0, le=1)


class EvalRunConfig(Common):
    benchmark: BenchmarkConfig
    stages: StagesConfig
    probe: Optional[PlanConfig] = None
    thresholds: ThresholdConfig = ThresholdConfig()
    pairing: Literal["a2o", "mf"] = "a2o"
    subset: Literal["auto", "live", "spoof", "all"] = "auto"
    iou_threshold: float = Field(0.5, gt=0, le=1)


class FactorsConfig(Strict):
    ap: float = Field(ge=0, le=1)
    far: float = Field(ge=0, le=1)
    fmr: float = Field(ge=0, le=1)


class MetricsConfig(Common):
    metric: Literal["eer", "auc", "far_frr", "frr_at_far", "fmr", "det", "ap", "asr_lsa", "sr"]
    scores: Optional[str] = None
    threshold: Optional[float] = None
    far_target: float = Field(1e-3, gt=0, le=1)
    detections: Optional[str] = None
    iou_threshold: float = Field(0.5, gt=0, le=1)
    cases: Optional[str] = None
    factors: Optional[FactorsConfig] = None

    @model_validator(mode="after")
    def _inputs(self):
        need = {"eer": "scores", "auc": "scores", "far_frr": "scores", "frr_at_far": "scores",
                "fmr": "scores", "det": "scores", "ap": "detections", "asr_lsa": "cases",
                "sr": "factors"}[self.metric]
        if getattr(self, need) is None:
            raise ValueError(f"metric {self.metric} requires {need}")
        if self.metric in ("far_frr", "fmr") and self.threshold is None:
            raise ValueError(f"metric {self.metric} requires threshold")
        return self


class DefenseConfigModel(Strict):
    kappa: int = Field(ge=2)
    sb: int = Field(500, ge=1)
    bi: int = Field(500, ge=1)
    n: int = Field(10, ge=1)
    direction: Literal["max_accuracy", "min_accuracy"] = "max_accuracy"


class SyntheticStreamConfig(Strict):
    batch_size: int = Field(128, ge=1)
    tau_benign: float = Field(1000.0, gt=0)
    tau_poison: float = Field(200.0, gt=0)
    poisoned_identity: Optional[int] = 0
    n_batches: int = Field(5000, ge=1)


class StreamConfig(Strict):
    synthetic: Optional[SyntheticStreamConfig] = None
    replay: Optional[str] = None

    @model_validator(mode="after")
    def _one(self):
        if (self.synthetic is None) == (self.replay is None):
            raise ValueError("give exactly one of synthetic or replay")
        return self


class DefendConfig(Common):
    defense: DefenseConfigModel
    stream: StreamConfig


SCHEMAS = {
    "poison": PoisonConfig,
    "eval": EvalRunConfig,
    "metrics": MetricsConfig,
    "defend": DefendConfig,
    "synth": SynthConfig,
}


def _set_path(d, dotted, value):
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        nxt = cur.setdefault(k, {})
        if not isinstance(nxt, dict):
            raise DomainError(f"cannot set {dotted}: {k} is not a mapping")
        cur = nxt
    cur[keys[-1]] = value


def load_config(command, path=None, overrides=None, env=None):
    """Merge file < environment < flag overrides and validate against the schema.

    ``overrides`` maps dotted keys to values. Environment variables
    ``FRSBD_SEED``, ``FRSBD_WORKERS`` and ``FRSBD_OUT`` override the file.
    """
    raw = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise DomainError(f"{path}: top level must be a mapping")
    env = os.environ if env is None else env
    for key in ("seed", "workers", "out"):
        val = env.get(ENV_PREFIX + key.upper())
        if val is not None:
            raw[key] = yaml.safe_load(val)
    for key, val in (overrides or {}).items():
        _set_path(raw, key, val)
    return SCHEMAS[command].model_validate(raw)
