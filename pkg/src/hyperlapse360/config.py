"""Run configuration: one JSON document covering every pipeline stage.

Each block mirrors the parameter set of the module it configures; values
are validated by constructing the module's own parameter objects, so the
invariants live in exactly one place.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import content, foe, stab360
from .errors import BadFileFormat
from .frameselect import FrameSelectParams
from .render import ZoomParams
from .stab2d import Stab2dParams
from .viewplan import PlanParams


@dataclass
class Stab360Config:
    smooth_sigma: float = stab360.SMOOTH_SIGMA


@dataclass
class FoeConfig:
    circle_steps: int = foe.CIRCLE_STEPS
    vote_stride: int = foe.VOTE_STRIDE
    flow_min: float = foe.FLOW_MIN
    downscale: int = 1
    smooth_sigma: float = 10.0  # frames; FOE track filter
    derotate: bool = True  # subtract estimated camera rotation before voting


@dataclass
class ContentConfig:
    labels: list[int] | None = None  # chosen semantic labels; None -> auto
    max_rois: int = 3  # per temporal subsequence
    subsequence: int = 2000  # frames
    saliency_window: int | None = content.SALIENCY_WINDOW
    saliency_sigma: float = content.SALIENCY_SIGMA
    fallback_block: int = 64  # grid regions when no id maps are supplied
    fallback_span: int = 50


@dataclass
class PlanConfig:
    w_r: float = 5.0
    w_f: float = 1.0
    w_v: float = 50.0
    w_a: float = 10.0
    sigma_t: float | None = None  # None -> 10x the selection speedup
    irls_iterations: int = 10
    irls_epsilon: float = 1e-4
    cg_tolerance: float = 1e-8
    cg_max_iterations: int | None = None
    normalize_saliency: bool = True

    def to_params(self, speedup: float) -> PlanParams:
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        if kw["sigma_t"] is None:
            kw["sigma_t"] = 10.0 * float(speedup)
        return PlanParams(**kw)


@dataclass
class SelectConfig:
    speedup: float = 10.0
    w_s: float = 5000.0
    w_v: float = 200.0
    w_a: float = 100.0
    tau_v: float = 200.0
    tau_a: float = 200.0
    tau_m_fraction: float = 0.1
    gamma_fraction: float = 0.5
    jump_window: int | None = None  # None -> ceil(2 * speedup)

    def to_params(self) -> FrameSelectParams:
        return FrameSelectParams(
            speedup=self.speedup,
            w_s=self.w_s,
            w_v_sel=self.w_v,
            w_a_sel=self.w_a,
            tau_v=self.tau_v,
            tau_a=self.tau_a,
            tau_m_fraction=self.tau_m_fraction,
            gamma_fraction=self.gamma_fraction,
            jump_window=self.jump_window,
        )


@dataclass
class ZoomConfig:
    aspect: float = 4.0 / 3.0
    target_ratio: float = 0.001
    default_fov: float = 100.0
    min_fov: float = 30.0
    smooth_sigma: float = 15.0

    def to_params(self) -> ZoomParams:
        return ZoomParams(
            aspect=self.aspect,
            target_ratio=self.target_ratio,
            default_fov=self.default_fov,
            min_fov=self.min_fov,
            smooth_sigma=self.smooth_sigma,
        )


@dataclass
class Stab2dConfig:
    smoothness: float = 2.0
    sigma: float = 2.0
    jacobi_iterations: int = 5

    def to_params(self) -> Stab2dParams:
        return Stab2dParams(
            smoothness=self.smoothness,
            sigma=self.sigma,
            jacobi_iterations=self.jacobi_iterations,
        )


@dataclass
class RenderConfig:
    out_width: int = 640
    out_height: int = 480
    ext: str = ".png"


_BLOCKS = {
    "stab360": Stab360Config,
    "foe": FoeConfig,
    "content": ContentConfig,
    "plan": PlanConfig,
    "select": SelectConfig,
    "zoom": ZoomConfig,
    "stab2d": Stab2dConfig,
    "render": RenderConfig,
}


@dataclass
class PipelineConfig:
    seed: int = 0
    stab360: Stab360Config = field(default_factory=Stab360Config)
    foe: FoeConfig = field(default_factory=FoeConfig)
    content: ContentConfig = field(default_factory=ContentConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    select: SelectConfig = field(default_factory=SelectConfig)
    zoom: ZoomConfig = field(default_factory=ZoomConfig)
    stab2d: Stab2dConfig = field(default_factory=Stab2dConfig)
    render: RenderConfig = field(default_factory=RenderConfig)

    def validate(self) -> "PipelineConfig":
        """Construct every module parameter object so its invariants fire."""
        try:
            self.plan.to_params(self.select.speedup)
            self.select.to_params()
            self.zoom.to_params()
            self.stab2d.to_params()
        except Exception as exc:
            raise BadFileFormat(f"config rejected: {exc}") from exc
        if self.render.out_width < 1 or self.render.out_height < 1:
            raise BadFileFormat("config rejected: output size must be positive")
        if self.render.ext not in (".png", ".ppm"):
            raise BadFileFormat(f"config rejected: unsupported frame format {self.render.ext!r}")
        if self.stab360.smooth_sigma < 0 or self.foe.smooth_sigma < 0:
            raise BadFileFormat("config rejected: smoothing sigmas must be nonnegative")
        if self.foe.circle_steps < 4 or self.foe.vote_stride < 1 or self.foe.downscale < 1:
            raise BadFileFormat("config rejected: FOE sampling parameters out of range")
        if self.content.max_rois < 1 or self.content.subsequence < 1:
            raise BadFileFormat("config rejected: content selection parameters out of range")
        if self.content.fallback_block < 1 or self.content.fallback_span < 1:
            raise BadFileFormat("config rejected: fallback segmentation grid out of range")
        if self.content.labels is not None and any(l < 0 for l in self.content.labels):
            raise BadFileFormat("config rejected: semantic labels must be nonnegative")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def config_from_dict(data: dict) -> PipelineConfig:
    """Build a validated config; unknown keys are rejected, missing use defaults."""
    if not isinstance(data, dict):
        raise BadFileFormat("config must be a JSON object")
    cfg = PipelineConfig()
    for key, value in data.items():
        if key == "seed":
            if not isinstance(value, int) or isinstance(value, bool):
                raise BadFileFormat("config rejected: seed must be an integer")
            cfg.seed = value
            continue
        block_type = _BLOCKS.get(key)
        if block_type is None:
            raise BadFileFormat(f"unknown config section {key!r}")
        if not isinstance(value, dict):
            raise BadFileFormat(f"config section {key!r} must be an object")
        known = {f.name for f in fields(block_type)}
        for name in value:
            if name not in known:
                raise BadFileFormat(f"unknown config key {key}.{name}")
        setattr(cfg, key, block_type(**value))
    return cfg.validate()


def load_config(path: str | Path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise BadFileFormat(f"{path}: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: PipelineConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_override_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text  # bare strings may be given unquoted


def apply_overrides(cfg: PipelineConfig, pairs: list[str]) -> PipelineConfig:
    """Apply dotted-path overrides like plan.w_r=3 or content.labels=[1,2]."""
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep:
            raise BadFileFormat(f"override {pair!r} is not of the form key=value")
        parts = key.strip().split(".")
        value = _parse_override_value(raw.strip())
        if len(parts) == 1 and parts[0] == "seed":
            if not isinstance(value, int) or isinstance(value, bool):
                raise BadFileFormat("config rejected: seed must be an integer")
            cfg.seed = value
            continue
        if len(parts) != 2 or parts[0] not in _BLOCKS:
            raise BadFileFormat(f"unknown config key {key!r}")
        block = getattr(cfg, parts[0])
        if parts[1] not in {f.name for f in fields(block)}:
            raise BadFileFormat(f"unknown config key {key!r}")
        setattr(block, parts[1], value)
    return cfg.validate()
