"""Run configuration: a flat dotted-key text format plus the RunConfig type.

File syntax, one assignment per line::

    # comment
    prompt = "a ceramic figurine"
    seed = 7
    plan.grid_double_steps = [500, 1500, 2000]
    render.background = random
    plan.none = true

Values parse as JSON where possible (numbers, booleans, null, lists,
quoted strings); anything else is taken as a bare string. Command lines
accept the same dotted keys as overrides (``--plan.coarse_iters 200`` or
``--plan.none``). Defaults reproduce the reference recipe exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .body_model import (BodyTemplate, JOINT_COUNT, PoseParams, ShapeParams,
                         desk_template, load_template_json, load_template_npz)
from .errors import ConfigError
from .guidance import (NoiseSchedule, WEIGHT_MODES, builtin_silhouette_oracle,
                       builtin_target_oracle, external_oracle)
from .optimize import OptimizerHP
from .regularize import SmoothConfig
from .schedule import StagePlan


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat dict of dotted keys to parsed values; raises ConfigError with a
    line diagnostic on malformed input."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = _parse_value(value.strip(), source, lineno)
    return out


def _parse_value(token: str, source: str, lineno: int):
    if token == "":
        return None
    try:
        return json.loads(token)
    except json.JSONDecodeError:
        if token.startswith(("[", "{", '"')):
            raise ConfigError(f"{source}:{lineno}: malformed value {token!r}")
        return token


def parse_override(token: str) -> tuple[str, object]:
    """One command-line override: 'key=value' or a bare key (-> true)."""
    if "=" in token:
        key, _, value = token.partition("=")
        return key.strip(), _parse_value(value.strip(), "<override>", 0)
    return token.strip(), True


@dataclass
class RunConfig:
    prompt: str = "a person"
    seed: int = 0
    output_dir: str = "runs/out"
    template_path: str | None = None
    beta: tuple = tuple([0.0] * 10)
    xi: tuple | None = None              # flat K*3 floats; None = canonical pose
    plan: StagePlan = dc_field(default_factory=StagePlan)
    smooth: SmoothConfig = dc_field(default_factory=SmoothConfig)
    # oracle
    oracle_kind: str = "silhouette"      # silhouette | target | external
    oracle_target: str | None = None     # .npy image path for kind=target
    oracle_endpoint: str | None = None   # tcp:host:port or stdio:cmd
    oracle_timeout: float = 30.0
    cfg_scale: float = 7.5
    # noise schedule
    noise_steps: int = 1000
    noise_t_min: float = 0.02
    noise_t_max: float = 0.98
    weight_mode: str = "one_minus_alpha_bar"
    # rendering
    resolution: int = 64
    fov_y: float = 50.0
    step_fraction: float = 0.5
    background: object = "random"        # "random" or RGB triple
    early_stop: float = 1e-4
    # optimizer
    lr_density: float = 0.1
    lr_color: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    # initialization
    bounds_pad: float = 0.25
    body_bias_strength: float = 2.0
    snapshot_every: int = 500

    def __post_init__(self):
        if self.weight_mode not in WEIGHT_MODES:
            raise ConfigError(f"weight_mode must be one of {WEIGHT_MODES}")
        if self.oracle_kind not in ("silhouette", "target", "external"):
            raise ConfigError("oracle kind must be silhouette, target or external")

    def shape_params(self) -> ShapeParams:
        return ShapeParams(np.asarray(self.beta, dtype=np.float64))

    def pose_params(self) -> PoseParams | None:
        if self.xi is None:
            return None
        xi = np.asarray(self.xi, dtype=np.float64).reshape(-1, 3)
        return PoseParams(xi)

    def optimizer_hp(self) -> OptimizerHP:
        return OptimizerHP(lr_density=self.lr_density, lr_color=self.lr_color,
                           beta1=self.beta1, beta2=self.beta2, eps=self.adam_eps)


_PLAN_KEYS = {
    "grid_double_steps", "bbox_shrink_step", "bbox_threshold", "radius_stages",
    "radius_stage_steps", "radius_decay_mode", "focus_start_step",
    "focus_probability", "focus_resolution", "final_n_voxels", "coarse_iters",
    "elevation_range",
}
_SMOOTH_KEYS = {"kernel_size", "sigma", "coefficient", "on_raw_grid"}

_TOP_ALIASES = {
    "pose.beta": "beta",
    "pose.xi": "xi",
    "oracle.kind": "oracle_kind",
    "oracle.target": "oracle_target",
    "oracle.endpoint": "oracle_endpoint",
    "oracle.timeout": "oracle_timeout",
    "oracle.cfg_scale": "cfg_scale",
    "noise.steps": "noise_steps",
    "noise.t_min": "noise_t_min",
    "noise.t_max": "noise_t_max",
    "noise.weight_mode": "weight_mode",
    "render.resolution": "resolution",
    "render.fov_y": "fov_y",
    "render.step_fraction": "step_fraction",
    "render.background": "background",
    "render.early_stop": "early_stop",
    "opt.lr_density": "lr_density",
    "opt.lr_color": "lr_color",
    "opt.beta1": "beta1",
    "opt.beta2": "beta2",
    "opt.eps": "adam_eps",
    "init.bounds_pad": "bounds_pad",
    "init.body_bias_strength": "body_bias_strength",
    "run.snapshot_every": "snapshot_every",
    "template": "template_path",
}


def config_from_flat(flat: dict) -> RunConfig:
    """Build a RunConfig from dotted keys (file contents merged with
    overrides)."""
    plan_kw: dict = {}
    smooth_kw: dict = {}
    top: dict = {}
    plan_none = False
    for key, value in flat.items():
        if key == "plan.none":
            plan_none = bool(value)
            continue
        if key.startswith("plan."):
            sub = key[5:]
            if sub not in _PLAN_KEYS:
                raise ConfigError(f"unknown plan key {key!r}")
            plan_kw[sub] = _coerce_plan_value(sub, value)
            continue
        if key.startswith("smooth."):
            sub = key[7:]
            if sub not in _SMOOTH_KEYS:
                raise ConfigError(f"unknown smooth key {key!r}")
            smooth_kw[sub] = value
            continue
        name = _TOP_ALIASES.get(key, key)
        if name not in RunConfig.__dataclass_fields__:
            raise ConfigError(f"unknown config key {key!r}")
        top[name] = value
    if "background" in top:
        top["background"] = _coerce_background(top["background"])
    if "beta" in top:
        top["beta"] = tuple(float(v) for v in top["beta"])
    if "xi" in top and top["xi"] is not None:
        if top["xi"] in ("zeros", "canonical"):
            top["xi"] = None
        else:
            top["xi"] = tuple(float(v) for v in top["xi"])
    plan = StagePlan.none(**plan_kw) if plan_none else StagePlan(**plan_kw)
    smooth = SmoothConfig(**smooth_kw)
    try:
        return RunConfig(plan=plan, smooth=smooth, **top)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _coerce_plan_value(key, value):
    if key in ("grid_double_steps", "radius_stage_steps"):
        return tuple(int(v) for v in (value or []))
    if key == "radius_stages":
        return tuple((float(a), float(b)) for a, b in value)
    if key == "elevation_range":
        return tuple(float(v) for v in value)
    return value


def _coerce_background(value):
    if isinstance(value, str):
        if value == "random":
            return "random"
        parts = value.split(",")
        if len(parts) == 3:
            return tuple(float(p) for p in parts)
        raise ConfigError(f"background must be 'random' or an RGB triple, got {value!r}")
    if isinstance(value, (list, tuple)) and len(value) == 3:
        return tuple(float(v) for v in value)
    raise ConfigError(f"background must be 'random' or an RGB triple, got {value!r}")


def load_config(path, overrides=()) -> RunConfig:
    flat = parse_config_text(Path(path).read_text(), source=str(path))
    for token in overrides:
        key, value = parse_override(token)
        flat[key] = value
    return config_from_flat(flat)


def config_to_text(config: RunConfig) -> str:
    """Round-trippable dump of a config (dotted-key format)."""
    lines = [
        f"prompt = {json.dumps(config.prompt)}",
        f"seed = {config.seed}",
        f"output_dir = {json.dumps(config.output_dir)}",
        f"pose.beta = {json.dumps(list(config.beta))}",
        f"pose.xi = {'zeros' if config.xi is None else json.dumps(list(config.xi))}",
        f"plan.grid_double_steps = {json.dumps(list(config.plan.grid_double_steps))}",
        f"plan.bbox_shrink_step = {json.dumps(config.plan.bbox_shrink_step)}",
        f"plan.bbox_threshold = {config.plan.bbox_threshold}",
        f"plan.radius_stages = {json.dumps([list(s) for s in config.plan.radius_stages])}",
        f"plan.radius_stage_steps = {json.dumps(list(config.plan.radius_stage_steps))}",
        f"plan.focus_start_step = {json.dumps(config.plan.focus_start_step)}",
        f"plan.focus_probability = {config.plan.focus_probability}",
        f"plan.focus_resolution = {config.plan.focus_resolution}",
        f"plan.final_n_voxels = {config.plan.final_n_voxels}",
        f"plan.coarse_iters = {config.plan.coarse_iters}",
        f"smooth.kernel_size = {config.smooth.kernel_size}",
        f"smooth.sigma = {config.smooth.sigma}",
        f"smooth.coefficient = {config.smooth.coefficient}",
        f"oracle.kind = {config.oracle_kind}",
        f"render.resolution = {config.resolution}",
        f"render.background = "
        + ("random" if config.background == "random"
           else json.dumps(list(config.background))),
        f"opt.lr_density = {config.lr_density}",
        f"opt.lr_color = {config.lr_color}",
    ]
    return "\n".join(lines) + "\n"


def load_body(config: RunConfig) -> BodyTemplate:
    if config.template_path is None:
        return desk_template()
    path = str(config.template_path)
    if path.endswith(".npz"):
        return load_template_npz(path)
    return load_template_json(path)


def build_oracle(config: RunConfig, schedule: NoiseSchedule):
    if config.oracle_kind == "silhouette":
        return builtin_silhouette_oracle(schedule)
    if config.oracle_kind == "target":
        if not config.oracle_target:
            raise ConfigError("oracle.kind=target needs oracle.target (a .npy image)")
        img = np.load(config.oracle_target)
        return builtin_target_oracle(np.asarray(img, dtype=np.float64), schedule)
    if config.oracle_kind == "external":
        if not config.oracle_endpoint:
            raise ConfigError("oracle.kind=external needs oracle.endpoint")
        return external_oracle(config.oracle_endpoint, schedule=schedule,
                               timeout=config.oracle_timeout,
                               cfg_scale=config.cfg_scale)
    raise ConfigError(f"unknown oracle kind {config.oracle_kind!r}")
