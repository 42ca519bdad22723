"""Progressive high-resolution generation plan.

Three coupled schedules drive the coarse optimization: the voxel budget
doubles at fixed checkpoints (starting from final / 2^n_doublings), the
bounding box shrinks once around the occupied region, and the camera radius
range steps down in stages. Focus mode additionally aims close-up cameras
at configured body regions from a given step on.

The defaults reproduce the reference recipe exactly: doublings at
iterations 500/1500/2000, box shrink at 3000 with activated-density
threshold 0.1, radius stages (1.4, 2.1) / (1.0, 1.5) / (0.8, 1.2) switching
at 1000/2000, focus mode from step 1000 at 512 x 512.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInputError
from .raster import Camera


@dataclass
class StagePlan:
    grid_double_steps: tuple = (500, 1500, 2000)
    bbox_shrink_step: int | None = 3000
    bbox_threshold: float = 0.1
    radius_stages: tuple = ((1.4, 2.1), (1.0, 1.5), (0.8, 1.2))
    radius_stage_steps: tuple = (1000, 2000)
    radius_decay_mode: str = "stages"   # "stages" or "relative" (-20% per checkpoint)
    focus_start_step: int | None = 1000
    focus_probability: float = 0.3
    focus_resolution: int = 512
    final_n_voxels: int = 160 ** 3
    coarse_iters: int = 5000
    elevation_range: tuple = (-10.0, 60.0)

    def __post_init__(self):
        steps = tuple(int(s) for s in self.grid_double_steps)
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ConfigError("grid_double_steps must be strictly increasing")
        self.grid_double_steps = steps
        rss = tuple(int(s) for s in self.radius_stage_steps)
        if any(b <= a for a, b in zip(rss, rss[1:])):
            raise ConfigError("radius_stage_steps must be strictly increasing")
        self.radius_stage_steps = rss
        stages = tuple((float(a), float(b)) for a, b in self.radius_stages)
        if not stages:
            raise ConfigError("need at least one radius stage")
        for a, b in stages:
            if not 0 < a < b:
                raise ConfigError(f"radius stage must have 0 < r_min < r_max, got ({a}, {b})")
        for (a0, b0), (a1, b1) in zip(stages, stages[1:]):
            if a1 > a0 or b1 > b0:
                raise ConfigError("radius stages must be non-increasing in both bounds")
        if len(rss) != len(stages) - 1:
            raise ConfigError("need one radius_stage_step per stage transition")
        self.radius_stages = stages
        if not 0 <= self.focus_probability <= 1:
            raise ConfigError("focus_probability must lie in [0, 1]")
        if self.final_n_voxels < 8:
            raise ConfigError("final_n_voxels must be >= 8")

    @classmethod
    def none(cls, **overrides) -> "StagePlan":
        """All progressive strategies off (the ablation baseline)."""
        kw = dict(grid_double_steps=(), bbox_shrink_step=None,
                  radius_stages=((1.4, 2.1),), radius_stage_steps=(),
                  focus_start_step=None)
        kw.update(overrides)
        return cls(**kw)


def grid_plan(step: int, plan: StagePlan) -> int:
    """Target voxel count at this step: final / 2^(doublings still ahead)."""
    if step < 0:
        raise InvalidInputError("step must be >= 0")
    remaining = sum(1 for s in plan.grid_double_steps if s > step)
    return max(8, int(round(plan.final_n_voxels / 2 ** remaining)))


def radius_range(step: int, plan: StagePlan) -> tuple[float, float]:
    """Camera radius range of the stage active at this step."""
    if step < 0:
        raise InvalidInputError("step must be >= 0")
    if plan.radius_decay_mode == "relative":
        # the alternative prose rule: drop both bounds 20% per checkpoint
        r_min, r_max = plan.radius_stages[0]
        passed = sum(1 for s in plan.radius_stage_steps if step >= s)
        f = 0.8 ** passed
        return (r_min * f, r_max * f)
    stage = sum(1 for s in plan.radius_stage_steps if step >= s)
    return plan.radius_stages[stage]


def sample_camera(step: int, plan: StagePlan, rng: np.random.Generator,
                  target=(0.0, 0.0, 0.0), fov_y: float = 50.0,
                  width: int = 64, height: int = 64) -> Camera:
    """Random full-body viewpoint: azimuth uniform on the circle, elevation
    uniform in the configured band, radius uniform in the active stage."""
    azimuth = rng.uniform(0.0, 360.0)
    elevation = rng.uniform(*plan.elevation_range)
    r_min, r_max = radius_range(step, plan)
    radius = rng.uniform(r_min, r_max)
    return Camera(radius=radius, azimuth=azimuth, elevation=elevation,
                  target=tuple(target), fov_y=fov_y, width=width, height=height)


_DEFAULT_REGIONS = {
    "head": (12, 15),
    "left_hand": (20, 22),
    "right_hand": (21, 23),
    "torso": (0, 3, 6, 9),
    "left_foot": (7, 10),
    "right_foot": (8, 11),
}

_DEFAULT_DISTANCES = {
    "head": (0.35, 0.5),
    "left_hand": (0.25, 0.4),
    "right_hand": (0.25, 0.4),
    "torso": (0.5, 0.8),
    "left_foot": (0.25, 0.4),
    "right_foot": (0.25, 0.4),
}


@dataclass
class FocusTargets:
    """Named body regions (joint index sets) with per-region camera distance
    ranges for focus mode."""

    regions: dict = field(default_factory=lambda: dict(_DEFAULT_REGIONS))
    distances: dict = field(default_factory=lambda: dict(_DEFAULT_DISTANCES))

    def validate(self, joint_count: int) -> None:
        if not self.regions:
            raise ConfigError("focus targets need at least one region")
        for name, joints in self.regions.items():
            if len(joints) == 0:
                raise ConfigError(f"focus region {name!r} has no joints")
            if any(not 0 <= j < joint_count for j in joints):
                raise ConfigError(f"focus region {name!r} references invalid joints")
            if name not in self.distances:
                raise ConfigError(f"focus region {name!r} has no distance range")
            lo, hi = self.distances[name]
            if not 0 < lo < hi:
                raise ConfigError(f"focus region {name!r} distance range invalid")


def focus_camera(step: int, plan: StagePlan, targets: FocusTargets,
                 joints: np.ndarray, rng: np.random.Generator,
                 fov_y: float = 50.0) -> Camera | None:
    """Close-up camera at a random body region, or None.

    Activates with probability focus_probability once step reaches
    focus_start_step; the target is the centroid of the region's posed
    joints. Draws from the rng only when focus mode is live so disabling it
    does not shift the random stream of a run.
    """
    if plan.focus_start_step is None or step < plan.focus_start_step:
        return None
    if rng.uniform() >= plan.focus_probability:
        return None
    names = sorted(targets.regions)
    name = names[int(rng.integers(len(names)))]
    joint_ids = list(targets.regions[name])
    center = np.mean(joints[joint_ids], axis=0)
    lo, hi = targets.distances[name]
    radius = rng.uniform(lo, hi)
    azimuth = rng.uniform(0.0, 360.0)
    elevation = rng.uniform(*plan.elevation_range)
    res = plan.focus_resolution
    return Camera(radius=radius, azimuth=azimuth, elevation=elevation,
                  target=tuple(center), fov_y=fov_y, width=res, height=res)
