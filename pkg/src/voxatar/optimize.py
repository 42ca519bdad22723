"""The coarse-stage training loop.

Per iteration: apply any schedule event (grid doubling, box shrink), pick a
camera (focus or full-body), render the field and rasterize the condition
image from that one camera, query the guidance oracle for the pixel-space
SDS factor, propagate it through the renderer's adjoint, add the weighted
smoothness gradient, and take an adaptive-moment step. Guidance failures
skip the iteration; more than 10% skipped marks the run degraded.

Everything is driven by a single seeded Generator in a fixed draw order
(camera, background, noise level, noise image), so a run is reproducible
bit for bit from its config.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .body_model import PosedBody, pose_body
from .errors import GuidanceUnavailableError, InvalidInputError
from .guidance import NoiseSchedule, sds_pixel_grad
from .raster import Camera, rasterize_condition
from .renderer import RenderSettings, render, render_backward
from .regularize import SmoothConfig, smoothness_term
from .schedule import (FocusTargets, StagePlan, focus_camera, grid_plan,
                       radius_range, sample_camera)
from .voxel_field import (Bounds, VoxelField, activate_density, dims_for,
                          inverse_activate_density, resample, save_field,
                          sample_grid_clamped, shrink_bbox, trilinear)


@dataclass
class OptimizerHP:
    lr_density: float = 0.1
    lr_color: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8


@dataclass
class OptimState:
    """Field plus first/second moment grids, resized in lockstep with it."""

    field: VoxelField
    m_density: np.ndarray
    v_density: np.ndarray
    m_color: np.ndarray
    v_color: np.ndarray
    step_count: int = 0

    @classmethod
    def fresh(cls, field: VoxelField) -> "OptimState":
        return cls(field=field,
                   m_density=np.zeros(field.dims),
                   v_density=np.zeros(field.dims),
                   m_color=np.zeros(field.dims + (3,)),
                   v_color=np.zeros(field.dims + (3,)))


def init_blob(bounds: Bounds, body: PosedBody, n_voxels: int,
              peak: float | None = None) -> VoxelField:
    """Ellipsoidal raw-density blob sized to the posed body.

    raw = peak * max(0, 1 - |(p - c) / r|^2) with per-axis radii r equal to
    half the body's coordinate ranges and c the body box center. The default
    peak makes the central activated density ~1. Colors start mid-gray.
    """
    v = np.asarray(body.vertices, dtype=np.float64)
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    extent = hi - lo
    if np.any(extent < 1e-6):
        raise InvalidInputError("degenerate body extent; cannot size the blob")
    center = 0.5 * (lo + hi)
    radii = 0.5 * extent
    if peak is None:
        peak = inverse_activate_density(1.0)
    out = VoxelField.zeros(bounds, dims_for(bounds, n_voxels))
    rel = (out.cell_centers() - center) / radii
    out.density_raw = peak * np.maximum(0.0, 1.0 - np.sum(rel ** 2, axis=-1))
    out.color[:] = 0.5
    return out


def add_body_density_bias(field: VoxelField, body: PosedBody,
                          strength: float) -> VoxelField:
    """Add strength * exp(-d^2 / (2 s^2)) to the raw density, d the distance
    to the nearest body vertex and s one (cubic-equivalent) voxel size."""
    if strength < 0:
        raise InvalidInputError("bias strength must be >= 0")
    out = field.copy()
    if strength == 0:
        return out
    s = float(np.cbrt(np.prod(field.cell_size)))
    tree = cKDTree(np.asarray(body.vertices, dtype=np.float64))
    d, _ = tree.query(out.cell_centers().reshape(-1, 3))
    bias = strength * np.exp(-(d ** 2) / (2.0 * s * s))
    out.density_raw = out.density_raw + bias.reshape(field.dims)
    return out


def adaptive_step(state: OptimState, grad_density: np.ndarray,
                  grad_color: np.ndarray, hp: OptimizerHP) -> bool:
    """Adam-style update with bias correction; colors are clamped back to
    [0, 1]. Non-finite gradients reject the step (returns False)."""
    if grad_density.shape != state.field.dims or grad_color.shape != state.field.dims + (3,):
        raise InvalidInputError("gradient dims do not match the field")
    if not (np.all(np.isfinite(grad_density)) and np.all(np.isfinite(grad_color))):
        return False
    state.step_count += 1
    t = state.step_count
    b1, b2 = hp.beta1, hp.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for grad, m, v, lr, target in (
            (grad_density, state.m_density, state.v_density, hp.lr_density, "density"),
            (grad_color, state.m_color, state.v_color, hp.lr_color, "color")):
        m *= b1
        m += (1 - b1) * grad
        v *= b2
        v += (1 - b2) * grad * grad
        update = lr * (m / c1) / (np.sqrt(v / c2) + hp.eps)
        if target == "density":
            state.field.density_raw -= update
        else:
            state.field.color = np.clip(state.field.color - update, 0.0, 1.0)
    return True


def _resample_state(state: OptimState, new_bounds: Bounds, n_voxels: int) -> OptimState:
    """Move field and moments onto a new grid (trilinear, clamped)."""
    new_field = resample(state.field, new_bounds, n_voxels)
    centers = new_field.cell_centers().reshape(-1, 3)
    old_bounds = state.field.bounds

    def regrid(values):
        out = sample_grid_clamped(values, old_bounds, centers)
        return out.reshape(new_field.dims + values.shape[3:])

    return OptimState(field=new_field,
                      m_density=regrid(state.m_density),
                      v_density=np.maximum(regrid(state.v_density), 0.0),
                      m_color=regrid(state.m_color),
                      v_color=np.maximum(regrid(state.v_color), 0.0),
                      step_count=state.step_count)


def occupancy_iou(field: VoxelField, reference: VoxelField,
                  threshold: float = 0.1) -> float:
    """IoU of activated-density occupancy, evaluated on the reference grid's
    cell centers (the field is sampled trilinearly, zero outside bounds)."""
    centers = reference.cell_centers().reshape(-1, 3)
    ref_occ = activate_density(reference.density_raw).reshape(-1) > threshold
    raw, _ = trilinear(field, centers)
    occ = activate_density(raw) > threshold
    union = np.logical_or(occ, ref_occ).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(occ, ref_occ).sum() / union)


@dataclass
class RunReport:
    seed: int
    events: list = dc_field(default_factory=list)
    sds_grad_rms: list = dc_field(default_factory=list)
    smooth_loss: list = dc_field(default_factory=list)
    skipped_steps: int = 0
    total_steps: int = 0
    degraded: bool = False
    backend: str = ""
    wall_time_s: float = 0.0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=1)


def train_coarse(config, template=None, oracle=None, cameras=None):
    """Run the coarse optimization; returns (final VoxelField, RunReport).

    ``config`` is a RunConfig (see voxatar.config). Tests may inject a
    template, an oracle, or a fixed camera list (cycled per iteration)
    instead of the config-driven ones.
    """
    from . import kernels
    from .config import RunConfig, build_oracle, load_body

    if not isinstance(config, RunConfig):
        raise InvalidInputError("train_coarse expects a RunConfig")
    rng = np.random.default_rng(config.seed)
    plan: StagePlan = config.plan
    smooth: SmoothConfig = config.smooth

    if template is None:
        template = load_body(config)
    posed = pose_body(template, config.shape_params(), config.pose_params())
    labels = template.face_part_labels
    centroid = tuple(posed.vertices.mean(axis=0))

    v = posed.vertices
    pad = config.bounds_pad * (v.max(0) - v.min(0)) + 0.02
    bounds = Bounds(tuple(v.min(0) - pad), tuple(v.max(0) + pad))

    state = OptimState.fresh(init_blob(bounds, posed, grid_plan(0, plan)))
    if config.body_bias_strength > 0:
        state = OptimState.fresh(
            add_body_density_bias(state.field, posed, config.body_bias_strength))

    schedule = NoiseSchedule.cosine(T=config.noise_steps, t_min=config.noise_t_min,
                                    t_max=config.noise_t_max)
    owns_oracle = oracle is None
    if oracle is None:
        oracle = build_oracle(config, schedule)
    focus = FocusTargets()
    focus.validate(template.joint_count)
    hp = config.optimizer_hp()

    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    report = RunReport(seed=config.seed, backend=kernels.BACKEND_NAME)
    t_start = time.monotonic()
    prev_stage = radius_range(0, plan)
    focus_logged = False

    try:
        for step in range(plan.coarse_iters):
            if step in plan.grid_double_steps:
                state = _resample_state(state, state.field.bounds, grid_plan(step, plan))
                report.events.append({"step": step, "event": "grid_double",
                                      "n_voxels": int(np.prod(state.field.dims))})
            if plan.bbox_shrink_step is not None and step == plan.bbox_shrink_step:
                new_bounds = shrink_bbox(state.field, plan.bbox_threshold)
                lost = _count_lost_cells(state.field, new_bounds, plan.bbox_threshold)
                state = _resample_state(state, new_bounds, grid_plan(step, plan))
                report.events.append({"step": step, "event": "bbox_shrink",
                                      "threshold": plan.bbox_threshold,
                                      "bounds": [list(new_bounds.min_corner),
                                                 list(new_bounds.max_corner)],
                                      "cells_lost": int(lost)})
            stage = radius_range(step, plan)
            if stage != prev_stage:
                report.events.append({"step": step, "event": "radius_stage",
                                      "range": list(stage)})
                prev_stage = stage

            if cameras is not None:
                cam = cameras[step % len(cameras)]
                is_focus = False
            else:
                cam = focus_camera(step, plan, focus, posed.joints, rng,
                                   fov_y=config.fov_y)
                is_focus = cam is not None
                if cam is None:
                    cam = sample_camera(step, plan, rng, target=centroid,
                                        fov_y=config.fov_y,
                                        width=config.resolution,
                                        height=config.resolution)
            if is_focus and not focus_logged:
                report.events.append({"step": step, "event": "focus_start"})
                focus_logged = True

            # the condition and the render share this exact camera (the
            # view-consistency contract)
            condition = rasterize_condition(posed, labels, cam)
            settings = RenderSettings(step_fraction=config.step_fraction,
                                      background=config.background,
                                      early_stop_transmittance=config.early_stop)
            out = render(state.field, cam, settings, rng=rng)

            t = schedule.sample_t(rng)
            eps = rng.standard_normal(out.rgb.shape)
            oracle.set_camera(cam)
            report.total_steps += 1
            try:
                pixel = sds_pixel_grad(out.rgb, oracle, t, eps, condition,
                                       config.prompt, schedule,
                                       config.weight_mode)
            except GuidanceUnavailableError as exc:
                report.skipped_steps += 1
                report.events.append({"step": step, "event": "guidance_skipped",
                                      "reason": str(exc)})
                report.sds_grad_rms.append(None)
                report.smooth_loss.append(None)
                continue

            grad_d, grad_c = render_backward(state.field, cam, settings, pixel,
                                             out.background)
            s_loss = None
            if smooth.coefficient > 0:
                s_loss, s_grad = smoothness_term(state.field, smooth)
                grad_d = grad_d + smooth.coefficient * s_grad
            accepted = adaptive_step(state, grad_d, grad_c, hp)
            if not accepted:
                report.events.append({"step": step, "event": "step_rejected"})
            report.sds_grad_rms.append(float(np.sqrt(np.mean(pixel ** 2))))
            report.smooth_loss.append(s_loss)

            if config.snapshot_every and (step + 1) % config.snapshot_every == 0:
                _snapshot(state.field, outdir, step + 1)
    finally:
        if owns_oracle:
            oracle.close()

    report.wall_time_s = time.monotonic() - t_start
    report.degraded = (report.total_steps > 0
                       and report.skipped_steps > 0.1 * report.total_steps)
    save_field(state.field, outdir / "field_final.voxf")
    (outdir / "report.json").write_text(report.to_json())
    return state.field, report


def _count_lost_cells(field: VoxelField, new_bounds: Bounds, threshold: float) -> int:
    """Exhaustive audit: above-threshold cells whose centers fall outside the
    shrunk bounds (must be zero by construction)."""
    mask = activate_density(field.density_raw) > threshold
    centers = field.cell_centers()
    inside = new_bounds.contains(centers)
    return int(np.logical_and(mask, ~inside).sum())


def _snapshot(field: VoxelField, outdir: Path, step: int) -> None:
    from .pngio import save_png_rgb01

    save_field(field, outdir / f"field_{step:06d}.voxf")
    frames = []
    for az in (0.0, 90.0, 180.0, 270.0):
        cam = Camera(radius=2.0, azimuth=az, elevation=15.0, width=128, height=128)
        out = render(field, cam, RenderSettings(background=(1.0, 1.0, 1.0)))
        frames.append(out.rgb)
    save_png_rgb01(np.concatenate(frames, axis=1), outdir / f"turntable_{step:06d}.png")
