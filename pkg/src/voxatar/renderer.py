"""Differentiable volumetric ray-marching over a voxel field.

Forward: per-ray transmittance compositing C = sum_i T_i (1 - exp(-sigma_i
dt)) c_i over samples on the fixed lattice t_i = near + (i + 0.5) dt, with
dt a fraction of the field's cubic voxel size. Backward: the exact adjoint
of that computation (including the density activation), producing gradients
on the raw density and color grids.

Rays are clipped to the field bounds before marching; since out-of-bounds
samples carry exactly zero density this changes nothing but the cost. Both
kernel backends consume the identical per-ray lattice index ranges computed
here, which is what keeps them in agreement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidInputError
from .raster import Camera, generate_rays
from .voxel_field import (DENSITY_SHIFT, VoxelField, activate_density,
                          trilinear)

Background = "random"  # sentinel value accepted by RenderSettings.background


@dataclass
class RenderSettings:
    """Knobs of the ray marcher.

    ``near``/``far`` default to None, which auto-fits them to the camera
    distance and the field's bounding sphere. ``background`` is an RGB
    triple or the string "random" (one color per image, drawn from the rng
    handed to :func:`render`).
    """

    step_fraction: float = 0.5
    near: float | None = None
    far: float | None = None
    background: tuple[float, float, float] | str = (1.0, 1.0, 1.0)
    early_stop_transmittance: float = 1e-4
    compute_normals: bool = False

    def __post_init__(self):
        if not 0 < self.step_fraction <= 1:
            raise InvalidInputError("step_fraction must be in (0, 1]")
        if self.near is not None and self.far is not None and self.near >= self.far:
            raise InvalidInputError(f"near ({self.near}) must be < far ({self.far})")


@dataclass
class RenderOutput:
    rgb: np.ndarray            # (H, W, 3)
    alpha: np.ndarray          # (H, W) accumulated opacity
    depth: np.ndarray          # (H, W) expected depth along the ray
    normal: np.ndarray | None  # (H, W, 3) unit vectors, None unless requested
    background: np.ndarray     # (3,) color actually composited


def step_size(field: VoxelField, settings: RenderSettings) -> float:
    """Step length: step_fraction times the cubic-equivalent voxel size."""
    vol = float(np.prod(field.bounds.size))
    n_cells = float(np.prod(field.dims))
    return settings.step_fraction * float(np.cbrt(vol / n_cells))


def _resolve_near_far(field, camera, settings, dt):
    center = 0.5 * (np.asarray(field.bounds.min_corner) + np.asarray(field.bounds.max_corner))
    half_diag = 0.5 * float(np.linalg.norm(field.bounds.size))
    dist = float(np.linalg.norm(camera.position - center))
    near = settings.near
    far = settings.far
    if near is None:
        near = max(1e-3, dist - half_diag - dt)
    if far is None:
        far = dist + half_diag + dt
    if near >= far:
        raise InvalidInputError(f"near ({near}) must be < far ({far})")
    return near, far


def _ray_lattice_ranges(origin, dirs, lo, hi, near, far, dt):
    """First lattice index and sample count of each ray's overlap with the
    box, on the shared lattice t_i = near + (i + 0.5) dt."""
    o = origin[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (lo - o) / dirs
        t_hi = (hi - o) / dirs
    t1 = np.minimum(t_lo, t_hi)
    t2 = np.maximum(t_lo, t_hi)
    # axes with zero direction: ray parallel to slab; inside iff origin within
    par = dirs == 0.0
    inside_par = (o >= lo) & (o <= hi)
    t1 = np.where(par, np.where(inside_par, -np.inf, np.inf), t1)
    t2 = np.where(par, np.where(inside_par, np.inf, -np.inf), t2)
    t_enter = np.maximum(t1.max(axis=-1), near)
    t_exit = np.minimum(t2.min(axis=-1), far)
    n_total = int(np.ceil((far - near) / dt))
    i_first = np.maximum(0, np.ceil((t_enter - near) / dt - 0.5)).astype(np.int64)
    i_last = np.minimum(n_total - 1,
                        np.floor((t_exit - near) / dt - 0.5)).astype(np.int64)
    count = np.maximum(0, i_last - i_first + 1)
    count = np.where(t_exit > t_enter, count, 0)
    return i_first, count


def _resolve_background(settings, rng):
    if isinstance(settings.background, str):
        if settings.background != "random":
            raise InvalidInputError(f"unknown background mode {settings.background!r}")
        if rng is None:
            raise InvalidInputError("random background requires an rng")
        return rng.uniform(0.0, 1.0, 3)
    bg = np.asarray(settings.background, dtype=np.float64)
    if bg.shape != (3,):
        raise InvalidInputError("background must be an RGB triple or 'random'")
    return bg


def _march_args(field, camera, settings):
    dt = step_size(field, settings)
    near, far = _resolve_near_far(field, camera, settings, dt)
    origin, dirs = generate_rays(camera)
    flat_dirs = dirs.reshape(-1, 3)
    lo = np.asarray(field.bounds.min_corner)
    hi = np.asarray(field.bounds.max_corner)
    i_first, count = _ray_lattice_ranges(origin, flat_dirs, lo, hi, near, far, dt)
    rays_o = np.broadcast_to(origin, flat_dirs.shape)
    return dict(dens=field.density_raw, col=field.color, lo=lo, hi=hi,
                h=field.cell_size, shift=DENSITY_SHIFT,
                rays_o=np.ascontiguousarray(rays_o),
                rays_d=np.ascontiguousarray(flat_dirs),
                near=near, dt=dt, i0=i_first, count=count,
                early_stop=settings.early_stop_transmittance)


def render(field: VoxelField, camera: Camera, settings: RenderSettings | None = None,
           rng: np.random.Generator | None = None) -> RenderOutput:
    """Composite the field along every pixel ray of the camera."""
    settings = settings or RenderSettings()
    bg = _resolve_background(settings, rng)
    args = _march_args(field, camera, settings)
    rgb, alpha, wt = kernels.march_forward(bg=bg, **args)
    h, w = camera.height, camera.width
    alpha = alpha.reshape(h, w)
    depth = (wt.reshape(h, w) / np.maximum(alpha, 1e-6))
    out = RenderOutput(rgb=rgb.reshape(h, w, 3), alpha=alpha, depth=depth,
                       normal=None, background=bg)
    if settings.compute_normals:
        out.normal = _surface_normals(field, args, depth)
    return out


def render_backward(field: VoxelField, camera: Camera, settings: RenderSettings,
                    pixel_grad: np.ndarray,
                    background: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact adjoint of :func:`render` w.r.t. density_raw and color.

    ``background`` must be the color the forward pass composited
    (RenderOutput.background).
    """
    pixel_grad = np.asarray(pixel_grad, dtype=np.float64)
    if pixel_grad.shape != (camera.height, camera.width, 3):
        raise InvalidInputError(
            f"pixel_grad shape {pixel_grad.shape} does not match camera "
            f"({camera.height}, {camera.width}, 3)")
    if not np.all(np.isfinite(pixel_grad)):
        raise InvalidInputError("pixel_grad must be finite")
    args = _march_args(field, camera, settings)
    return kernels.march_backward(bg=np.asarray(background, dtype=np.float64),
                                  pixel_grad=pixel_grad.reshape(-1, 3), **args)


def _surface_normals(field, args, depth):
    """Unit normals from the central-difference gradient of the activated
    density at the expected-depth point of each ray; zero where the gradient
    is negligible. Display-only."""
    h, w = depth.shape
    o = args["rays_o"].reshape(h, w, 3)
    d = args["rays_d"].reshape(h, w, 3)
    pts = o + depth[..., None] * d
    eps = field.cell_size
    grad = np.zeros((h, w, 3))
    for a in range(3):
        off = np.zeros(3)
        off[a] = eps[a]
        sp, _ = trilinear(field, pts + off)
        sm, _ = trilinear(field, pts - off)
        grad[..., a] = (activate_density(sp) - activate_density(sm)) / (2 * eps[a])
    norm = np.linalg.norm(grad, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore"):
        n = np.where(norm > 1e-8, -grad / norm, 0.0)
    return np.nan_to_num(n)
