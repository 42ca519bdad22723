"""Bounded explicit density/color voxel grids.

Values live at cell centers. The density grid stores pre-activation ("raw")
values; rendering and thresholding go through :func:`activate_density`, a
softplus shifted by ``DENSITY_SHIFT`` so a raw value of zero maps to a small
positive density. Points outside the bounds sample the ``RAW_OUTSIDE``
surrogate, which activates to exactly zero.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

# Shift b of the softplus activation sigma = log(1 + exp(raw + b)).
DENSITY_SHIFT = -2.0

# Raw-density surrogate returned for out-of-bounds samples; softplus maps it to 0.
RAW_OUTSIDE = -np.inf


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned box, max_corner strictly greater per component."""

    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64)
        hi = np.asarray(self.max_corner, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise InvalidInputError("bounds corners must be 3-vectors")
        if not np.all(hi > lo):
            raise InvalidInputError(f"degenerate bounds: {self.min_corner} .. {self.max_corner}")
        object.__setattr__(self, "min_corner", tuple(float(v) for v in lo))
        object.__setattr__(self, "max_corner", tuple(float(v) for v in hi))

    @property
    def size(self) -> np.ndarray:
        return np.asarray(self.max_corner) - np.asarray(self.min_corner)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the closed box."""
        p = np.asarray(points, dtype=np.float64)
        lo = np.asarray(self.min_corner)
        hi = np.asarray(self.max_corner)
        return np.all((p >= lo) & (p <= hi), axis=-1)


class VoxelField:
    """Density + color grids over a bounding box.

    density_raw has shape (nx, ny, nz), color has shape (nx, ny, nz, 3) with
    components in [0, 1]. Mutating ops (resample, shrink) return new fields.
    """

    def __init__(self, bounds: Bounds, density_raw: np.ndarray, color: np.ndarray):
        density_raw = np.ascontiguousarray(density_raw, dtype=np.float64)
        color = np.ascontiguousarray(color, dtype=np.float64)
        if density_raw.ndim != 3 or min(density_raw.shape) < 2:
            raise InvalidInputError("density grid needs >= 2 cells per axis")
        if color.shape != density_raw.shape + (3,):
            raise InvalidInputError("color grid shape must be dims + (3,)")
        if not np.all(np.isfinite(density_raw)):
            raise InvalidInputError("density_raw must be finite")
        self.bounds = bounds
        self.density_raw = density_raw
        self.color = np.clip(color, 0.0, 1.0)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.density_raw.shape

    @property
    def cell_size(self) -> np.ndarray:
        """Per-axis cell edge length (axes may differ after dim rounding)."""
        return self.bounds.size / np.asarray(self.dims)

    def cell_centers(self) -> np.ndarray:
        """(nx, ny, nz, 3) array of world-space cell centers."""
        lo = np.asarray(self.bounds.min_corner)
        h = self.cell_size
        axes = [lo[a] + (np.arange(self.dims[a]) + 0.5) * h[a] for a in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    @classmethod
    def zeros(cls, bounds: Bounds, dims: tuple[int, int, int]) -> "VoxelField":
        return cls(bounds, np.zeros(dims), np.zeros(tuple(dims) + (3,)))

    def copy(self) -> "VoxelField":
        return VoxelField(self.bounds, self.density_raw.copy(), self.color.copy())


def activate_density(raw) -> np.ndarray:
    """Shifted softplus sigma = log(1 + exp(raw + b)), b = DENSITY_SHIFT.

    Monotonic, non-negative, and maps the out-of-bounds surrogate to 0.
    """
    return np.logaddexp(0.0, np.asarray(raw, dtype=np.float64) + DENSITY_SHIFT)


def activate_density_grad(raw) -> np.ndarray:
    """d sigma / d raw: the logistic sigmoid of the shifted raw value."""
    x = np.asarray(raw, dtype=np.float64) + DENSITY_SHIFT
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    out[~pos] = np.exp(x[~pos]) / (1.0 + np.exp(x[~pos]))
    return out


def inverse_activate_density(sigma: float) -> float:
    """Raw value whose activation equals sigma (> 0)."""
    if sigma <= 0:
        raise InvalidInputError("sigma must be positive")
    return float(np.log(np.expm1(sigma)) - DENSITY_SHIFT)


def _gather_trilinear(grid, ix, iy, iz, fx, fy, fz):
    c000 = grid[ix, iy, iz]
    c100 = grid[ix + 1, iy, iz]
    c010 = grid[ix, iy + 1, iz]
    c110 = grid[ix + 1, iy + 1, iz]
    c001 = grid[ix, iy, iz + 1]
    c101 = grid[ix + 1, iy, iz + 1]
    c011 = grid[ix, iy + 1, iz + 1]
    c111 = grid[ix + 1, iy + 1, iz + 1]
    wx = fx if grid.ndim == 3 else fx[:, None]
    wy = fy if grid.ndim == 3 else fy[:, None]
    wz = fz if grid.ndim == 3 else fz[:, None]
    c00 = c000 * (1 - wx) + c100 * wx
    c10 = c010 * (1 - wx) + c110 * wx
    c01 = c001 * (1 - wx) + c101 * wx
    c11 = c011 * (1 - wx) + c111 * wx
    c0 = c00 * (1 - wy) + c10 * wy
    c1 = c01 * (1 - wy) + c11 * wy
    return c0 * (1 - wz) + c1 * wz


def sample_grid_clamped(values: np.ndarray, bounds: Bounds, points: np.ndarray) -> np.ndarray:
    """Trilinear sample of an arbitrary cell-centered grid ((nx,ny,nz) or
    (nx,ny,nz,C)), stencil clamped to the boundary cells."""
    p = np.asarray(points, dtype=np.float64)
    flat = p.reshape(-1, 3)
    dims = np.asarray(values.shape[:3])
    h = bounds.size / dims
    u = (flat - np.asarray(bounds.min_corner)) / h - 0.5
    i0 = np.clip(np.floor(u).astype(np.int64), 0, dims - 2)
    f = np.clip(u - i0, 0.0, 1.0)
    out = _gather_trilinear(values, i0[:, 0], i0[:, 1], i0[:, 2],
                            f[:, 0], f[:, 1], f[:, 2])
    trailing = values.shape[3:]
    return out.reshape(p.shape[:-1] + trailing)


def sample_clamped(field: VoxelField, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Trilinear sample with the stencil clamped to the boundary cells.

    No out-of-bounds surrogate: points beyond the box read replicated edge
    values. Used by resampling; rendering uses :func:`trilinear`.
    """
    dens = sample_grid_clamped(field.density_raw, field.bounds, points)
    col = sample_grid_clamped(field.color, field.bounds, points)
    return dens, col


def trilinear(field: VoxelField, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Trilinear interpolation of (density_raw, color) at world points.

    Points outside the bounds return the RAW_OUTSIDE density surrogate and
    black color.
    """
    p = np.asarray(points, dtype=np.float64)
    dens, col = sample_clamped(field, p)
    inside = field.bounds.contains(p)
    dens = np.where(inside, dens, RAW_OUTSIDE)
    col = np.where(inside[..., None], col, 0.0)
    return dens, col


def voxel_size(bounds: Bounds, n_voxels: int) -> float:
    """Edge length of a cubic voxel tiling the box with ~n_voxels cells.

    s_v = cbrt(dx * dy * dz / N_v). Derived dims round per axis with a
    minimum of 2 cells.
    """
    if n_voxels < 8:
        raise InvalidInputError(f"target voxel count must be >= 8, got {n_voxels}")
    d = bounds.size
    return float(np.cbrt(d[0] * d[1] * d[2] / float(n_voxels)))


def dims_for(bounds: Bounds, n_voxels: int) -> tuple[int, int, int]:
    s = voxel_size(bounds, n_voxels)
    d = bounds.size
    return tuple(max(2, int(round(d[a] / s))) for a in range(3))


def resample(field: VoxelField, new_bounds: Bounds, new_n_voxels: int) -> VoxelField:
    """New grid over new_bounds sized by the voxel-size formula, every cell
    center filled by trilinear sampling of the old field (clamped at edges)."""
    dims = dims_for(new_bounds, new_n_voxels)
    out = VoxelField.zeros(new_bounds, dims)
    centers = out.cell_centers().reshape(-1, 3)
    dens, col = sample_clamped(field, centers)
    out.density_raw = dens.reshape(dims)
    out.color = np.clip(col.reshape(dims + (3,)), 0.0, 1.0)
    return out


def shrink_bbox(field: VoxelField, threshold: float) -> Bounds:
    """Tightest box (padded by one voxel) around cells whose activated
    density exceeds threshold; unchanged bounds if no cell qualifies."""
    if threshold <= 0:
        raise InvalidInputError("threshold must be positive")
    mask = activate_density(field.density_raw) > threshold
    if not mask.any():
        return field.bounds
    lo = np.asarray(field.bounds.min_corner)
    hi = np.asarray(field.bounds.max_corner)
    h = field.cell_size
    idx = np.argwhere(mask)
    i_min = idx.min(axis=0)
    i_max = idx.max(axis=0)
    # cell i spans [lo + i*h, lo + (i+1)*h]; pad one voxel outward, clamped
    new_lo = np.maximum(lo + (i_min - 1) * h, lo)
    new_hi = np.minimum(lo + (i_max + 2) * h, hi)
    return Bounds(tuple(new_lo), tuple(new_hi))


_MAGIC = b"VOXF"
_VERSION = 1


def save_field(field: VoxelField, path) -> None:
    """Write the documented binary container.

    Layout (little-endian): magic "VOXF", u32 version, u32 dims[3],
    f64 min_corner[3], f64 max_corner[3], then density_raw as f32 and
    color as f32, both C-order.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<3I", *field.dims))
        fh.write(struct.pack("<3d", *field.bounds.min_corner))
        fh.write(struct.pack("<3d", *field.bounds.max_corner))
        fh.write(field.density_raw.astype("<f4").tobytes(order="C"))
        fh.write(field.color.astype("<f4").tobytes(order="C"))


def load_field(path) -> VoxelField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise InvalidInputError(f"not a voxel container: bad magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise InvalidInputError(f"unsupported container version {version}")
        dims = struct.unpack("<3I", fh.read(12))
        lo = struct.unpack("<3d", fh.read(24))
        hi = struct.unpack("<3d", fh.read(24))
        n = dims[0] * dims[1] * dims[2]
        dens = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(dims)
        col = np.frombuffer(fh.read(12 * n), dtype="<f4").reshape(dims + (3,))
        rest = fh.read()
        if rest:
            raise InvalidInputError(f"{len(rest)} trailing bytes in container")
    return VoxelField(Bounds(lo, hi), dens.astype(np.float64), col.astype(np.float64))
