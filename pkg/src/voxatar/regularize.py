"""Gaussian-convolution smoothness regularization of the density grid.

The loss penalizes the mean squared difference between a grid and its
separable Gaussian blur: smooth_loss(V) = mean((G(V) - V)^2). In the
pipeline it is applied to the three central-difference gradient grids of the
raw density and summed, which pulls the density's spatial derivative toward
local smoothness without flattening the density itself. Means (not sums)
keep the coefficient lambda resolution-invariant across progressive grid
doublings.

Boundary handling is replicate padding everywhere, so constant grids are
exact fixed points. The adjoint used for the total-loss gradient is the
exact transpose of every step (differences, padding, convolution), verified
against finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .voxel_field import VoxelField


@dataclass
class SmoothConfig:
    kernel_size: int = 3
    sigma: float = 1.0
    coefficient: float = 1e-3
    on_raw_grid: bool = False  # apply to V directly instead of grad V

    def __post_init__(self):
        if self.kernel_size % 2 == 0 or self.kernel_size < 3:
            raise InvalidInputError("kernel size must be odd and >= 3")
        if self.sigma <= 0:
            raise InvalidInputError("sigma must be positive")
        if self.coefficient < 0:
            raise InvalidInputError("smoothness coefficient must be >= 0")


def gaussian_kernel(kernel_size: int, sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian samples at integer offsets."""
    if kernel_size % 2 == 0:
        raise InvalidInputError("kernel size must be odd")
    r = kernel_size // 2
    offsets = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _conv_axis(values: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """1D convolution along one axis with replicate padding."""
    r = len(kernel) // 2
    moved = np.moveaxis(values, axis, 0)
    padded = np.concatenate([np.repeat(moved[:1], r, axis=0), moved,
                             np.repeat(moved[-1:], r, axis=0)], axis=0)
    n = moved.shape[0]
    out = np.zeros_like(moved)
    for j, kj in enumerate(kernel):
        out += kj * padded[j:j + n]
    return np.moveaxis(out, 0, axis)


def _conv_axis_adjoint(grad: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """Exact transpose of _conv_axis: spread each output's gradient back to
    the padded taps, then fold the pad rows onto the edge cells."""
    r = len(kernel) // 2
    moved = np.moveaxis(grad, axis, 0)
    n = moved.shape[0]
    padded = np.zeros((n + 2 * r,) + moved.shape[1:])
    for j, kj in enumerate(kernel):
        padded[j:j + n] += kj * moved
    out = padded[r:r + n].copy()
    out[0] += padded[:r].sum(axis=0)
    out[-1] += padded[r + n:].sum(axis=0)
    return np.moveaxis(out, 0, axis)


def conv3d(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable 3D convolution (three 1D passes, replicate padding)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3:
        raise InvalidInputError("conv3d expects a 3D grid")
    if min(values.shape) < len(kernel):
        raise InvalidInputError(
            f"grid {values.shape} smaller than kernel ({len(kernel)}) per axis")
    out = values
    for axis in range(3):
        out = _conv_axis(out, kernel, axis)
    return out


def _conv3d_adjoint(grad: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = grad
    for axis in (2, 1, 0):
        out = _conv_axis_adjoint(out, kernel, axis)
    return out


def density_gradient_field(field: VoxelField) -> list[np.ndarray]:
    """Central differences of the raw density, one grid per axis, scaled by
    1/(2 h_axis); one-sided at the boundary slabs."""
    return raw_gradient_grids(field.density_raw, field.cell_size)


def raw_gradient_grids(values: np.ndarray, cell_size) -> list[np.ndarray]:
    values = np.asarray(values, dtype=np.float64)
    if min(values.shape) < 3:
        raise InvalidInputError("gradient grids need >= 3 cells per axis")
    grads = []
    for axis in range(3):
        h = float(cell_size[axis])
        g = np.gradient(values, h, axis=axis)
        grads.append(g)
    return grads


def _gradient_adjoint(grad: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Exact transpose of np.gradient along one axis (central differences
    interior, one-sided at the two boundary slabs)."""
    moved = np.moveaxis(grad, axis, 0)
    n = moved.shape[0]
    out = np.zeros_like(moved)
    inv2h = 1.0 / (2.0 * h)
    invh = 1.0 / h
    # interior output i reads cells i-1 and i+1
    if n > 2:
        out[2:] += moved[1:-1] * inv2h
        out[:-2] -= moved[1:-1] * inv2h
    # boundary outputs read (1,0) and (n-1, n-2)
    out[1] += moved[0] * invh
    out[0] -= moved[0] * invh
    out[-1] += moved[-1] * invh
    out[-2] -= moved[-1] * invh
    return np.moveaxis(out, 0, axis)


def smooth_loss(values: np.ndarray, kernel: np.ndarray) -> float:
    """mean((G(values) - values)^2); zero exactly on fixed points of G."""
    values = np.asarray(values, dtype=np.float64)
    diff = conv3d(values, kernel) - values
    return float(np.mean(diff ** 2))


def smooth_loss_grad(values: np.ndarray, kernel: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss and its exact gradient: (2/N) (G - I)^T (G(v) - v)."""
    values = np.asarray(values, dtype=np.float64)
    diff = conv3d(values, kernel) - values
    loss = float(np.mean(diff ** 2))
    seed = (2.0 / values.size) * diff
    grad = _conv3d_adjoint(seed, kernel) - seed
    return loss, grad


def smoothness_term(field: VoxelField, config: SmoothConfig) -> tuple[float, np.ndarray]:
    """L_smooth and its gradient w.r.t. density_raw.

    Default form: sum over axes of smooth_loss on the central-difference
    gradient grids. With config.on_raw_grid the loss is applied to the raw
    density grid itself.
    """
    kernel = gaussian_kernel(config.kernel_size, config.sigma)
    raw = field.density_raw
    if config.on_raw_grid:
        return smooth_loss_grad(raw, kernel)
    total = 0.0
    grad = np.zeros_like(raw)
    h = field.cell_size
    for axis, g_axis in enumerate(raw_gradient_grids(raw, h)):
        loss_a, grad_a = smooth_loss_grad(g_axis, kernel)
        total += loss_a
        grad += _gradient_adjoint(grad_a, axis, float(h[axis]))
    return total, grad


def total_loss(sds_term: float, smooth_term: float, coefficient: float) -> float:
    """L = L_SDS + lambda * L_smooth (scalar bookkeeping; gradients are
    assembled by the optimizer from the two adjoints)."""
    if coefficient < 0:
        raise InvalidInputError("coefficient must be >= 0")
    return float(sds_term) + float(coefficient) * float(smooth_term)
