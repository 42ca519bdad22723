"""Part-labeled software rasterizer and the shared camera model.

The camera is parameterized on a sphere around a target point, world-up +y:
azimuth 0 puts the camera on the +x axis, azimuth 90 on +z, and positive
elevation raises it toward +y. The same Camera drives both the volumetric
renderer and this rasterizer, which is what keeps the guidance condition
aligned with the radiance-field view.

Rasterization convention: pixel centers at (ix + 0.5, iy + 0.5), y down,
top-left edge-ownership tie rule, nearest triangle wins with strict
less-than depth ties (earlier triangle kept). Back faces are rasterized.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidInputError

_NEAR_PLANE = 1e-4


def _build_palette() -> np.ndarray:
    """25 x 3 uint8 table: label 0 is black, labels 1..24 are evenly spaced
    hues at full saturation/value."""
    table = np.zeros((25, 3), dtype=np.uint8)
    for i in range(1, 25):
        r, g, b = colorsys.hsv_to_rgb((i - 1) / 24.0, 1.0, 1.0)
        table[i] = [int(round(255 * r)), int(round(255 * g)), int(round(255 * b))]
    return table


PALETTE = _build_palette()
PALETTE.setflags(write=False)


def palette_rgb(labels: np.ndarray) -> np.ndarray:
    """Exact palette encoding of a label image."""
    return PALETTE[np.asarray(labels, dtype=np.int64)]


def palette_csv() -> str:
    lines = ["label,red,green,blue"]
    lines += [f"{i},{r},{g},{b}" for i, (r, g, b) in enumerate(PALETTE)]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Camera:
    """Spherical pinhole camera looking at ``target``."""

    radius: float
    azimuth: float
    elevation: float
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    fov_y: float = 50.0
    width: int = 64
    height: int = 64

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidInputError(f"camera radius must be > 0, got {self.radius}")
        if not 0 < self.fov_y < 180:
            raise InvalidInputError(f"fov_y must be in (0, 180), got {self.fov_y}")
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("image dimensions must be >= 1")
        object.__setattr__(self, "azimuth", float(self.azimuth) % 360.0)
        object.__setattr__(self, "elevation", float(self.elevation))
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "target", tuple(float(v) for v in self.target))

    @property
    def position(self) -> np.ndarray:
        az = np.deg2rad(self.azimuth)
        el = np.deg2rad(self.elevation)
        offset = self.radius * np.array(
            [np.cos(el) * np.cos(az), np.sin(el), np.cos(el) * np.sin(az)])
        return np.asarray(self.target) + offset


def camera_from_spherical(radius, azimuth, elevation, target=(0.0, 0.0, 0.0),
                          fov_y=50.0, width=64, height=64) -> Camera:
    """Camera at spherical coordinates (meters/degrees) looking at target."""
    return Camera(radius=radius, azimuth=azimuth, elevation=elevation,
                  target=tuple(target), fov_y=fov_y, width=width, height=height)


def camera_basis(camera: Camera):
    """(position, right, up, forward) with forward toward the target."""
    pos = camera.position
    fwd = np.asarray(camera.target) - pos
    norm = np.linalg.norm(fwd)
    if norm < 1e-12:
        raise InvalidInputError("degenerate camera: position equals target")
    fwd = fwd / norm
    world_up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, world_up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        # looking straight up/down: pick a stable right axis
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        rn = np.linalg.norm(right)
    right = right / rn
    up = np.cross(right, fwd)
    return pos, right, up, fwd


def _tan_half_fovs(camera: Camera):
    ty = np.tan(np.deg2rad(camera.fov_y) / 2.0)
    tx = ty * camera.width / camera.height
    return tx, ty


def generate_rays(camera: Camera):
    """Per-pixel unit ray directions through pixel centers.

    Returns (origin (3,), dirs (H, W, 3))."""
    pos, right, up, fwd = camera_basis(camera)
    tx, ty = _tan_half_fovs(camera)
    w, h = camera.width, camera.height
    xn = (2.0 * (np.arange(w) + 0.5) / w - 1.0) * tx
    yn = (1.0 - 2.0 * (np.arange(h) + 0.5) / h) * ty
    gx, gy = np.meshgrid(xn, yn)
    dirs = fwd + gx[..., None] * right + gy[..., None] * up
    dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    return pos, dirs


@dataclass
class ConditionImage:
    """Part-label render: labels in 0..24 (0 = background), the exact palette
    encoding, and euclidean camera distance (+inf at background)."""

    labels: np.ndarray
    rgb: np.ndarray
    depth: np.ndarray


def _clip_near(verts, z_cam):
    """Sutherland-Hodgman clip of one triangle against z >= _NEAR_PLANE.

    verts (3,3) world, z_cam (3,). Returns a list of (3,3) world triangles.
    """
    keep = z_cam > _NEAR_PLANE
    n_keep = int(keep.sum())
    if n_keep == 3:
        return [verts]
    if n_keep == 0:
        return []
    poly = []
    for k in range(3):
        a, b = k, (k + 1) % 3
        if keep[a]:
            poly.append(verts[a])
        if keep[a] != keep[b]:
            t = (_NEAR_PLANE - z_cam[a]) / (z_cam[b] - z_cam[a])
            poly.append(verts[a] + t * (verts[b] - verts[a]))
    tris = []
    for k in range(1, len(poly) - 1):
        tris.append(np.stack([poly[0], poly[k], poly[k + 1]]))
    return tris


def _orient_and_pack(screen, world, invz, labels):
    """Drop degenerate triangles and flip windings so screen area is
    positive (the fill kernels assume it)."""
    area2 = ((screen[:, 1, 0] - screen[:, 0, 0]) * (screen[:, 2, 1] - screen[:, 0, 1])
             - (screen[:, 1, 1] - screen[:, 0, 1]) * (screen[:, 2, 0] - screen[:, 0, 0]))
    keep = area2 != 0.0
    screen, world, invz, labels = screen[keep], world[keep], invz[keep], labels[keep]
    flip = area2[keep] < 0
    screen[flip] = screen[flip][:, [0, 2, 1]]
    world[flip] = world[flip][:, [0, 2, 1]]
    invz[flip] = invz[flip][:, [0, 2, 1]]
    return screen, world, invz, labels


def _prepare_triangles(vertices, faces, face_labels, camera):
    """Project, near-clip and orient triangles for the fill kernel.

    Returns (screen (T,3,2), world (T,3,3), inv_z (T,3), labels (T,)).
    Triangles fully in front of the near plane go through the vectorized
    path; the few crossing it are clipped one by one.
    """
    pos, right, up, fwd = camera_basis(camera)
    tx, ty = _tan_half_fovs(camera)
    w, h = camera.width, camera.height

    def project_many(tris):
        rel = tris - pos
        xc = rel @ right
        yc = rel @ up
        zc = rel @ fwd
        sx = (xc / (zc * tx) + 1.0) * 0.5 * w
        sy = (1.0 - yc / (zc * ty)) * 0.5 * h
        return np.stack([sx, sy], axis=-1), zc

    z_all = (vertices - pos) @ fwd
    tri_z = z_all[faces]
    in_front = tri_z > _NEAR_PLANE
    n_front = in_front.sum(axis=1)

    parts = []
    full = faces[n_front == 3]
    if full.size:
        tris = vertices[full]
        screen, zc = project_many(tris)
        parts.append(_orient_and_pack(screen, tris.copy(), 1.0 / zc,
                                      face_labels[n_front == 3].copy()))
    crossing = np.flatnonzero((n_front > 0) & (n_front < 3))
    if crossing.size:
        clipped_tris, clipped_labels = [], []
        for fi in crossing:
            for tri in _clip_near(vertices[faces[fi]], tri_z[fi]):
                clipped_tris.append(tri)
                clipped_labels.append(face_labels[fi])
        if clipped_tris:
            tris = np.stack(clipped_tris)
            screen, zc = project_many(tris)
            parts.append(_orient_and_pack(
                screen, tris, 1.0 / zc,
                np.asarray(clipped_labels, dtype=np.int32)))
    if not parts:
        return (np.zeros((0, 3, 2)), np.zeros((0, 3, 3)), np.zeros((0, 3)),
                np.zeros(0, dtype=np.int32))
    return tuple(np.ascontiguousarray(np.concatenate([p[i] for p in parts]))
                 for i in range(4))


def rasterize_condition(body, face_labels, camera: Camera) -> ConditionImage:
    """Render the part-label condition image of a posed body.

    ``body`` is anything with ``vertices`` (N,3) and ``faces`` (F,3) arrays
    (a PosedBody); ``face_labels`` holds one integer in 1..24 per face.
    """
    vertices = np.asarray(body.vertices, dtype=np.float64)
    faces = np.asarray(body.faces, dtype=np.int64)
    face_labels = np.asarray(face_labels, dtype=np.int32)
    if faces.size and face_labels.shape[0] != faces.shape[0]:
        raise InvalidInputError("face label count does not match face count")
    if face_labels.size and (face_labels.min() < 1 or face_labels.max() > 24):
        raise InvalidInputError("face labels must lie in 1..24")
    h, w = camera.height, camera.width
    if faces.size == 0:
        labels = np.zeros((h, w), dtype=np.int32)
        depth = np.full((h, w), np.inf)
    else:
        screen, world, invz, tri_labels = _prepare_triangles(
            vertices, faces, face_labels, camera)
        labels, depth = kernels.raster_fill(
            screen, world, invz, tri_labels, camera.position, w, h)
    return ConditionImage(labels=labels.astype(np.uint8),
                          rgb=palette_rgb(labels),
                          depth=depth)


def label_histogram(image: ConditionImage) -> np.ndarray:
    """Counts per label 0..24; sums to H*W."""
    return np.bincount(image.labels.reshape(-1).astype(np.int64), minlength=25)
