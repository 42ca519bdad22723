"""Parametric articulated body: blendshapes, joints, linear blend skinning.

The model follows the usual parametric-body recipe: a canonical template
mesh is deformed by shape coefficients (10 of them) and optional
pose-corrective blendshapes, joints are regressed from the shape, and
vertices are posed by linear blend skinning over K=24 joints arranged in a
tree. Every face carries one of 24 part labels, which is what the condition
rasterizer renders.

Posing is evaluated as v_out = v + sum_k w_k [(Rw_k - I)(v - j_k) + d_k],
algebraically the standard blended affine transform but written so the
identity pose is the identity map bit-for-bit.

The bundled desk-scale template is a procedurally generated humanoid built
from capsules (anisotropic for torso/head), with hand-assigned part labels
and distance-based skinning weights. The analytic primitives are kept
alongside the mesh: point-in-body queries against them are exact, which the
synthetic-recovery tests use as ground truth. A loader accepts external
full-body assets in an SMPL-style NPZ layout.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

JOINT_COUNT = 24

# SMPL-convention kinematic tree (root = pelvis).
PARENTS = np.array([-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9,
                    12, 13, 14, 16, 17, 18, 19, 20, 21], dtype=np.int64)

JOINT_NAMES = [
    "pelvis", "hip_l", "hip_r", "spine1", "knee_l", "knee_r", "spine2",
    "ankle_l", "ankle_r", "spine3", "foot_l", "foot_r", "neck", "collar_l",
    "collar_r", "head", "shoulder_l", "shoulder_r", "elbow_l", "elbow_r",
    "wrist_l", "wrist_r", "hand_l", "hand_r",
]

# Part-label chart (1..24, DensePose-style):
#  1 torso back       2 torso front     3 hand R          4 hand L
#  5 foot L           6 foot R          7 upper leg R bk  8 upper leg L bk
#  9 upper leg R fr  10 upper leg L fr 11 lower leg R bk 12 lower leg L bk
# 13 lower leg R fr  14 lower leg L fr 15 upper arm L bk 16 upper arm R bk
# 17 upper arm L fr  18 upper arm R fr 19 lower arm L bk 20 lower arm R bk
# 21 lower arm L fr  22 lower arm R fr 23 head front     24 head back


def _validate_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} must be finite")


@dataclass
class ShapeParams:
    """10 shape coefficients."""

    beta: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.beta.shape != (10,):
            raise InvalidInputError(f"beta must have length 10, got shape {self.beta.shape}")
        _validate_finite(self.beta, "beta")

    @classmethod
    def zero(cls):
        return cls(np.zeros(10))


@dataclass
class PoseParams:
    """Axis-angle rotation per joint, radians, shape (K, 3)."""

    xi: np.ndarray

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=np.float64)
        if self.xi.ndim != 2 or self.xi.shape[1] != 3:
            raise InvalidInputError(f"xi must be (K, 3), got {self.xi.shape}")
        _validate_finite(self.xi, "xi")

    @classmethod
    def zero(cls, k=JOINT_COUNT):
        return cls(np.zeros((k, 3)))


@dataclass
class BodyTemplate:
    vertices: np.ndarray          # (N, 3) canonical pose
    faces: np.ndarray             # (F, 3) vertex indices
    face_part_labels: np.ndarray  # (F,) in 1..24
    skin_weights: np.ndarray      # (N, K), rows sum to 1
    canonical_joints: np.ndarray  # (K, 3)
    parents: np.ndarray           # (K,), -1 at the single root
    shape_basis: np.ndarray | None = None  # (10, N, 3)
    pose_basis: np.ndarray | None = None   # (9*(K-1), N, 3)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        self.face_part_labels = np.asarray(self.face_part_labels, dtype=np.int32)
        self.skin_weights = np.asarray(self.skin_weights, dtype=np.float64)
        self.canonical_joints = np.asarray(self.canonical_joints, dtype=np.float64)
        self.parents = np.asarray(self.parents, dtype=np.int64)
        n = self.vertices.shape[0]
        k = self.canonical_joints.shape[0]
        if self.faces.size and self.faces.max() >= n:
            raise InvalidInputError("face index out of range")
        if self.face_part_labels.shape[0] != self.faces.shape[0]:
            raise InvalidInputError("one part label per face required")
        if self.face_part_labels.size and not (
                (self.face_part_labels >= 1).all() and (self.face_part_labels <= 24).all()):
            raise InvalidInputError("face part labels must lie in 1..24")
        if self.skin_weights.shape != (n, k):
            raise InvalidInputError("skin_weights must be (n_vertices, n_joints)")
        if (self.skin_weights < 0).any():
            raise InvalidInputError("skin weights must be non-negative")
        if not np.allclose(self.skin_weights.sum(axis=1), 1.0, atol=1e-6):
            raise InvalidInputError("skin weight rows must sum to 1")
        self._check_tree()
        if self.shape_basis is not None:
            self.shape_basis = np.asarray(self.shape_basis, dtype=np.float64)
            if self.shape_basis.shape != (10, n, 3):
                raise InvalidInputError("shape_basis must be (10, n_vertices, 3)")
        if self.pose_basis is not None:
            self.pose_basis = np.asarray(self.pose_basis, dtype=np.float64)
            if self.pose_basis.shape != (9 * (k - 1), n, 3):
                raise InvalidInputError("pose_basis must be (9*(K-1), n_vertices, 3)")

    def _check_tree(self):
        k = self.parents.shape[0]
        roots = np.flatnonzero(self.parents < 0)
        if len(roots) != 1:
            raise InvalidInputError("joint tree must have exactly one root")
        for j in range(k):
            seen = set()
            cur = j
            while cur >= 0:
                if cur in seen:
                    raise InvalidInputError("joint parent indices contain a cycle")
                seen.add(cur)
                cur = int(self.parents[cur])

    @property
    def joint_count(self) -> int:
        return self.canonical_joints.shape[0]


@dataclass
class PosedBody:
    vertices: np.ndarray             # (N, 3)
    joints: np.ndarray               # (K, 3)
    per_joint_transforms: np.ndarray  # (K, 4, 4) world transforms G_k
    faces: np.ndarray                # (F, 3), carried from the template


def rodrigues(axis_angle: np.ndarray) -> np.ndarray:
    """Axis-angle vectors (..., 3) to rotation matrices (..., 3, 3).

    Exactly the identity at zero rotation."""
    aa = np.asarray(axis_angle, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    small = theta < 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(small, 0.0, aa / np.where(small, 1.0, theta))
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zeros = np.zeros_like(kx)
    skew = np.stack([
        np.stack([zeros, -kz, ky], axis=-1),
        np.stack([kz, zeros, -kx], axis=-1),
        np.stack([-ky, kx, zeros], axis=-1),
    ], axis=-2)
    eye = np.broadcast_to(np.eye(3), skew.shape)
    th = theta[..., None]
    return eye + np.sin(th) * skew + (1.0 - np.cos(th)) * (skew @ skew)


def shape_deform(template: BodyTemplate, beta, xi) -> np.ndarray:
    """Canonical vertices after shape and pose blendshapes.

    With all-zero coefficients and bases, returns the template vertices
    unchanged (bit-identical).
    """
    beta = beta.beta if isinstance(beta, ShapeParams) else np.asarray(beta, dtype=np.float64)
    xi = xi.xi if isinstance(xi, PoseParams) else np.asarray(xi, dtype=np.float64)
    _validate_finite(beta, "beta")
    _validate_finite(xi, "xi")
    if template.shape_basis is not None and beta.shape != (template.shape_basis.shape[0],):
        raise InvalidInputError(
            f"beta length {beta.shape} does not match shape basis "
            f"({template.shape_basis.shape[0]} coefficients)")
    if template.shape_basis is None and beta.shape != (10,):
        raise InvalidInputError(f"beta must have length 10, got {beta.shape}")
    if xi.shape != (template.joint_count, 3):
        raise InvalidInputError(
            f"xi must be ({template.joint_count}, 3), got {xi.shape}")
    out = template.vertices
    if template.shape_basis is not None and np.any(beta):
        out = out + np.einsum("b,bnd->nd", beta, template.shape_basis)
    if template.pose_basis is not None:
        feat = pose_feature(xi)
        if np.any(feat):
            out = out + np.einsum("p,pnd->nd", feat, template.pose_basis)
    return out


def pose_feature(xi: np.ndarray) -> np.ndarray:
    """Flattened (R(xi_k) - I) over non-root joints, length 9*(K-1)."""
    rots = rodrigues(np.asarray(xi, dtype=np.float64)[1:])
    return (rots - np.eye(3)).reshape(-1)


def pose_joints(template: BodyTemplate, beta) -> np.ndarray:
    """Canonical joint positions after shape deformation.

    Joints follow the skin-weighted mean displacement of their vertices, so
    beta = 0 returns the stored canonical joints exactly.
    """
    beta = beta.beta if isinstance(beta, ShapeParams) else np.asarray(beta, dtype=np.float64)
    _validate_finite(beta, "beta")
    joints = template.canonical_joints
    if template.shape_basis is None or not np.any(beta):
        return joints.copy()
    disp = np.einsum("b,bnd->nd", beta, template.shape_basis)
    w = template.skin_weights
    denom = np.maximum(w.sum(axis=0), 1e-12)
    joint_disp = (w.T @ disp) / denom[:, None]
    return joints + joint_disp


def lbs(canonical_vertices, joints, xi, skin_weights, parents=PARENTS,
        faces=None) -> PosedBody:
    """Linear blend skinning: v_out = sum_k w_k G_k(xi, j_k) v.

    Rotations are applied about the (shape-deformed) joints and composed
    root to leaf. The identity pose returns the input vertices exactly.
    """
    v = np.asarray(canonical_vertices, dtype=np.float64)
    joints = np.asarray(joints, dtype=np.float64)
    xi = xi.xi if isinstance(xi, PoseParams) else np.asarray(xi, dtype=np.float64)
    w = np.asarray(skin_weights, dtype=np.float64)
    parents = np.asarray(parents, dtype=np.int64)
    k = joints.shape[0]
    if xi.shape != (k, 3):
        raise InvalidInputError(f"xi must be ({k}, 3), got {xi.shape}")
    if w.shape != (v.shape[0], k):
        raise InvalidInputError("skin weight shape mismatch")
    if (w < 0).any() or not np.allclose(w.sum(axis=1), 1.0, atol=1e-6):
        raise InvalidInputError("skin weight rows must be non-negative and sum to 1")

    local = rodrigues(xi)                      # (K, 3, 3)
    rw = np.empty_like(local)                  # world rotations
    d = np.zeros((k, 3))                       # world joint displacement
    order = _topological_order(parents)
    for j in order:
        p = parents[j]
        if p < 0:
            rw[j] = local[j]
        else:
            rw[j] = rw[p] @ local[j]
            d[j] = d[p] + (rw[p] - np.eye(3)) @ (joints[j] - joints[p])

    # per-vertex delta: sum_k w_k [(Rw_k - I)(v - j_k) + d_k]
    rel = v[:, None, :] - joints[None, :, :]                  # (N, K, 3)
    rot_delta = np.einsum("kab,nkb->nka", rw - np.eye(3), rel)
    delta = np.einsum("nk,nka->na", w, rot_delta + d[None, :, :])
    posed = v + delta

    posed_joints = joints + d
    transforms = np.tile(np.eye(4), (k, 1, 1))
    transforms[:, :3, :3] = rw
    transforms[:, :3, 3] = posed_joints - np.einsum("kab,kb->ka", rw, joints)
    return PosedBody(vertices=posed, joints=posed_joints,
                     per_joint_transforms=transforms,
                     faces=None if faces is None else np.asarray(faces, dtype=np.int64))


def _topological_order(parents):
    order = []
    remaining = set(range(len(parents)))
    placed = set()
    while remaining:
        progress = False
        for j in sorted(remaining):
            p = parents[j]
            if p < 0 or p in placed:
                order.append(j)
                placed.add(j)
                remaining.discard(j)
                progress = True
        if not progress:
            raise InvalidInputError("joint parents do not form a tree")
    return order


def pose_body(template: BodyTemplate, beta=None, xi=None) -> PosedBody:
    """Full chain: blendshapes, joint regression, then skinning."""
    beta = ShapeParams.zero() if beta is None else beta
    xi = PoseParams.zero(template.joint_count) if xi is None else xi
    verts = shape_deform(template, beta, xi)
    joints = pose_joints(template, beta)
    return lbs(verts, joints, xi, template.skin_weights, template.parents,
               faces=template.faces)


# ---------------------------------------------------------------------------
# Desk-scale procedural template


@dataclass(frozen=True)
class BodyPrimitive:
    """Capsule (sphere-swept segment), optionally squashed per axis about its
    midpoint. The analytic inside test is exact; meshes are tessellations."""

    name: str
    p0: tuple
    p1: tuple
    radius: float
    label_front: int
    label_back: int
    scale: tuple = (1.0, 1.0, 1.0)

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        a = np.asarray(self.p0)
        b = np.asarray(self.p1)
        mid = 0.5 * (a + b)
        q = (p - mid) / np.asarray(self.scale) + mid
        ab = b - a
        denom = float(ab @ ab)
        if denom < 1e-18:
            t = np.zeros(p.shape[:-1])
        else:
            t = np.clip((q - a) @ ab / denom, 0.0, 1.0)
        closest = a + t[..., None] * ab
        return np.linalg.norm(q - closest, axis=-1) <= self.radius


def _standing_joints():
    j = np.zeros((JOINT_COUNT, 3))
    j[0] = (0, 0.95, 0)
    j[1] = (0.09, 0.91, 0)
    j[2] = (-0.09, 0.91, 0)
    j[3] = (0, 1.05, 0)
    j[4] = (0.10, 0.52, 0)
    j[5] = (-0.10, 0.52, 0)
    j[6] = (0, 1.15, 0)
    j[7] = (0.11, 0.09, 0)
    j[8] = (-0.11, 0.09, 0)
    j[9] = (0, 1.28, 0)
    j[10] = (0.12, 0.02, 0.13)
    j[11] = (-0.12, 0.02, 0.13)
    j[12] = (0, 1.44, 0)
    j[13] = (0.06, 1.40, 0)
    j[14] = (-0.06, 1.40, 0)
    j[15] = (0, 1.54, 0)
    j[16] = (0.17, 1.40, 0)
    j[17] = (-0.17, 1.40, 0)
    arm = np.array([np.cos(np.deg2rad(40)), -np.sin(np.deg2rad(40)), 0.0])
    j[18] = j[16] + 0.26 * arm
    j[19] = j[17] + 0.26 * arm * (-1, 1, 1)
    j[20] = j[18] + 0.24 * arm
    j[21] = j[19] + 0.24 * arm * (-1, 1, 1)
    j[22] = j[20] + 0.08 * arm
    j[23] = j[21] + 0.08 * arm * (-1, 1, 1)
    return j


def _desk_primitives(j):
    def cap(name, a, b, r, lf, lb, scale=(1, 1, 1)):
        return BodyPrimitive(name, tuple(a), tuple(b), r, lf, lb, scale)

    return [
        cap("torso", j[0] + (0, -0.06, 0), j[9], 0.13, 2, 1, (1.2, 1.0, 0.72)),
        cap("neck", j[12], j[15], 0.045, 2, 1),
        cap("head", j[15] + (0, 0.05, 0.01), j[15] + (0, 0.17, 0.01), 0.085, 23, 24,
            (0.95, 1.0, 0.98)),
        cap("upper_arm_l", j[16], j[18], 0.048, 17, 15),
        cap("upper_arm_r", j[17], j[19], 0.048, 18, 16),
        cap("lower_arm_l", j[18], j[20], 0.042, 21, 19),
        cap("lower_arm_r", j[19], j[21], 0.042, 22, 20),
        cap("hand_l", j[20], j[22] + (0.04, -0.03, 0), 0.045, 4, 4),
        cap("hand_r", j[21], j[23] + (-0.04, -0.03, 0), 0.045, 3, 3),
        cap("upper_leg_l", j[1], j[4], 0.075, 10, 8),
        cap("upper_leg_r", j[2], j[5], 0.075, 9, 7),
        cap("lower_leg_l", j[4], j[7], 0.055, 14, 12),
        cap("lower_leg_r", j[5], j[8], 0.055, 13, 11),
        cap("foot_l", j[7], j[10] + (0, 0, 0.04), 0.042, 5, 5),
        cap("foot_r", j[8], j[11] + (0, 0, 0.04), 0.042, 6, 6),
    ]


def _capsule_mesh(prim: BodyPrimitive, n_seg=10, n_cap=3, n_cyl=3):
    """Triangulated capsule: two hemispherical caps and a cylindrical
    section, squashed per the primitive's scale about its midpoint."""
    a = np.asarray(prim.p0, dtype=np.float64)
    b = np.asarray(prim.p1, dtype=np.float64)
    axis = b - a
    length = np.linalg.norm(axis)
    u = axis / length if length > 1e-12 else np.array([0.0, 1.0, 0.0])
    ref = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    e1 = np.cross(u, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    r = prim.radius

    rows = []
    # bottom pole ring sequence (lat from -90 to 0), cylinder, top (0 to 90)
    for i in range(n_cap + 1):
        lat = -np.pi / 2 + (i / n_cap) * (np.pi / 2)
        rows.append((a + u * (r * np.sin(lat)), r * np.cos(lat)))
    for i in range(1, n_cyl):
        t = i / n_cyl
        rows.append((a + axis * t, r))
    for i in range(n_cap + 1):
        lat = (i / n_cap) * (np.pi / 2)
        rows.append((b + u * (r * np.sin(lat)), r * np.cos(lat)))

    verts = []
    ring_index = []
    for center, radius in rows:
        if radius < 1e-9:
            ring_index.append([len(verts)] * n_seg)
            verts.append(center)
            continue
        idx = []
        for s in range(n_seg):
            ang = 2 * np.pi * s / n_seg
            idx.append(len(verts))
            verts.append(center + radius * (np.cos(ang) * e1 + np.sin(ang) * e2))
        ring_index.append(idx)

    faces = []
    for rrow in range(len(rows) - 1):
        lo_ring, hi_ring = ring_index[rrow], ring_index[rrow + 1]
        for s in range(n_seg):
            s1 = (s + 1) % n_seg
            quad = {lo_ring[s], lo_ring[s1], hi_ring[s], hi_ring[s1]}
            if len(quad) < 3:
                continue
            if lo_ring[s] == lo_ring[s1]:
                faces.append((lo_ring[s], hi_ring[s1], hi_ring[s]))
            elif hi_ring[s] == hi_ring[s1]:
                faces.append((lo_ring[s], lo_ring[s1], hi_ring[s]))
            else:
                faces.append((lo_ring[s], lo_ring[s1], hi_ring[s1]))
                faces.append((lo_ring[s], hi_ring[s1], hi_ring[s]))

    verts = np.asarray(verts)
    mid = 0.5 * (a + b)
    verts = (verts - mid) * np.asarray(prim.scale) + mid
    return verts, np.asarray(faces, dtype=np.int64)


def _distance_to_segments(points, seg_a, seg_b):
    """(N, S) distances from points to segments."""
    p = points[:, None, :]
    a = seg_a[None, :, :]
    ab = (seg_b - seg_a)[None, :, :]
    denom = np.maximum((ab * ab).sum(-1), 1e-18)
    t = np.clip(((p - a) * ab).sum(-1) / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


def _distance_based_weights(vertices, joints, parents, tau=0.06, top_k=4):
    """Gaussian falloff on the distance to each joint's bone segments
    (joint to each child; a short stub at leaves), truncated to the top_k
    influences and renormalized."""
    k = joints.shape[0]
    seg_a = np.empty((k, 3))
    seg_b = np.empty((k, 3))
    children = {j: [] for j in range(k)}
    for j in range(k):
        if parents[j] >= 0:
            children[int(parents[j])].append(j)
    for j in range(k):
        seg_a[j] = joints[j]
        if children[j]:
            seg_b[j] = np.mean([joints[c] for c in children[j]], axis=0)
        elif parents[j] >= 0:
            direction = joints[j] - joints[int(parents[j])]
            n = np.linalg.norm(direction)
            seg_b[j] = joints[j] + (direction / n * 0.03 if n > 1e-9 else 0.0)
        else:
            seg_b[j] = joints[j]
    d = _distance_to_segments(vertices, seg_a, seg_b)
    w = np.exp(-((d / tau) ** 2))
    # keep the strongest influences only
    if top_k < k:
        thresh = np.sort(w, axis=1)[:, -top_k][:, None]
        w = np.where(w >= thresh, w, 0.0)
    w = np.maximum(w, 1e-12)
    return w / w.sum(axis=1, keepdims=True)


@functools.lru_cache(maxsize=2)
def desk_body(n_seg=10) -> tuple[BodyTemplate, tuple[BodyPrimitive, ...]]:
    """The bundled desk-scale humanoid: template plus its analytic
    primitives, centered so the body straddles the origin."""
    standing = _standing_joints()
    center = np.array([0.0, 0.875, 0.0])
    joints = standing - center

    prims = []
    for prim in _desk_primitives(standing):
        prims.append(BodyPrimitive(
            prim.name, tuple(np.asarray(prim.p0) - center),
            tuple(np.asarray(prim.p1) - center), prim.radius,
            prim.label_front, prim.label_back, prim.scale))

    verts_l, faces_l, labels_l = [], [], []
    offset = 0
    for prim in prims:
        v, f = _capsule_mesh(prim, n_seg=n_seg)
        centroids = v[f].mean(axis=1)
        axis_z = 0.5 * (prim.p0[2] + prim.p1[2])
        labels = np.where(centroids[:, 2] >= axis_z, prim.label_front, prim.label_back)
        verts_l.append(v)
        faces_l.append(f + offset)
        labels_l.append(labels)
        offset += v.shape[0]
    vertices = np.concatenate(verts_l)
    faces = np.concatenate(faces_l)
    labels = np.concatenate(labels_l).astype(np.int32)

    weights = _distance_based_weights(vertices, joints, PARENTS)

    # two meaningful shape dims: 0 fattens radially off the spine axis,
    # 1 stretches height; the rest are zero
    shape_basis = np.zeros((10, vertices.shape[0], 3))
    radial = vertices.copy()
    radial[:, 1] = 0.0
    norms = np.maximum(np.linalg.norm(radial, axis=1, keepdims=True), 1e-6)
    shape_basis[0] = 0.04 * radial / norms
    shape_basis[1][:, 1] = 0.06 * vertices[:, 1]

    template = BodyTemplate(
        vertices=vertices, faces=faces, face_part_labels=labels,
        skin_weights=weights, canonical_joints=joints, parents=PARENTS.copy(),
        shape_basis=shape_basis)
    return template, tuple(prims)


def desk_template(n_seg=10) -> BodyTemplate:
    return desk_body(n_seg)[0]


def inside_body(primitives, points: np.ndarray) -> np.ndarray:
    """Exact union inside test over the analytic primitives."""
    p = np.asarray(points, dtype=np.float64)
    mask = np.zeros(p.shape[:-1], dtype=bool)
    for prim in primitives:
        mask |= prim.contains(p)
    return mask


def body_part_colors(primitives, points: np.ndarray, palette: np.ndarray) -> np.ndarray:
    """Palette color of the first containing primitive (black outside)."""
    p = np.asarray(points, dtype=np.float64)
    out = np.zeros(p.shape[:-1] + (3,))
    assigned = np.zeros(p.shape[:-1], dtype=bool)
    for prim in primitives:
        hit = prim.contains(p) & ~assigned
        out[hit] = palette[prim.label_front] / 255.0
        assigned |= hit
    return out


# ---------------------------------------------------------------------------
# Template serialization

_JSON_FORMAT = "voxatar-body-template"


def save_template_json(template: BodyTemplate, path) -> None:
    doc = {
        "format": _JSON_FORMAT,
        "version": 1,
        "vertices": template.vertices.tolist(),
        "faces": template.faces.tolist(),
        "face_part_labels": template.face_part_labels.tolist(),
        "skin_weights": template.skin_weights.tolist(),
        "canonical_joints": template.canonical_joints.tolist(),
        "parents": template.parents.tolist(),
        "shape_basis": None if template.shape_basis is None else template.shape_basis.tolist(),
        "pose_basis": None if template.pose_basis is None else template.pose_basis.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_template_json(path) -> BodyTemplate:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != _JSON_FORMAT:
        raise InvalidInputError(f"{path}: not a body template file")
    if doc.get("version") != 1:
        raise InvalidInputError(f"{path}: unsupported template version {doc.get('version')}")
    return BodyTemplate(
        vertices=np.asarray(doc["vertices"]),
        faces=np.asarray(doc["faces"]),
        face_part_labels=np.asarray(doc["face_part_labels"]),
        skin_weights=np.asarray(doc["skin_weights"]),
        canonical_joints=np.asarray(doc["canonical_joints"]),
        parents=np.asarray(doc["parents"]),
        shape_basis=None if doc.get("shape_basis") is None else np.asarray(doc["shape_basis"]),
        pose_basis=None if doc.get("pose_basis") is None else np.asarray(doc["pose_basis"]),
    )


# Nearest-joint fallback labels for external assets without face labels.
JOINT_TO_PART = np.array([2, 10, 9, 2, 14, 13, 2, 5, 6, 2, 5, 6, 2, 2, 2, 23,
                          17, 18, 21, 22, 4, 3, 4, 3], dtype=np.int32)


def load_template_npz(path) -> BodyTemplate:
    """Load an external SMPL-style asset.

    Expected keys: v_template (N,3), f (F,3), weights (N,K), parents (K,) or
    kintree_table (2,K), and J (K,3) or J_regressor (K,N); optional
    shapedirs (N,3,10), posedirs (N,3,9*(K-1)), face_part_labels (F,).
    Missing face labels are filled by each face's nearest joint.
    """
    data = np.load(path)
    v = np.asarray(data["v_template"], dtype=np.float64)
    f = np.asarray(data["f"], dtype=np.int64)
    w = np.asarray(data["weights"], dtype=np.float64)
    if "parents" in data:
        parents = np.asarray(data["parents"], dtype=np.int64)
    elif "kintree_table" in data:
        parents = np.asarray(data["kintree_table"], dtype=np.int64)[0]
        parents = parents.copy()
        parents[0] = -1
    else:
        raise InvalidInputError(f"{path}: needs 'parents' or 'kintree_table'")
    if "J" in data:
        joints = np.asarray(data["J"], dtype=np.float64)
    elif "J_regressor" in data:
        joints = np.asarray(data["J_regressor"], dtype=np.float64) @ v
    else:
        raise InvalidInputError(f"{path}: needs 'J' or 'J_regressor'")
    shape_basis = None
    if "shapedirs" in data:
        shape_basis = np.moveaxis(np.asarray(data["shapedirs"], dtype=np.float64), 2, 0)
    pose_basis = None
    if "posedirs" in data:
        pose_basis = np.moveaxis(np.asarray(data["posedirs"], dtype=np.float64), 2, 0)
    if "face_part_labels" in data:
        labels = np.asarray(data["face_part_labels"], dtype=np.int32)
    else:
        centroids = v[f].mean(axis=1)
        nearest = np.argmin(
            np.linalg.norm(centroids[:, None, :] - joints[None, :, :], axis=-1), axis=1)
        labels = JOINT_TO_PART[nearest]
    return BodyTemplate(vertices=v, faces=f, face_part_labels=labels,
                        skin_weights=w, canonical_joints=joints, parents=parents,
                        shape_basis=shape_basis, pose_basis=pose_basis)


def export_posed_obj(body: PosedBody, path) -> None:
    """Plain OBJ dump of a posed mesh for eyeballing in a viewer."""
    with open(path, "w") as fh:
        for v in body.vertices:
            fh.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
        if body.faces is not None:
            for f in body.faces:
                fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
