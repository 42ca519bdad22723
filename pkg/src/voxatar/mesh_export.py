"""Surface extraction and color baking from an optimized field.

Marching cubes runs on the activated density (scikit-image's Lewiner
variant: the asymmetry-resolved case table, vertices on cell edges by
linear interpolation of sigma - iso). Vertex colors are trilinear samples
of the color grid. Exports: ASCII OBJ with per-vertex colors and binary
little-endian PLY, both with loaders for round-trip checks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from skimage import measure

from .errors import InvalidInputError
from .voxel_field import VoxelField, activate_density, sample_clamped


@dataclass
class TriangleMesh:
    vertices: np.ndarray                    # (N, 3)
    faces: np.ndarray                       # (F, 3)
    colors: np.ndarray | None = None        # (N, 3) in [0, 1]

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(self.vertices)):
            raise InvalidInputError("mesh vertices must be finite")
        if self.faces.size and (self.faces.min() < 0
                                or self.faces.max() >= len(self.vertices)):
            raise InvalidInputError("face indices out of range")
        if self.colors is not None:
            self.colors = np.clip(
                np.asarray(self.colors, dtype=np.float64).reshape(-1, 3), 0.0, 1.0)
            if self.colors.shape[0] != self.vertices.shape[0]:
                raise InvalidInputError("need one color per vertex")

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64),
                   np.zeros((0, 3)))


def marching_cubes(field: VoxelField, iso: float = 0.1) -> TriangleMesh:
    """Extract the iso-surface of the activated density, in world
    coordinates. An empty level set yields an empty mesh."""
    if iso <= 0:
        raise InvalidInputError("iso level must be positive")
    sigma = activate_density(field.density_raw)
    if not (sigma.min() < iso < sigma.max()):
        return TriangleMesh.empty()
    spacing = tuple(field.cell_size)
    verts, faces, _normals, _vals = measure.marching_cubes(
        sigma, level=iso, spacing=spacing)
    # grid values live at cell centers: offset index space by half a cell
    verts = verts + np.asarray(field.bounds.min_corner) + 0.5 * field.cell_size
    return TriangleMesh(vertices=verts, faces=faces.astype(np.int64))


def bake_colors(mesh: TriangleMesh, field: VoxelField) -> TriangleMesh:
    """Per-vertex color from trilinear samples of the color grid; vertices
    beyond the bounds read the clamped edge cells."""
    if mesh.vertices.shape[0] == 0:
        return TriangleMesh.empty()
    _, colors = sample_clamped(field, mesh.vertices)
    return TriangleMesh(vertices=mesh.vertices.copy(), faces=mesh.faces.copy(),
                        colors=np.clip(colors, 0.0, 1.0))


def export(mesh: TriangleMesh, path, fmt: str | None = None) -> None:
    """Write OBJ (ASCII, vertex-color extension) or binary PLY."""
    fmt = fmt or _infer_format(path)
    if fmt == "obj":
        _write_obj(mesh, path)
    elif fmt == "ply":
        _write_ply(mesh, path)
    else:
        raise InvalidInputError(f"unknown mesh format {fmt!r} (obj or ply)")


def _infer_format(path) -> str:
    s = str(path).lower()
    if s.endswith(".obj"):
        return "obj"
    if s.endswith(".ply"):
        return "ply"
    raise InvalidInputError(f"cannot infer mesh format from {path!r}")


def _write_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w") as fh:
        for i, v in enumerate(mesh.vertices):
            if mesh.colors is not None and len(mesh.colors):
                c = mesh.colors[i]
                fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g} "
                         f"{c[0]:.9g} {c[1]:.9g} {c[2]:.9g}\n")
            else:
                fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def load_obj(path) -> TriangleMesh:
    verts, colors, faces = [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vals = [float(x) for x in parts[1:]]
                verts.append(vals[:3])
                if len(vals) >= 6:
                    colors.append(vals[3:6])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:4]]
                faces.append(idx)
    return TriangleMesh(
        vertices=np.asarray(verts, dtype=np.float64).reshape(-1, 3),
        faces=np.asarray(faces, dtype=np.int64).reshape(-1, 3),
        colors=np.asarray(colors, dtype=np.float64).reshape(-1, 3) if colors else None)


_PLY_HEADER = """ply
format binary_little_endian 1.0
element vertex {nv}
property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
element face {nf}
property list uchar int vertex_indices
end_header
"""


def _write_ply(mesh: TriangleMesh, path) -> None:
    nv = mesh.vertices.shape[0]
    nf = mesh.faces.shape[0]
    colors = mesh.colors
    if colors is None:
        colors = np.full((nv, 3), 0.5)
    cols8 = (np.clip(colors, 0, 1) * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(_PLY_HEADER.format(nv=nv, nf=nf).encode("ascii"))
        for i in range(nv):
            fh.write(struct.pack("<3f", *mesh.vertices[i]))
            fh.write(struct.pack("<3B", *cols8[i]))
        for f in mesh.faces:
            fh.write(struct.pack("<B3i", 3, int(f[0]), int(f[1]), int(f[2])))


def load_ply(path) -> TriangleMesh:
    with open(path, "rb") as fh:
        header = []
        while True:
            line = fh.readline().decode("ascii").strip()
            header.append(line)
            if line == "end_header":
                break
        nv = nf = 0
        for line in header:
            if line.startswith("element vertex"):
                nv = int(line.split()[-1])
            elif line.startswith("element face"):
                nf = int(line.split()[-1])
        if "format binary_little_endian 1.0" not in header:
            raise InvalidInputError(f"{path}: expected binary little-endian PLY")
        verts = np.empty((nv, 3))
        colors = np.empty((nv, 3))
        for i in range(nv):
            x, y, z = struct.unpack("<3f", fh.read(12))
            r, g, b = struct.unpack("<3B", fh.read(3))
            verts[i] = (x, y, z)
            colors[i] = (r / 255.0, g / 255.0, b / 255.0)
        faces = np.empty((nf, 3), dtype=np.int64)
        for i in range(nf):
            (count,) = struct.unpack("<B", fh.read(1))
            if count != 3:
                raise InvalidInputError("only triangle PLY faces supported")
            faces[i] = struct.unpack("<3i", fh.read(12))
    return TriangleMesh(vertices=verts, faces=faces, colors=colors)
