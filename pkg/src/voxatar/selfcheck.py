"""Standing numeric self-checks: the renderer finite-difference gradient
audit and the rasterizer-versus-raycast agreement audit.

These are the same checks the acceptance suite runs; the gradcheck CLI
command executes them on demand. The raycast oracle here is an independent
per-pixel ray-triangle intersector (Moller-Trumbore), not a second code
path through the rasterizer.
"""

from __future__ import annotations

import time

import numpy as np

from .raster import Camera, camera_from_spherical, generate_rays, rasterize_condition
from .renderer import RenderSettings, render, render_backward
from .voxel_field import Bounds, VoxelField


def renderer_gradient_check(seed: int, grid: int = 16, resolution: int = 8,
                            h: float = 1e-3, rel_tol: float = 1e-3,
                            grad_floor: float = 1e-6,
                            perturb_adjoint: bool = False) -> dict:
    """Central finite differences against the analytic adjoint, every
    density and color coordinate whose analytic gradient exceeds the floor.

    ``perturb_adjoint`` injects a deliberate error into the analytic
    gradient (negative-control fixture: the check must then fail).
    """
    rng = np.random.default_rng(seed)
    bounds = Bounds((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
    field = VoxelField(bounds, rng.normal(0.5, 1.0, (grid,) * 3),
                       rng.uniform(0.0, 1.0, (grid,) * 3 + (3,)))
    cam = camera_from_spherical(radius=rng.uniform(1.2, 1.8),
                                azimuth=rng.uniform(0, 360),
                                elevation=rng.uniform(-30, 45),
                                width=resolution, height=resolution)
    settings = RenderSettings(background=(0.3, 0.6, 0.9),
                              early_stop_transmittance=0.0)
    pixel_grad = rng.normal(0.0, 1.0, (resolution, resolution, 3))

    grad_d, grad_c = render_backward(field, cam, settings, pixel_grad,
                                     np.asarray(settings.background))
    if perturb_adjoint:
        grad_d = grad_d.copy()
        flat = np.argmax(np.abs(grad_d))
        grad_d.reshape(-1)[flat] *= 1.01

    def loss_of(f: VoxelField) -> float:
        out = render(f, cam, settings)
        return float(np.sum(out.rgb * pixel_grad))

    worst = {"rel_err": 0.0, "where": None}
    checked = 0
    for grid_vals, analytic, kind in ((field.density_raw, grad_d, "density"),
                                      (field.color, grad_c, "color")):
        coords = np.argwhere(np.abs(analytic) > grad_floor)
        for idx in coords:
            idx = tuple(idx)
            orig = grid_vals[idx]
            grid_vals[idx] = orig + h
            up = loss_of(field)
            grid_vals[idx] = orig - h
            down = loss_of(field)
            grid_vals[idx] = orig
            fd = (up - down) / (2 * h)
            an = analytic[idx]
            rel = abs(fd - an) / max(abs(fd), abs(an))
            checked += 1
            if rel > worst["rel_err"]:
                worst = {"rel_err": float(rel), "where": (kind,) + idx,
                         "analytic": float(an), "fd": float(fd)}
    return {"seed": seed, "checked": checked, "rel_tol": rel_tol,
            "max_rel_err": worst["rel_err"], "worst": worst,
            "passed": worst["rel_err"] <= rel_tol and checked > 0}


def raycast_labels(vertices: np.ndarray, faces: np.ndarray,
                   face_labels: np.ndarray, camera: Camera) -> np.ndarray:
    """Brute-force per-pixel nearest ray-triangle intersection label image.

    Independent of the rasterizer: every pixel ray is intersected with every
    triangle (Moller-Trumbore), nearest positive hit wins.
    """
    origin, dirs = generate_rays(camera)
    h, w = dirs.shape[:2]
    rays = dirs.reshape(-1, 3)
    v0 = vertices[faces[:, 0]]
    e1 = vertices[faces[:, 1]] - v0
    e2 = vertices[faces[:, 2]] - v0
    labels = np.zeros(rays.shape[0], dtype=np.int32)
    best_t = np.full(rays.shape[0], np.inf)
    for fi in range(faces.shape[0]):
        pvec = np.cross(rays, e2[fi])
        det = pvec @ e1[fi]
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = origin - v0[fi]
        u = (pvec @ tvec) * inv
        qvec = np.cross(tvec, e1[fi])
        v = (rays @ qvec) * inv
        t = float(e2[fi] @ qvec) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-6) & (t < best_t)
        best_t[hit] = t[hit]
        labels[hit] = face_labels[fi]
    return labels.reshape(h, w)


class _Soup:
    def __init__(self, vertices, faces):
        self.vertices = vertices
        self.faces = faces


def random_triangle_soup(rng: np.random.Generator, n_tris: int):
    """Triangles scattered in a unit box near the origin with random labels."""
    centers = rng.uniform(-0.45, 0.45, (n_tris, 3))
    offsets = rng.uniform(-0.22, 0.22, (n_tris, 3, 3))
    verts = (centers[:, None, :] + offsets).reshape(-1, 3)
    faces = np.arange(3 * n_tris, dtype=np.int64).reshape(-1, 3)
    labels = rng.integers(1, 25, n_tris).astype(np.int32)
    return verts, faces, labels


def rasterizer_oracle_check(seed: int, n_meshes: int = 20, max_tris: int = 200,
                            resolution: int = 32,
                            agreement_floor: float = 0.99) -> dict:
    """Z-buffer output versus the raycast oracle on random triangle soups."""
    rng = np.random.default_rng(seed)
    results = []
    for mi in range(n_meshes):
        n_tris = int(rng.integers(1, max_tris + 1))
        verts, faces, labels = random_triangle_soup(rng, n_tris)
        cam = camera_from_spherical(radius=rng.uniform(1.8, 2.5),
                                    azimuth=rng.uniform(0, 360),
                                    elevation=rng.uniform(-40, 60),
                                    width=resolution, height=resolution)
        img = rasterize_condition(_Soup(verts, faces), labels, cam)
        oracle = raycast_labels(verts, faces, labels, cam)
        agree = float(np.mean(img.labels.astype(np.int32) == oracle))
        results.append(agree)
    worst = min(results)
    return {"seed": seed, "n_meshes": n_meshes, "worst_agreement": worst,
            "agreements": results, "passed": worst >= agreement_floor}


def run_gradcheck(seed: int = 0, seeds: int = 5,
                  perturb_adjoint: bool = False) -> dict:
    """The gradcheck command body: renderer FD audit over several seeds plus
    the rasterizer audit; machine-readable result."""
    t0 = time.monotonic()
    renderer_results = [
        renderer_gradient_check(seed + i, perturb_adjoint=perturb_adjoint)
        for i in range(seeds)]
    raster_result = rasterizer_oracle_check(seed)
    passed = all(r["passed"] for r in renderer_results) and raster_result["passed"]
    worst = max(renderer_results, key=lambda r: r["max_rel_err"])
    return {
        "passed": bool(passed),
        "renderer": {"seeds": seeds,
                     "checked_coordinates": sum(r["checked"] for r in renderer_results),
                     "max_rel_err": worst["max_rel_err"],
                     "worst": worst["worst"]},
        "rasterizer": {"worst_agreement": raster_result["worst_agreement"]},
        "elapsed_s": time.monotonic() - t0,
    }
