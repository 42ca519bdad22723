"""Pure-NumPy reference backend for the hot kernels.

Semantics here are normative: the compiled backend in _native.pyx mirrors this
module operation for operation (same sample lattice, same early-stop rule,
same accumulation order along each ray), so the two agree to float rounding.

Ray-march compositing, per ray with step length dt:

    T_i = exp(-sum_{j<i} sigma_j dt)        transmittance reaching sample i
    w_i = T_i (1 - exp(-sigma_i dt))
    rgb = bg + sum_i w_i (c_i - bg)         so rgb == fg + (1 - alpha) bg

Samples with transmittance below ``early_stop`` are dropped; the backward
pass is the exact adjoint of the masked forward computation.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"

# keep vectorized temporaries around this many samples per chunk
_CHUNK_SAMPLES = 2_000_000


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _sample_points(rays_o, rays_d, near, dt, i0, count):
    """Sample positions t = near + (i0 + s + 0.5) dt for s < max(count).

    Returns points (N, S, 3), ts (N, S) and the validity mask (N, S).
    """
    n = rays_o.shape[0]
    s_max = int(count.max()) if n else 0
    s = np.arange(s_max)
    valid = s[None, :] < count[:, None]
    ts = near + (i0[:, None] + s[None, :] + 0.5) * dt
    pts = rays_o[:, None, :] + ts[..., None] * rays_d[:, None, :]
    return pts, ts, valid


def _trilinear_setup(pts, lo, hi, h, dims):
    """Corner base index, fractional offsets and inside-box mask for points
    of shape (..., 3)."""
    inside = np.all((pts >= lo) & (pts <= hi), axis=-1)
    u = (pts - lo) / h - 0.5
    i0 = np.clip(np.floor(u).astype(np.int64), 0, np.asarray(dims) - 2)
    f = np.clip(u - i0, 0.0, 1.0)
    return i0, f, inside


_CORNERS = [(dx, dy, dz) for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)]


def _corner_weight(f, corner):
    w = np.ones(f.shape[:-1])
    for a, c in enumerate(corner):
        w = w * (f[..., a] if c else (1.0 - f[..., a]))
    return w


def _gather(dens, col, i0, f):
    raw = np.zeros(f.shape[:-1])
    rgb = np.zeros(f.shape[:-1] + (3,))
    for corner in _CORNERS:
        w = _corner_weight(f, corner)
        ix = i0[..., 0] + corner[0]
        iy = i0[..., 1] + corner[1]
        iz = i0[..., 2] + corner[2]
        raw += w * dens[ix, iy, iz]
        rgb += w[..., None] * col[ix, iy, iz]
    return raw, rgb


def _march_chunk(dens, col, lo, hi, h, shift, o, d, near, dt, i0, count, early_stop):
    """Forward quantities for one ray chunk.

    Returns per-sample (sigma, colors, weights, transmittance, keep mask),
    plus the trilinear setup needed by the adjoint.
    """
    pts, ts, valid = _sample_points(o, d, near, dt, i0, count)
    ci0, f, inside = _trilinear_setup(pts, lo, hi, h, dens.shape)
    live = valid & inside
    raw, rgb = _gather(dens, col, ci0, f)
    sigma = np.where(live, _softplus(raw + shift), 0.0)
    tau = np.cumsum(sigma * dt, axis=1)
    t_before = np.exp(-np.concatenate([np.zeros((tau.shape[0], 1)), tau[:, :-1]], axis=1))
    keep = live & (t_before >= early_stop)
    att = np.exp(-sigma * dt)
    w = np.where(keep, t_before * (1.0 - att), 0.0)
    return pts, ts, ci0, f, raw, rgb, sigma, att, t_before, keep, w


def _chunks(n_rays, count):
    s_max = max(1, int(count.max()) if n_rays else 1)
    step = max(1, _CHUNK_SAMPLES // s_max)
    for a in range(0, n_rays, step):
        yield a, min(n_rays, a + step)


def march_forward(dens, col, lo, hi, h, shift, rays_o, rays_d, near, dt, i0, count,
                  early_stop, bg):
    """Composite all rays. Returns rgb (N,3), alpha (N,), wt (N,) where wt is
    the weight-integrated ray parameter (expected depth before
    normalization)."""
    n = rays_o.shape[0]
    rgb_out = np.zeros((n, 3))
    alpha = np.zeros(n)
    wt = np.zeros(n)
    for a, b in _chunks(n, count):
        _, ts, _, _, _, c_rgb, _, _, _, _, w = _march_chunk(
            dens, col, lo, hi, h, shift, rays_o[a:b], rays_d[a:b], near, dt,
            i0[a:b], count[a:b], early_stop)
        alpha[a:b] = w.sum(axis=1)
        wt[a:b] = (w * ts).sum(axis=1)
        fg = (w[..., None] * (c_rgb - bg)).sum(axis=1)
        rgb_out[a:b] = bg + fg
    return rgb_out, alpha, wt


def march_backward(dens, col, lo, hi, h, shift, rays_o, rays_d, near, dt, i0, count,
                   early_stop, bg, pixel_grad):
    """Adjoint of march_forward w.r.t. the raw density and color grids.

    d rgb / d sigma_i = dt [ T_{i+1} (c_i - bg) - sum_{j>i} w_j (c_j - bg) ]
    d rgb / d c_i     = w_i
    """
    grad_dens = np.zeros_like(dens)
    grad_col = np.zeros_like(col)
    flat_dims = dens.shape
    nyz = flat_dims[1] * flat_dims[2]
    nz = flat_dims[2]
    gd_flat = grad_dens.reshape(-1)
    gc_flat = grad_col.reshape(-1, 3)
    for a, b in _chunks(rays_o.shape[0], count):
        g = pixel_grad[a:b]
        (_, _, ci0, f, raw, c_rgb, sigma, att, t_before, keep, w) = _march_chunk(
            dens, col, lo, hi, h, shift, rays_o[a:b], rays_d[a:b], near, dt,
            i0[a:b], count[a:b], early_stop)
        e_dot_g = ((c_rgb - bg) * g[:, None, :]).sum(axis=-1)
        we = w * e_dot_g
        # suffix_i = sum_{j>i} w_j e_j.g  (reverse cumulative sum, exclusive)
        suffix = np.flip(np.cumsum(np.flip(we, axis=1), axis=1), axis=1) - we
        grad_sigma = np.where(keep, dt * (t_before * att * e_dot_g - suffix), 0.0)
        grad_raw = grad_sigma * _sigmoid(raw + shift)
        grad_c = np.where(keep[..., None], w[..., None] * g[:, None, :], 0.0)
        # scatter to the 8 stencil corners
        sel = keep.reshape(-1)
        cif = ci0.reshape(-1, 3)[sel]
        ff = f.reshape(-1, 3)[sel]
        gr = grad_raw.reshape(-1)[sel]
        gc = grad_c.reshape(-1, 3)[sel]
        for corner in _CORNERS:
            cw = _corner_weight(ff, corner)
            flat = ((cif[:, 0] + corner[0]) * nyz
                    + (cif[:, 1] + corner[1]) * nz
                    + (cif[:, 2] + corner[2]))
            np.add.at(gd_flat, flat, cw * gr)
            np.add.at(gc_flat, flat, cw[:, None] * gc)
    return grad_dens, grad_col


def raster_fill(tri_screen, tri_world, tri_invz, tri_labels, cam_pos, width, height):
    """Z-buffer fill over positively oriented screen-space triangles.

    Pixel centers are sampled at (ix + 0.5, iy + 0.5); boundary pixels follow
    the top-left ownership rule. Depth is the euclidean distance from the
    camera to the perspective-correct interpolated surface point; ties keep
    the earlier triangle (strict less-than test).
    """
    labels = np.zeros((height, width), dtype=np.int32)
    dist = np.full((height, width), np.inf)
    for t in range(tri_screen.shape[0]):
        s = tri_screen[t]
        x_min = max(0, int(np.floor(s[:, 0].min() - 0.5)))
        x_max = min(width - 1, int(np.ceil(s[:, 0].max() - 0.5)))
        y_min = max(0, int(np.floor(s[:, 1].min() - 0.5)))
        y_max = min(height - 1, int(np.ceil(s[:, 1].max() - 0.5)))
        if x_min > x_max or y_min > y_max:
            continue
        area2 = ((s[1, 0] - s[0, 0]) * (s[2, 1] - s[0, 1])
                 - (s[1, 1] - s[0, 1]) * (s[2, 0] - s[0, 0]))
        px = np.arange(x_min, x_max + 1) + 0.5
        py = np.arange(y_min, y_max + 1) + 0.5
        gx, gy = np.meshgrid(px, py)
        covered = np.ones(gx.shape, dtype=bool)
        lam = []
        # edge k runs from vertex k+1 to k+2; its function is lambda_k * area2
        for k in range(3):
            ax, ay = s[(k + 1) % 3]
            bx, by = s[(k + 2) % 3]
            dx, dy = bx - ax, by - ay
            e = dx * (gy - ay) - dy * (gx - ax)
            owned = (dy == 0 and dx > 0) or dy < 0
            covered &= (e > 0) | ((e == 0) & owned)
            lam.append(e)
        if not covered.any():
            continue
        lam = [e / area2 for e in lam]
        inv_z = lam[0] * tri_invz[t, 0] + lam[1] * tri_invz[t, 1] + lam[2] * tri_invz[t, 2]
        pos = sum(lam[k][..., None] * (tri_world[t, k] * tri_invz[t, k]) for k in range(3))
        pos = pos / inv_z[..., None]
        d = np.linalg.norm(pos - cam_pos, axis=-1)
        region = (slice(y_min, y_max + 1), slice(x_min, x_max + 1))
        update = covered & (d < dist[region])
        dist[region] = np.where(update, d, dist[region])
        labels[region] = np.where(update, tri_labels[t], labels[region])
    return labels, dist
