# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled backend for the hot kernels.

Mirrors _numpy_ref semantics exactly: same sample lattice, same early-stop
rule, same trilinear stencil clamping, same top-left rasterization rule.
Accumulation along a ray is sequential in both backends; cross-backend
differences are float-rounding only.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log1p, sqrt, floor, ceil, INFINITY

cnp.import_array()

BACKEND_NAME = "native"


cdef inline double _softplus(double x) nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline Py_ssize_t _clamp_idx(Py_ssize_t v, Py_ssize_t hi) nogil:
    if v < 0:
        return 0
    if v > hi:
        return hi
    return v


cdef inline double _clamp01(double v) nogil:
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


def march_forward(double[:, :, ::1] dens, double[:, :, :, ::1] col,
                  double[::1] lo, double[::1] hi, double[::1] h, double shift,
                  double[:, ::1] rays_o, double[:, ::1] rays_d,
                  double near, double dt,
                  cnp.int64_t[::1] i0, cnp.int64_t[::1] count,
                  double early_stop, double[::1] bg):
    cdef Py_ssize_t n = rays_o.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] rgb_np = np.zeros((n, 3))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] alpha_np = np.zeros(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wt_np = np.zeros(n)
    cdef double[:, ::1] rgb = rgb_np
    cdef double[::1] alpha = alpha_np
    cdef double[::1] wt = wt_np

    cdef Py_ssize_t nx = dens.shape[0], ny = dens.shape[1], nz = dens.shape[2]
    cdef Py_ssize_t r, s, ix, iy, iz
    cdef double ox, oy, oz, dx, dy, dz, t, px, py, pz
    cdef double tau, T, sigma, att, w, raw
    cdef double ux, uy, uz, fx, fy, fz
    cdef double c0, c1, c2, wx, wcorner
    cdef double acc0, acc1, acc2, accw, accwt
    cdef double bg0 = bg[0], bg1 = bg[1], bg2 = bg[2]
    cdef double lo0 = lo[0], lo1 = lo[1], lo2 = lo[2]
    cdef double hi0 = hi[0], hi1 = hi[1], hi2 = hi[2]
    cdef double h0 = h[0], h1 = h[1], h2 = h[2]
    cdef Py_ssize_t base, cnt, a, b, c

    with nogil:
        for r in range(n):
            ox = rays_o[r, 0]; oy = rays_o[r, 1]; oz = rays_o[r, 2]
            dx = rays_d[r, 0]; dy = rays_d[r, 1]; dz = rays_d[r, 2]
            base = i0[r]; cnt = count[r]
            tau = 0.0
            acc0 = 0.0; acc1 = 0.0; acc2 = 0.0; accw = 0.0; accwt = 0.0
            for s in range(cnt):
                t = near + (base + s + 0.5) * dt
                T = exp(-tau)
                if T < early_stop:
                    break
                px = ox + t * dx; py = oy + t * dy; pz = oz + t * dz
                if (px < lo0 or px > hi0 or py < lo1 or py > hi1
                        or pz < lo2 or pz > hi2):
                    continue
                ux = (px - lo0) / h0 - 0.5
                uy = (py - lo1) / h1 - 0.5
                uz = (pz - lo2) / h2 - 0.5
                ix = _clamp_idx(<Py_ssize_t>floor(ux), nx - 2)
                iy = _clamp_idx(<Py_ssize_t>floor(uy), ny - 2)
                iz = _clamp_idx(<Py_ssize_t>floor(uz), nz - 2)
                fx = _clamp01(ux - ix); fy = _clamp01(uy - iy); fz = _clamp01(uz - iz)
                raw = 0.0; c0 = 0.0; c1 = 0.0; c2 = 0.0
                for a in range(2):
                    for b in range(2):
                        for c in range(2):
                            wcorner = ((fx if a else 1.0 - fx)
                                       * (fy if b else 1.0 - fy)
                                       * (fz if c else 1.0 - fz))
                            raw += wcorner * dens[ix + a, iy + b, iz + c]
                            c0 += wcorner * col[ix + a, iy + b, iz + c, 0]
                            c1 += wcorner * col[ix + a, iy + b, iz + c, 1]
                            c2 += wcorner * col[ix + a, iy + b, iz + c, 2]
                sigma = _softplus(raw + shift)
                att = exp(-sigma * dt)
                w = T * (1.0 - att)
                acc0 += w * (c0 - bg0)
                acc1 += w * (c1 - bg1)
                acc2 += w * (c2 - bg2)
                accw += w
                accwt += w * t
                tau += sigma * dt
            rgb[r, 0] = bg0 + acc0
            rgb[r, 1] = bg1 + acc1
            rgb[r, 2] = bg2 + acc2
            alpha[r] = accw
            wt[r] = accwt
    return rgb_np, alpha_np, wt_np


def march_backward(double[:, :, ::1] dens, double[:, :, :, ::1] col,
                   double[::1] lo, double[::1] hi, double[::1] h, double shift,
                   double[:, ::1] rays_o, double[:, ::1] rays_d,
                   double near, double dt,
                   cnp.int64_t[::1] i0, cnp.int64_t[::1] count,
                   double early_stop, double[::1] bg,
                   double[:, ::1] pixel_grad):
    cdef Py_ssize_t n = rays_o.shape[0]
    cdef Py_ssize_t nx = dens.shape[0], ny = dens.shape[1], nz = dens.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] gd_np = np.zeros((nx, ny, nz))
    cdef cnp.ndarray[cnp.float64_t, ndim=4] gc_np = np.zeros((nx, ny, nz, 3))
    cdef double[:, :, ::1] gd = gd_np
    cdef double[:, :, :, ::1] gc = gc_np

    cdef Py_ssize_t r, s, ix, iy, iz, a, b, c, base, cnt, pass_id
    cdef double ox, oy, oz, dx, dy, dz, t, px, py, pz
    cdef double tau, T, sigma, att, w, raw
    cdef double ux, uy, uz, fx, fy, fz
    cdef double c0, c1, c2, wcorner
    cdef double bg0 = bg[0], bg1 = bg[1], bg2 = bg[2]
    cdef double lo0 = lo[0], lo1 = lo[1], lo2 = lo[2]
    cdef double hi0 = hi[0], hi1 = hi[1], hi2 = hi[2]
    cdef double h0 = h[0], h1 = h[1], h2 = h[2]
    cdef double g0, g1, g2, e_dot_g, we, total_we, suffix
    cdef double grad_sigma, grad_raw, gw0, gw1, gw2

    with nogil:
        for r in range(n):
            ox = rays_o[r, 0]; oy = rays_o[r, 1]; oz = rays_o[r, 2]
            dx = rays_d[r, 0]; dy = rays_d[r, 1]; dz = rays_d[r, 2]
            g0 = pixel_grad[r, 0]; g1 = pixel_grad[r, 1]; g2 = pixel_grad[r, 2]
            base = i0[r]; cnt = count[r]
            total_we = 0.0
            suffix = 0.0
            # pass 0 accumulates the total weighted (c - bg).g; pass 1 walks
            # the ray again, peeling the suffix sum and scattering gradients.
            for pass_id in range(2):
                tau = 0.0
                if pass_id == 1:
                    suffix = total_we
                for s in range(cnt):
                    t = near + (base + s + 0.5) * dt
                    T = exp(-tau)
                    if T < early_stop:
                        break
                    px = ox + t * dx; py = oy + t * dy; pz = oz + t * dz
                    if (px < lo0 or px > hi0 or py < lo1 or py > hi1
                            or pz < lo2 or pz > hi2):
                        continue
                    ux = (px - lo0) / h0 - 0.5
                    uy = (py - lo1) / h1 - 0.5
                    uz = (pz - lo2) / h2 - 0.5
                    ix = _clamp_idx(<Py_ssize_t>floor(ux), nx - 2)
                    iy = _clamp_idx(<Py_ssize_t>floor(uy), ny - 2)
                    iz = _clamp_idx(<Py_ssize_t>floor(uz), nz - 2)
                    fx = _clamp01(ux - ix); fy = _clamp01(uy - iy); fz = _clamp01(uz - iz)
                    raw = 0.0; c0 = 0.0; c1 = 0.0; c2 = 0.0
                    for a in range(2):
                        for b in range(2):
                            for c in range(2):
                                wcorner = ((fx if a else 1.0 - fx)
                                           * (fy if b else 1.0 - fy)
                                           * (fz if c else 1.0 - fz))
                                raw += wcorner * dens[ix + a, iy + b, iz + c]
                                c0 += wcorner * col[ix + a, iy + b, iz + c, 0]
                                c1 += wcorner * col[ix + a, iy + b, iz + c, 1]
                                c2 += wcorner * col[ix + a, iy + b, iz + c, 2]
                    sigma = _softplus(raw + shift)
                    att = exp(-sigma * dt)
                    w = T * (1.0 - att)
                    e_dot_g = (c0 - bg0) * g0 + (c1 - bg1) * g1 + (c2 - bg2) * g2
                    we = w * e_dot_g
                    if pass_id == 0:
                        total_we += we
                    else:
                        suffix -= we
                        grad_sigma = dt * (T * att * e_dot_g - suffix)
                        grad_raw = grad_sigma * _sigmoid(raw + shift)
                        gw0 = w * g0; gw1 = w * g1; gw2 = w * g2
                        for a in range(2):
                            for b in range(2):
                                for c in range(2):
                                    wcorner = ((fx if a else 1.0 - fx)
                                               * (fy if b else 1.0 - fy)
                                               * (fz if c else 1.0 - fz))
                                    gd[ix + a, iy + b, iz + c] += wcorner * grad_raw
                                    gc[ix + a, iy + b, iz + c, 0] += wcorner * gw0
                                    gc[ix + a, iy + b, iz + c, 1] += wcorner * gw1
                                    gc[ix + a, iy + b, iz + c, 2] += wcorner * gw2
                    tau += sigma * dt
    return gd_np, gc_np


def raster_fill(double[:, :, ::1] tri_screen, double[:, :, ::1] tri_world,
                double[:, ::1] tri_invz, cnp.int32_t[::1] tri_labels,
                double[::1] cam_pos, Py_ssize_t width, Py_ssize_t height):
    cdef cnp.ndarray[cnp.int32_t, ndim=2] labels_np = np.zeros((height, width), dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dist_np = np.full((height, width), np.inf)
    cdef cnp.int32_t[:, ::1] labels = labels_np
    cdef double[:, ::1] dist = dist_np

    cdef Py_ssize_t nt = tri_screen.shape[0]
    cdef Py_ssize_t t, k, xa, ya, x_min, x_max, y_min, y_max
    cdef double sx0, sy0, sx1, sy1, sx2, sy2
    cdef double minx, maxx, miny, maxy
    cdef double area2, px, py
    cdef double e0, e1, e2, ax, ay, bx, by, ddx, ddy
    cdef double l0, l1, l2, inv_z, wx, wy, wz, d
    cdef double cx = cam_pos[0], cy = cam_pos[1], cz = cam_pos[2]
    cdef bint own0, own1, own2, cov

    with nogil:
        for t in range(nt):
            sx0 = tri_screen[t, 0, 0]; sy0 = tri_screen[t, 0, 1]
            sx1 = tri_screen[t, 1, 0]; sy1 = tri_screen[t, 1, 1]
            sx2 = tri_screen[t, 2, 0]; sy2 = tri_screen[t, 2, 1]
            minx = sx0
            if sx1 < minx: minx = sx1
            if sx2 < minx: minx = sx2
            maxx = sx0
            if sx1 > maxx: maxx = sx1
            if sx2 > maxx: maxx = sx2
            miny = sy0
            if sy1 < miny: miny = sy1
            if sy2 < miny: miny = sy2
            maxy = sy0
            if sy1 > maxy: maxy = sy1
            if sy2 > maxy: maxy = sy2
            x_min = <Py_ssize_t>floor(minx - 0.5)
            x_max = <Py_ssize_t>ceil(maxx - 0.5)
            y_min = <Py_ssize_t>floor(miny - 0.5)
            y_max = <Py_ssize_t>ceil(maxy - 0.5)
            if x_min < 0: x_min = 0
            if y_min < 0: y_min = 0
            if x_max > width - 1: x_max = width - 1
            if y_max > height - 1: y_max = height - 1
            if x_min > x_max or y_min > y_max:
                continue
            area2 = (sx1 - sx0) * (sy2 - sy0) - (sy1 - sy0) * (sx2 - sx0)
            # ownership flags per edge (edge k: vertex k+1 -> k+2)
            own0 = ((sy2 - sy1) == 0 and (sx2 - sx1) > 0) or (sy2 - sy1) < 0
            own1 = ((sy0 - sy2) == 0 and (sx0 - sx2) > 0) or (sy0 - sy2) < 0
            own2 = ((sy1 - sy0) == 0 and (sx1 - sx0) > 0) or (sy1 - sy0) < 0
            for ya in range(y_min, y_max + 1):
                py = ya + 0.5
                for xa in range(x_min, x_max + 1):
                    px = xa + 0.5
                    e0 = (sx2 - sx1) * (py - sy1) - (sy2 - sy1) * (px - sx1)
                    if e0 < 0 or (e0 == 0 and not own0):
                        continue
                    e1 = (sx0 - sx2) * (py - sy2) - (sy0 - sy2) * (px - sx2)
                    if e1 < 0 or (e1 == 0 and not own1):
                        continue
                    e2 = (sx1 - sx0) * (py - sy0) - (sy1 - sy0) * (px - sx0)
                    if e2 < 0 or (e2 == 0 and not own2):
                        continue
                    l0 = e0 / area2; l1 = e1 / area2; l2 = e2 / area2
                    inv_z = (l0 * tri_invz[t, 0] + l1 * tri_invz[t, 1]
                             + l2 * tri_invz[t, 2])
                    wx = (l0 * tri_world[t, 0, 0] * tri_invz[t, 0]
                          + l1 * tri_world[t, 1, 0] * tri_invz[t, 1]
                          + l2 * tri_world[t, 2, 0] * tri_invz[t, 2]) / inv_z
                    wy = (l0 * tri_world[t, 0, 1] * tri_invz[t, 0]
                          + l1 * tri_world[t, 1, 1] * tri_invz[t, 1]
                          + l2 * tri_world[t, 2, 1] * tri_invz[t, 2]) / inv_z
                    wz = (l0 * tri_world[t, 0, 2] * tri_invz[t, 0]
                          + l1 * tri_world[t, 1, 2] * tri_invz[t, 1]
                          + l2 * tri_world[t, 2, 2] * tri_invz[t, 2]) / inv_z
                    d = sqrt((wx - cx) * (wx - cx) + (wy - cy) * (wy - cy)
                             + (wz - cz) * (wz - cz))
                    if d < dist[ya, xa]:
                        dist[ya, xa] = d
                        labels[ya, xa] = tri_labels[t]
    return labels_np, dist_np
