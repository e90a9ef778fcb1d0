"""Numba kernels for the factored-field hot path.

Each kernel is a fused gather/scatter over a batch of query points so the
training loop never materialises dense grids.  Loops are sequential
(point-major), which keeps accumulation order deterministic; `nogil` lets
ray chunks overlap when a thread pool is used.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def field_forward(vx, vy, vz, myz, mxz, mxy, pts, coeff, num_channels, out):
    """Evaluate the factored field at `pts` (normalized [0,1]^3).

    vx/vy/vz: (C*K, D); myz/mxz/mxy: (C*K, D, D); coeff: (P, K) per-point
    component coefficients (window weight x temporal basis); out: (P, C).
    """
    ck, d = vx.shape
    n_pts = pts.shape[0]
    k_comp = ck // num_channels
    for p in range(n_pts):
        tx = pts[p, 0] * (d - 1)
        ty = pts[p, 1] * (d - 1)
        tz = pts[p, 2] * (d - 1)
        ix = min(int(tx), d - 2)
        iy = min(int(ty), d - 2)
        iz = min(int(tz), d - 2)
        wx = tx - ix
        wy = ty - iy
        wz = tz - iz
        for c in range(num_channels):
            acc = 0.0
            for k in range(k_comp):
                j = c * k_comp + k
                lx = vx[j, ix] * (1 - wx) + vx[j, ix + 1] * wx
                ly = vy[j, iy] * (1 - wy) + vy[j, iy + 1] * wy
                lz = vz[j, iz] * (1 - wz) + vz[j, iz + 1] * wz
                byz = (myz[j, iy, iz] * (1 - wy) * (1 - wz)
                       + myz[j, iy, iz + 1] * (1 - wy) * wz
                       + myz[j, iy + 1, iz] * wy * (1 - wz)
                       + myz[j, iy + 1, iz + 1] * wy * wz)
                bxz = (mxz[j, ix, iz] * (1 - wx) * (1 - wz)
                       + mxz[j, ix, iz + 1] * (1 - wx) * wz
                       + mxz[j, ix + 1, iz] * wx * (1 - wz)
                       + mxz[j, ix + 1, iz + 1] * wx * wz)
                bxy = (mxy[j, ix, iy] * (1 - wx) * (1 - wy)
                       + mxy[j, ix, iy + 1] * (1 - wx) * wy
                       + mxy[j, ix + 1, iy] * wx * (1 - wy)
                       + mxy[j, ix + 1, iy + 1] * wx * wy)
                acc += coeff[p, k] * (lz * bxy + lx * byz + ly * bxz)
            out[p, c] = acc


@njit(cache=True, nogil=True)
def field_backward(vx, vy, vz, myz, mxz, mxy, pts, coeff, num_channels,
                   upstream, gvx, gvy, gvz, gmyz, gmxz, gmxy, dcoeff):
    """Accumulate d(loss)/d(tensor entries) into the g* buffers.

    upstream: (P, C) = d(loss)/d(raw field value); dcoeff: (P, K) output,
    d(loss)/d(per-point coefficient), later folded into the basis gradient.
    Gradients land only on the interpolation stencil of each point.
    """
    ck, d = vx.shape
    n_pts = pts.shape[0]
    k_comp = ck // num_channels
    for p in range(n_pts):
        tx = pts[p, 0] * (d - 1)
        ty = pts[p, 1] * (d - 1)
        tz = pts[p, 2] * (d - 1)
        ix = min(int(tx), d - 2)
        iy = min(int(ty), d - 2)
        iz = min(int(tz), d - 2)
        wx = tx - ix
        wy = ty - iy
        wz = tz - iz
        for c in range(num_channels):
            u = upstream[p, c]
            for k in range(k_comp):
                j = c * k_comp + k
                lx = vx[j, ix] * (1 - wx) + vx[j, ix + 1] * wx
                ly = vy[j, iy] * (1 - wy) + vy[j, iy + 1] * wy
                lz = vz[j, iz] * (1 - wz) + vz[j, iz + 1] * wz
                byz = (myz[j, iy, iz] * (1 - wy) * (1 - wz)
                       + myz[j, iy, iz + 1] * (1 - wy) * wz
                       + myz[j, iy + 1, iz] * wy * (1 - wz)
                       + myz[j, iy + 1, iz + 1] * wy * wz)
                bxz = (mxz[j, ix, iz] * (1 - wx) * (1 - wz)
                       + mxz[j, ix, iz + 1] * (1 - wx) * wz
                       + mxz[j, ix + 1, iz] * wx * (1 - wz)
                       + mxz[j, ix + 1, iz + 1] * wx * wz)
                bxy = (mxy[j, ix, iy] * (1 - wx) * (1 - wy)
                       + mxy[j, ix, iy + 1] * (1 - wx) * wy
                       + mxy[j, ix + 1, iy] * wx * (1 - wy)
                       + mxy[j, ix + 1, iy + 1] * wx * wy)
                dcoeff[p, k] += u * (lz * bxy + lx * byz + ly * bxz)
                g = u * coeff[p, k]
                dlx = g * byz
                dly = g * bxz
                dlz = g * bxy
                gvx[j, ix] += dlx * (1 - wx)
                gvx[j, ix + 1] += dlx * wx
                gvy[j, iy] += dly * (1 - wy)
                gvy[j, iy + 1] += dly * wy
                gvz[j, iz] += dlz * (1 - wz)
                gvz[j, iz + 1] += dlz * wz
                dbyz = g * lx
                dbxz = g * ly
                dbxy = g * lz
                gmyz[j, iy, iz] += dbyz * (1 - wy) * (1 - wz)
                gmyz[j, iy, iz + 1] += dbyz * (1 - wy) * wz
                gmyz[j, iy + 1, iz] += dbyz * wy * (1 - wz)
                gmyz[j, iy + 1, iz + 1] += dbyz * wy * wz
                gmxz[j, ix, iz] += dbxz * (1 - wx) * (1 - wz)
                gmxz[j, ix, iz + 1] += dbxz * (1 - wx) * wz
                gmxz[j, ix + 1, iz] += dbxz * wx * (1 - wz)
                gmxz[j, ix + 1, iz + 1] += dbxz * wx * wz
                gmxy[j, ix, iy] += dbxy * (1 - wx) * (1 - wy)
                gmxy[j, ix, iy + 1] += dbxy * (1 - wx) * wy
                gmxy[j, ix + 1, iy] += dbxy * wx * (1 - wy)
                gmxy[j, ix + 1, iy + 1] += dbxy * wx * wy
