"""Vectorized NumPy implementations of the hot kernels.

Same contracts as the compiled backend (see _core.pyx); selected at import
time when the extension is unavailable or SLICEREG_FORCE_NUMPY is set.
Inputs arrive pre-normalized by the package wrappers: rasters are C-contiguous
float32, coordinates are float64.
"""
from __future__ import annotations

import numpy as np

BACKEND = "numpy"

# LC2 rank-deficiency handling; must match _core.pyx exactly.
_DET_RTOL = 1e-12
_REG_LAMBDA = 1e-8


def _axis_base(coords, n):
    c = np.clip(coords, 0.0, n - 1.0)
    if n == 1:
        i0 = np.zeros(len(c), dtype=np.intp)
        f = np.zeros(len(c))
    else:
        i0 = np.minimum(c.astype(np.intp), n - 2)
        f = c - i0
    return i0, f


def sample_bilinear(img, xs, ys):
    """Clamp-to-edge bilinear sampling at voxel coordinates (x, y)."""
    h, w = img.shape
    x0, fx = _axis_base(xs, w)
    y0, fy = _axis_base(ys, h)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    im = img.astype(np.float64, copy=False)
    v00 = im[y0, x0]
    v01 = im[y0, x1]
    v10 = im[y1, x0]
    v11 = im[y1, x1]
    return ((1 - fy) * ((1 - fx) * v00 + fx * v01)
            + fy * ((1 - fx) * v10 + fx * v11))


def sample_trilinear(vol, xs, ys, zs):
    """Clamp-to-edge trilinear sampling at voxel coordinates (x, y, z)."""
    nz, ny, nx = vol.shape
    x0, fx = _axis_base(xs, nx)
    y0, fy = _axis_base(ys, ny)
    z0, fz = _axis_base(zs, nz)
    x1 = np.minimum(x0 + 1, nx - 1)
    y1 = np.minimum(y0 + 1, ny - 1)
    z1 = np.minimum(z0 + 1, nz - 1)
    v = vol.astype(np.float64, copy=False)
    c00 = (1 - fx) * v[z0, y0, x0] + fx * v[z0, y0, x1]
    c01 = (1 - fx) * v[z0, y1, x0] + fx * v[z0, y1, x1]
    c10 = (1 - fx) * v[z1, y0, x0] + fx * v[z1, y0, x1]
    c11 = (1 - fx) * v[z1, y1, x0] + fx * v[z1, y1, x1]
    c0 = (1 - fy) * c00 + fy * c01
    c1 = (1 - fy) * c10 + fy * c11
    return (1 - fz) * c0 + fz * c1


def sample_trilinear_multi(vol, xs, ys, zs):
    """Trilinear sampling of a multi-channel volume (nz, ny, nx, c) -> (n, c)."""
    nz, ny, nx, _ = vol.shape
    x0, fx = _axis_base(xs, nx)
    y0, fy = _axis_base(ys, ny)
    z0, fz = _axis_base(zs, nz)
    x1 = np.minimum(x0 + 1, nx - 1)
    y1 = np.minimum(y0 + 1, ny - 1)
    z1 = np.minimum(z0 + 1, nz - 1)
    v = vol.astype(np.float64, copy=False)
    fx = fx[:, None]
    fy = fy[:, None]
    fz = fz[:, None]
    c00 = (1 - fx) * v[z0, y0, x0] + fx * v[z0, y0, x1]
    c01 = (1 - fx) * v[z0, y1, x0] + fx * v[z0, y1, x1]
    c10 = (1 - fx) * v[z1, y0, x0] + fx * v[z1, y0, x1]
    c11 = (1 - fx) * v[z1, y1, x0] + fx * v[z1, y1, x1]
    c0 = (1 - fy) * c00 + fy * c01
    c1 = (1 - fy) * c10 + fy * c11
    return (1 - fz) * c0 + fz * c1


def _box_sum(table, i0, i1, j0, j1):
    return (table[np.ix_(i1, j1)] - table[np.ix_(i0, j1)]
            - table[np.ix_(i1, j0)] + table[np.ix_(i0, j0)])


def _window_machinery(h, w, radius):
    rows = np.arange(h)
    cols = np.arange(w)
    i0 = np.maximum(rows - radius, 0)
    i1 = np.minimum(rows + radius, h - 1) + 1
    j0 = np.maximum(cols - radius, 0)
    j1 = np.minimum(cols + radius, w - 1) + 1
    counts = np.outer(i1 - i0, j1 - j0).astype(np.float64)
    return i0, i1, j0, j1, counts


def _integral(arr):
    h, w = arr.shape
    table = np.zeros((h + 1, w + 1))
    np.cumsum(arr, axis=0, out=table[1:, 1:])
    np.cumsum(table[1:, 1:], axis=1, out=table[1:, 1:])
    return table


def lncc(a, b, radius, eps):
    """Mean windowed NCC over all pixels; degenerate windows contribute 0."""
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    h, w = a.shape
    i0, i1, j0, j1, n = _window_machinery(h, w, radius)
    sa = _box_sum(_integral(a), i0, i1, j0, j1)
    sb = _box_sum(_integral(b), i0, i1, j0, j1)
    saa = _box_sum(_integral(a * a), i0, i1, j0, j1)
    sbb = _box_sum(_integral(b * b), i0, i1, j0, j1)
    sab = _box_sum(_integral(a * b), i0, i1, j0, j1)
    va = saa - sa * sa / n
    vb = sbb - sb * sb / n
    cov = sab - sa * sb / n
    valid = (va >= eps * n) & (vb >= eps * n)
    ncc = np.zeros_like(cov)
    np.divide(cov, np.sqrt(va * vb, where=valid, out=np.ones_like(va)),
              where=valid, out=ncc)
    np.clip(ncc, -1.0, 1.0, out=ncc)
    return float(ncc.sum() / (h * w))


def _solve3_sym(G, rhs):
    """Cramer solve of symmetric 3x3 systems, Tikhonov-regularized when the
    determinant vanishes relative to the trace scale."""
    g00, g01, g02 = G[..., 0, 0], G[..., 0, 1], G[..., 0, 2]
    g11, g12, g22 = G[..., 1, 1], G[..., 1, 2], G[..., 2, 2]
    scale = (g00 + g11 + g22) / 3.0
    det = (g00 * (g11 * g22 - g12 * g12)
           - g01 * (g01 * g22 - g12 * g02)
           + g02 * (g01 * g12 - g11 * g02))
    bad = det <= (_DET_RTOL * scale) ** 3
    if bad.any():
        lam = _REG_LAMBDA * scale
        g00 = np.where(bad, g00 + lam, g00)
        g11 = np.where(bad, g11 + lam, g11)
        g22 = np.where(bad, g22 + lam, g22)
        det = (g00 * (g11 * g22 - g12 * g12)
               - g01 * (g01 * g22 - g12 * g02)
               + g02 * (g01 * g12 - g11 * g02))
    det = np.where(det == 0.0, 1.0, det)  # all-zero-window guard; rhs is 0 there too
    b0, b1, b2 = rhs[..., 0], rhs[..., 1], rhs[..., 2]
    # adjugate rows of the symmetric matrix
    a00 = g11 * g22 - g12 * g12
    a01 = g02 * g12 - g01 * g22
    a02 = g01 * g12 - g02 * g11
    a11 = g00 * g22 - g02 * g02
    a12 = g01 * g02 - g00 * g12
    a22 = g00 * g11 - g01 * g01
    x0 = (a00 * b0 + a01 * b1 + a02 * b2) / det
    x1 = (a01 * b0 + a11 * b1 + a12 * b2) / det
    x2 = (a02 * b0 + a12 * b1 + a22 * b2) / det
    return np.stack([x0, x1, x2], axis=-1)


def lc2(source, grad, target, radius, eps):
    """Variance-weighted patchwise LC2 accumulation.

    Returns (weighted score sum, weight sum); the caller forms the ratio.
    """
    s = source.astype(np.float64)
    g = grad.astype(np.float64)
    t = target.astype(np.float64)
    h, w = s.shape
    i0, i1, j0, j1, n = _window_machinery(h, w, radius)

    def box(arr):
        return _box_sum(_integral(arr), i0, i1, j0, j1)

    ss, sg, st = box(s), box(g), box(t)
    sss, sgg, stt = box(s * s), box(g * g), box(t * t)
    ssg, sst, sgt = box(s * g), box(s * t), box(g * t)

    G = np.empty((h, w, 3, 3))
    G[..., 0, 0] = sss
    G[..., 0, 1] = G[..., 1, 0] = ssg
    G[..., 0, 2] = G[..., 2, 0] = ss
    G[..., 1, 1] = sgg
    G[..., 1, 2] = G[..., 2, 1] = sg
    G[..., 2, 2] = n
    rhs = np.stack([sst, sgt, st], axis=-1)
    x = _solve3_sym(G, rhs)

    rss = stt - 2.0 * np.einsum("...i,...i->...", x, rhs) \
        + np.einsum("...i,...ij,...j->...", x, G, x)
    rss = np.maximum(rss, 0.0)
    tvar_sum = np.maximum(stt - st * st / n, 0.0)
    weight = tvar_sum / n
    valid = weight >= eps
    ratio = rss / np.where(tvar_sum > 0.0, tvar_sum, 1.0)
    local = np.where(valid, np.clip(1.0 - ratio, 0.0, 1.0), 0.0)
    return float((weight * local).sum()), float(weight.sum())
