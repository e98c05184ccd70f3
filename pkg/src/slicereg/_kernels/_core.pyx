# Compiled kernels: clamp-to-edge samplers and windowed similarity sums.
# Contracts and branch constants must match _fallback.py.
import numpy as np

cimport cython
from libc.math cimport sqrt

BACKEND = "cython"

cdef double DET_RTOL = 1e-12
cdef double REG_LAMBDA = 1e-8


cdef inline void axis_base(double c, Py_ssize_t n, Py_ssize_t *i0, double *f) nogil:
    if c < 0.0:
        c = 0.0
    elif c > n - 1.0:
        c = n - 1.0
    if n == 1:
        i0[0] = 0
        f[0] = 0.0
    else:
        i0[0] = <Py_ssize_t> c
        if i0[0] > n - 2:
            i0[0] = n - 2
        f[0] = c - i0[0]


def sample_bilinear(const float[:, ::1] img, const double[::1] xs, const double[::1] ys):
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t k, x0, y0, x1, y1
    cdef double fx, fy
    with nogil:
        for k in range(n):
            axis_base(xs[k], w, &x0, &fx)
            axis_base(ys[k], h, &y0, &fy)
            x1 = x0 + 1 if x0 + 1 < w else w - 1
            y1 = y0 + 1 if y0 + 1 < h else h - 1
            out[k] = ((1.0 - fy) * ((1.0 - fx) * img[y0, x0] + fx * img[y0, x1])
                      + fy * ((1.0 - fx) * img[y1, x0] + fx * img[y1, x1]))
    return out_arr


def sample_trilinear(const float[:, :, ::1] vol, const double[::1] xs, const double[::1] ys, const double[::1] zs):
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t nz = vol.shape[0], ny = vol.shape[1], nx = vol.shape[2]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t k, x0, y0, z0, x1, y1, z1
    cdef double fx, fy, fz, c00, c01, c10, c11
    with nogil:
        for k in range(n):
            axis_base(xs[k], nx, &x0, &fx)
            axis_base(ys[k], ny, &y0, &fy)
            axis_base(zs[k], nz, &z0, &fz)
            x1 = x0 + 1 if x0 + 1 < nx else nx - 1
            y1 = y0 + 1 if y0 + 1 < ny else ny - 1
            z1 = z0 + 1 if z0 + 1 < nz else nz - 1
            c00 = (1.0 - fx) * vol[z0, y0, x0] + fx * vol[z0, y0, x1]
            c01 = (1.0 - fx) * vol[z0, y1, x0] + fx * vol[z0, y1, x1]
            c10 = (1.0 - fx) * vol[z1, y0, x0] + fx * vol[z1, y0, x1]
            c11 = (1.0 - fx) * vol[z1, y1, x0] + fx * vol[z1, y1, x1]
            out[k] = ((1.0 - fz) * ((1.0 - fy) * c00 + fy * c01)
                      + fz * ((1.0 - fy) * c10 + fy * c11))
    return out_arr


def sample_trilinear_multi(const float[:, :, :, ::1] vol, const double[::1] xs, const double[::1] ys, const double[::1] zs):
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t nz = vol.shape[0], ny = vol.shape[1], nx = vol.shape[2]
    cdef Py_ssize_t nc = vol.shape[3]
    out_arr = np.empty((n, nc), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t k, c, x0, y0, z0, x1, y1, z1
    cdef double fx, fy, fz, c00, c01, c10, c11
    with nogil:
        for k in range(n):
            axis_base(xs[k], nx, &x0, &fx)
            axis_base(ys[k], ny, &y0, &fy)
            axis_base(zs[k], nz, &z0, &fz)
            x1 = x0 + 1 if x0 + 1 < nx else nx - 1
            y1 = y0 + 1 if y0 + 1 < ny else ny - 1
            z1 = z0 + 1 if z0 + 1 < nz else nz - 1
            for c in range(nc):
                c00 = (1.0 - fx) * vol[z0, y0, x0, c] + fx * vol[z0, y0, x1, c]
                c01 = (1.0 - fx) * vol[z0, y1, x0, c] + fx * vol[z0, y1, x1, c]
                c10 = (1.0 - fx) * vol[z1, y0, x0, c] + fx * vol[z1, y0, x1, c]
                c11 = (1.0 - fx) * vol[z1, y1, x0, c] + fx * vol[z1, y1, x1, c]
                out[k, c] = ((1.0 - fz) * ((1.0 - fy) * c00 + fy * c01)
                             + fz * ((1.0 - fy) * c10 + fy * c11))
    return out_arr


def lncc(const float[:, ::1] a, const float[:, ::1] b, int radius, double eps):
    cdef Py_ssize_t h = a.shape[0], w = a.shape[1]
    cdef Py_ssize_t i, j, ii, jj, i0, i1, j0, j1
    cdef double sa, sb, saa, sbb, sab, n, va, vb, cov, ncc, total
    cdef double av, bv
    total = 0.0
    with nogil:
        for i in range(h):
            i0 = i - radius if i - radius > 0 else 0
            i1 = i + radius if i + radius < h - 1 else h - 1
            for j in range(w):
                j0 = j - radius if j - radius > 0 else 0
                j1 = j + radius if j + radius < w - 1 else w - 1
                sa = sb = saa = sbb = sab = 0.0
                for ii in range(i0, i1 + 1):
                    for jj in range(j0, j1 + 1):
                        av = a[ii, jj]
                        bv = b[ii, jj]
                        sa += av
                        sb += bv
                        saa += av * av
                        sbb += bv * bv
                        sab += av * bv
                n = <double> ((i1 - i0 + 1) * (j1 - j0 + 1))
                va = saa - sa * sa / n
                vb = sbb - sb * sb / n
                if va >= eps * n and vb >= eps * n:
                    cov = sab - sa * sb / n
                    ncc = cov / sqrt(va * vb)
                    if ncc > 1.0:
                        ncc = 1.0
                    elif ncc < -1.0:
                        ncc = -1.0
                    total += ncc
    return total / (h * w)


def lc2(const float[:, ::1] source, const float[:, ::1] grad, const float[:, ::1] target,
        int radius, double eps):
    cdef Py_ssize_t h = source.shape[0], w = source.shape[1]
    cdef Py_ssize_t i, j, ii, jj, i0, i1, j0, j1
    cdef double ss, sg, st, sss, sgg, stt, ssg, sst, sgt, n
    cdef double g00, g01, g02, g11, g12, g22, b0, b1, b2
    cdef double scale, det, lam
    cdef double a00, a01, a02, a11, a12, a22
    cdef double x0, x1, x2, rss, tvar, weight, local
    cdef double sv, gv, tv
    cdef double num = 0.0, den = 0.0
    with nogil:
        for i in range(h):
            i0 = i - radius if i - radius > 0 else 0
            i1 = i + radius if i + radius < h - 1 else h - 1
            for j in range(w):
                j0 = j - radius if j - radius > 0 else 0
                j1 = j + radius if j + radius < w - 1 else w - 1
                ss = sg = st = sss = sgg = stt = ssg = sst = sgt = 0.0
                for ii in range(i0, i1 + 1):
                    for jj in range(j0, j1 + 1):
                        sv = source[ii, jj]
                        gv = grad[ii, jj]
                        tv = target[ii, jj]
                        ss += sv
                        sg += gv
                        st += tv
                        sss += sv * sv
                        sgg += gv * gv
                        stt += tv * tv
                        ssg += sv * gv
                        sst += sv * tv
                        sgt += gv * tv
                n = <double> ((i1 - i0 + 1) * (j1 - j0 + 1))
                g00 = sss; g01 = ssg; g02 = ss
                g11 = sgg; g12 = sg; g22 = n
                b0 = sst; b1 = sgt; b2 = st
                scale = (g00 + g11 + g22) / 3.0
                det = (g00 * (g11 * g22 - g12 * g12)
                       - g01 * (g01 * g22 - g12 * g02)
                       + g02 * (g01 * g12 - g11 * g02))
                if det <= (DET_RTOL * scale) ** 3:
                    lam = REG_LAMBDA * scale
                    g00 += lam
                    g11 += lam
                    g22 += lam
                    det = (g00 * (g11 * g22 - g12 * g12)
                           - g01 * (g01 * g22 - g12 * g02)
                           + g02 * (g01 * g12 - g11 * g02))
                if det == 0.0:
                    det = 1.0
                a00 = g11 * g22 - g12 * g12
                a01 = g02 * g12 - g01 * g22
                a02 = g01 * g12 - g02 * g11
                a11 = g00 * g22 - g02 * g02
                a12 = g01 * g02 - g00 * g12
                a22 = g00 * g11 - g01 * g01
                x0 = (a00 * b0 + a01 * b1 + a02 * b2) / det
                x1 = (a01 * b0 + a11 * b1 + a12 * b2) / det
                x2 = (a02 * b0 + a12 * b1 + a22 * b2) / det
                rss = stt - 2.0 * (x0 * b0 + x1 * b1 + x2 * b2) \
                    + (x0 * (g00 * x0 + g01 * x1 + g02 * x2)
                       + x1 * (g01 * x0 + g11 * x1 + g12 * x2)
                       + x2 * (g02 * x0 + g12 * x1 + g22 * x2))
                if rss < 0.0:
                    rss = 0.0
                tvar = stt - st * st / n
                if tvar < 0.0:
                    tvar = 0.0
                weight = tvar / n
                if weight >= eps:
                    local = 1.0 - rss / (tvar if tvar > 0.0 else 1.0)
                    if local < 0.0:
                        local = 0.0
                    elif local > 1.0:
                        local = 1.0
                    num += weight * local
                den += weight
    return num, den
