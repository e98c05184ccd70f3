"""LC2 similarity, reimplemented for label generation.

Same definition as the registration toolkit's metric (patchwise least
squares of target against [source, |grad source|, 1], variance weighted,
windows clamped at borders) but built on scipy box filters instead of that
package's kernels; tests/data holds fixtures generated by the primary to
pin agreement within 1e-5.
"""
from __future__ import annotations

import numpy as np
from scipy.ndimage import uniform_filter

LC2_RADIUS = 3
VARIANCE_EPS = 1e-8


def _box_sums(arr, radius):
    """Sum over the window clamped to the image (zero-padded box filter)."""
    size = 2 * radius + 1
    return uniform_filter(arr, size=size, mode="constant", cval=0.0) * size * size


def gradient_magnitude(img):
    gy, gx = np.gradient(img.astype(np.float64))
    return np.sqrt(gx * gx + gy * gy)


def lc2(source, target, radius: int = LC2_RADIUS, eps: float = VARIANCE_EPS) -> float:
    """LC2 score in [0, 1] of target given source (both 2D arrays)."""
    s = np.asarray(source, dtype=np.float32).astype(np.float64)
    t = np.asarray(target, dtype=np.float32).astype(np.float64)
    if s.shape != t.shape:
        raise ValueError(f"lc2: shape mismatch {s.shape} vs {t.shape}")
    g = gradient_magnitude(s)
    h, w = s.shape
    ones = np.ones_like(s)
    n = _box_sums(ones, radius)
    ss, sg, st = _box_sums(s, radius), _box_sums(g, radius), _box_sums(t, radius)
    sss, sgg, stt = _box_sums(s * s, radius), _box_sums(g * g, radius), _box_sums(t * t, radius)
    ssg, sst, sgt = _box_sums(s * g, radius), _box_sums(s * t, radius), _box_sums(g * t, radius)

    gram = np.empty((h, w, 3, 3))
    gram[..., 0, 0] = sss
    gram[..., 0, 1] = gram[..., 1, 0] = ssg
    gram[..., 0, 2] = gram[..., 2, 0] = ss
    gram[..., 1, 1] = sgg
    gram[..., 1, 2] = gram[..., 2, 1] = sg
    gram[..., 2, 2] = n
    rhs = np.stack([sst, sgt, st], axis=-1)

    coef = np.linalg.solve(_regularized(gram), rhs[..., None])[..., 0]
    rss = stt - 2.0 * (coef * rhs).sum(-1) \
        + np.einsum("...i,...ij,...j->...", coef, gram, coef)
    rss = np.maximum(rss, 0.0)
    tvar_sum = np.maximum(stt - st * st / n, 0.0)
    weight = tvar_sum / n
    valid = weight >= eps
    ratio = rss / np.where(tvar_sum > 0, tvar_sum, 1.0)
    local = np.where(valid, np.clip(1.0 - ratio, 0.0, 1.0), 0.0)
    den = float(weight.sum())
    if den <= 0.0:
        return 0.0
    return float((weight * local).sum() / den)


def _regularized(gram):
    """Tikhonov-regularize near-singular 3x3 Grams (same branch rule as the
    primary: det <= (1e-12 * trace/3)^3 gets lambda = 1e-8 * trace/3)."""
    tr = (gram[..., 0, 0] + gram[..., 1, 1] + gram[..., 2, 2]) / 3.0
    det = np.linalg.det(gram)
    bad = det <= (1e-12 * tr) ** 3
    if bad.any():
        lam = np.where(bad, 1e-8 * tr, 0.0)
        gram = gram + lam[..., None, None] * np.eye(3)
    return gram
