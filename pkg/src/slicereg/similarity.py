"""Similarity metrics: LNCC, LC2, learned-feature dot products, and the
fiducial registration error.

LNCC and LC2 operate on same-size single-channel images; windows and patches
are clamped at the borders. LC2 scores how well each target patch is
explained by a least-squares fit of [source, |grad source|, 1], weighted by
the target patch variance. The learned-feature score is the mean dot product
between a moving 2D feature map and a trilinearly sampled feature volume
under a 3D linear transform.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .imgcore import DegenerateDataWarning, Image2D


@dataclass(frozen=True)
class MetricConfig:
    """Window radii (pixels) and the variance floor for degenerate windows."""

    lncc_radius: int = 4
    lc2_radius: int = 3
    variance_epsilon: float = 1e-8

    def __post_init__(self):
        if self.lncc_radius < 1 or self.lc2_radius < 1:
            raise ValueError("metric radii must be >= 1")
        if not (self.variance_epsilon > 0):
            raise ValueError("variance_epsilon must be positive")


def _as_plane(img) -> np.ndarray:
    if isinstance(img, Image2D):
        if img.channels != 1:
            raise ValueError("similarity metrics expect single-channel images")
        return img.data
    return np.asarray(img, dtype=np.float32)


def lncc(a, b, cfg: MetricConfig = MetricConfig()) -> float:
    """Mean windowed normalized cross-correlation in [-1, 1].

    Windows where either image's variance falls below cfg.variance_epsilon
    contribute zero.
    """
    pa, pb = _as_plane(a), _as_plane(b)
    if pa.shape != pb.shape:
        raise ValueError(f"lncc: image dims differ, {pa.shape} vs {pb.shape}")
    return _kernels.lncc(pa, pb, cfg.lncc_radius, cfg.variance_epsilon)


def gradient_magnitude(img) -> np.ndarray:
    """Central-difference gradient magnitude, one-sided at the borders."""
    data = _as_plane(img).astype(np.float64)
    gy, gx = np.gradient(data)
    return np.sqrt(gx * gx + gy * gy)


def lc2(source, target, cfg: MetricConfig = MetricConfig()) -> float:
    """Patchwise LC2 similarity in [0, 1] of target given source.

    A constant target has no explainable variance; the score is 0 and a
    DegenerateDataWarning is raised.
    """
    ps, pt = _as_plane(source), _as_plane(target)
    if ps.shape != pt.shape:
        raise ValueError(f"lc2: image dims differ, {ps.shape} vs {pt.shape}")
    grad = gradient_magnitude(ps)
    num, den = _kernels.lc2(ps, grad, pt, cfg.lc2_radius, cfg.variance_epsilon)
    if den <= 0.0:
        warnings.warn("constant target: LC2 undefined, returning 0",
                      DegenerateDataWarning, stacklevel=2)
        return 0.0
    return num / den


def disa_similarity(feat_moving, feat_fixed, transform) -> float:
    """Mean feature dot product under a moving-to-fixed 3D linear transform.

    feat_moving carries a (h, w, c) raster, feat_fixed a (nz, ny, nx, c)
    raster; transform is a 3x4 (or 4x4) matrix mapping moving physical
    coordinates (µm) into fixed physical coordinates. Positions landing
    outside the fixed raster sample its border (clamp-to-edge).
    """
    mov = np.asarray(feat_moving.data, dtype=np.float32)
    fix = np.asarray(feat_fixed.data, dtype=np.float32)
    if mov.shape[-1] != fix.shape[-1]:
        raise ValueError(f"feature channel mismatch: {mov.shape[-1]} vs {fix.shape[-1]}")
    t = np.asarray(transform, dtype=np.float64)
    if t.shape == (4, 4):
        t = t[:3, :]
    if t.shape != (3, 4):
        raise ValueError("transform must be 3x4 or 4x4")
    h, w, _ = mov.shape
    sx, sy = feat_moving.spacing
    us = np.arange(w, dtype=np.float64) * sx
    vs = np.arange(h, dtype=np.float64) * sy
    pts = np.empty((h * w, 3))
    pts[:, 0] = np.broadcast_to(us[None, :], (h, w)).ravel()
    pts[:, 1] = np.broadcast_to(vs[:, None], (h, w)).ravel()
    pts[:, 2] = 0.0
    mapped = pts @ t[:, :3].T + t[:, 3]
    fsx, fsy, fsz = feat_fixed.spacing
    sampled = _kernels.sample_trilinear_multi(
        fix, mapped[:, 0] / fsx, mapped[:, 1] / fsy, mapped[:, 2] / fsz)
    dots = np.einsum("nc,nc->n", mov.reshape(-1, mov.shape[-1]).astype(np.float64), sampled)
    return float(dots.mean())


def fre(points_a, points_b) -> float:
    """Mean Euclidean distance (µm) between corresponding 3D points."""
    pa = np.asarray(points_a, dtype=np.float64)
    pb = np.asarray(points_b, dtype=np.float64)
    if pa.ndim != 2 or pa.shape[1] != 3 or pa.shape != pb.shape:
        raise ValueError("fre expects two equally long lists of 3D points")
    if len(pa) == 0:
        raise ValueError("fre: empty point lists")
    return float(np.linalg.norm(pa - pb, axis=1).mean())


def read_fiducials(path) -> tuple[list[str], np.ndarray]:
    """Read 'id, x, y[, z]' lines (µm); '#' starts a comment."""
    ids: list[str] = []
    rows: list[list[float]] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) not in (3, 4):
                raise ValueError(f"{path}:{lineno}: expected 'id, x, y[, z]', got {raw!r}")
            if width is None:
                width = len(parts) - 1
            elif len(parts) - 1 != width:
                raise ValueError(f"{path}:{lineno}: inconsistent coordinate count")
            ids.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    if not rows:
        raise ValueError(f"{path}: no fiducials found")
    return ids, np.array(rows)


def write_fiducials(path, ids, points) -> None:
    points = np.asarray(points, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# id, coordinates in µm\n")
        for pid, row in zip(ids, points):
            fh.write(f"{pid}, " + ", ".join(repr(float(v)) for v in row) + "\n")
