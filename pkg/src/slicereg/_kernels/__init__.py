"""Hot numerical kernels with backend selection.

The compiled Cython extension (_core) is preferred; the vectorized NumPy
module (_fallback) is used when the extension is missing or when the
environment variable SLICEREG_FORCE_NUMPY is set to a non-empty value other
than "0". Both backends implement the same contracts and agree to floating
point reassociation error; benchmarks/bench_kernels.py compares their speed.
"""
from __future__ import annotations

import os

import numpy as np

from . import _fallback

if os.environ.get("SLICEREG_FORCE_NUMPY", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _fallback

BACKEND: str = _impl.BACKEND


def _f32(arr) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=np.float32)


def _f64(arr) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=np.float64)


def sample_bilinear(img, xs, ys) -> np.ndarray:
    """Clamp-to-edge bilinear samples of a 2D raster at pixel coordinates."""
    return np.asarray(_impl.sample_bilinear(_f32(img), _f64(xs), _f64(ys)))


def sample_trilinear(vol, xs, ys, zs) -> np.ndarray:
    """Clamp-to-edge trilinear samples of a 3D raster at voxel coordinates."""
    return np.asarray(_impl.sample_trilinear(_f32(vol), _f64(xs), _f64(ys), _f64(zs)))


def sample_trilinear_multi(vol, xs, ys, zs) -> np.ndarray:
    """Trilinear samples of a (nz, ny, nx, c) raster; returns (n, c)."""
    return np.asarray(_impl.sample_trilinear_multi(_f32(vol), _f64(xs), _f64(ys), _f64(zs)))


def lncc(a, b, radius: int, eps: float) -> float:
    """Mean windowed normalized cross-correlation (degenerate windows -> 0)."""
    a = _f32(a)
    b = _f32(b)
    if a.shape != b.shape:
        raise ValueError(f"lncc: shape mismatch {a.shape} vs {b.shape}")
    return float(_impl.lncc(a, b, int(radius), float(eps)))


def lc2(source, grad, target, radius: int, eps: float) -> tuple[float, float]:
    """Weighted LC2 accumulation; returns (score_sum, weight_sum)."""
    source = _f32(source)
    grad = _f32(grad)
    target = _f32(target)
    if not (source.shape == grad.shape == target.shape):
        raise ValueError("lc2: shape mismatch")
    num, den = _impl.lc2(source, grad, target, int(radius), float(eps))
    return float(num), float(den)
