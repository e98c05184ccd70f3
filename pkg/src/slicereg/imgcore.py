"""Image and volume containers, preprocessing and resampling.

Conventions used throughout the package:

* intensities are float32 internally, whatever the file dtype was;
* sample index ``i`` sits at physical coordinate ``i * spacing`` (µm), so a
  raster spans ``[0, (n - 1) * spacing]`` per axis;
* interpolation outside a raster clamps to the nearest border sample;
* containers are immutable after construction and safe to share across
  threads.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels


class DegenerateDataWarning(UserWarning):
    """Raised (as a warning) when an operation hits a zero-range input."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Image2D:
    """2D raster with physical spacing.

    data is (height, width) for single-channel images or (height, width, 3)
    for RGB; x is the fastest-varying axis, matching the container format.
    spacing is (sx, sy) in µm per pixel.
    """

    data: np.ndarray
    spacing: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "data", _freeze(self.data))
        object.__setattr__(self, "spacing", (float(self.spacing[0]), float(self.spacing[1])))
        if self.data.ndim == 2:
            pass
        elif self.data.ndim == 3 and self.data.shape[2] == 3:
            pass
        else:
            raise ValueError(f"Image2D data must be (h, w) or (h, w, 3), got {self.data.shape}")
        if self.width < 1 or self.height < 1:
            raise ValueError("Image2D dims must be >= 1")
        if not all(s > 0 for s in self.spacing):
            raise ValueError(f"Image2D spacing must be positive, got {self.spacing}")
        if not np.isfinite(self.data).all():
            raise ValueError("Image2D contains non-finite samples")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]

    @property
    def extent(self) -> tuple[float, float]:
        """Physical span (µm) per axis, first to last sample center."""
        return ((self.width - 1) * self.spacing[0], (self.height - 1) * self.spacing[1])


@dataclass(frozen=True)
class Volume3D:
    """3D raster, data shaped (nz, ny, nx), spacing (sx, sy, sz) µm/voxel."""

    data: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "data", _freeze(self.data))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        if self.data.ndim != 3:
            raise ValueError(f"Volume3D data must be (nz, ny, nx), got {self.data.shape}")
        if min(self.data.shape) < 1:
            raise ValueError("Volume3D dims must be >= 1")
        if len(self.spacing) != 3 or not all(s > 0 for s in self.spacing):
            raise ValueError(f"Volume3D spacing must be 3 positive values, got {self.spacing}")
        if not np.isfinite(self.data).all():
            raise ValueError("Volume3D contains non-finite samples")

    @property
    def dims(self) -> tuple[int, int, int]:
        """(nx, ny, nz) voxel counts."""
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def extent(self) -> tuple[float, float, float]:
        return tuple((d - 1) * s for d, s in zip(self.dims, self.spacing))


def to_grayscale(img: Image2D) -> Image2D:
    """Average the three channels of an RGB image into one."""
    if img.channels != 3:
        raise ValueError("to_grayscale expects a 3-channel image")
    return Image2D(img.data.mean(axis=2, dtype=np.float64), img.spacing)


def percentile_normalize(obj, lo_pct: float = 0.01, hi_pct: float = 0.99):
    """Map the [lo_pct, hi_pct] percentile range to [0, 1], clamping outside.

    Percentiles use the linear-interpolation definition (rank = pct*(n-1)).
    A constant input yields all zeros and a DegenerateDataWarning.
    """
    if not (0.0 <= lo_pct < hi_pct <= 1.0):
        raise ValueError(f"percentile bounds must satisfy 0 <= lo < hi <= 1, got {lo_pct}, {hi_pct}")
    data = obj.data.astype(np.float64)
    p_lo, p_hi = np.percentile(data, [lo_pct * 100.0, hi_pct * 100.0])
    if p_hi == p_lo:
        warnings.warn("constant input: percentile range is empty, returning zeros",
                      DegenerateDataWarning, stacklevel=2)
        out = np.zeros_like(data)
    else:
        out = np.clip((data - p_lo) / (p_hi - p_lo), 0.0, 1.0)
    return type(obj)(out, obj.spacing)


def standardize(obj):
    """Shift/scale samples to zero mean and unit population std."""
    data = obj.data.astype(np.float64)
    mean = data.mean()
    std = data.std()
    if std == 0.0:
        raise ValueError("standardize: input has zero variance")
    return type(obj)((data - mean) / std, obj.spacing)


def _resample_axes(in_dims, in_spacing, target_spacing):
    out_dims, coords = [], []
    for n, s_in, s_out in zip(in_dims, in_spacing, target_spacing):
        if s_out <= 0:
            raise ValueError(f"target spacing must be positive, got {s_out}")
        m = max(1, int(np.floor(n * s_in / s_out + 0.5)))
        out_dims.append(m)
        coords.append(np.arange(m, dtype=np.float64) * (s_out / s_in))
    return out_dims, coords


def resample(obj, target_spacing):
    """Resample to a new spacing (scalar or per-axis) via bi/trilinear interpolation.

    Output dims are round(in_dim * in_spacing / target_spacing), at least 1;
    sample centers are mapped into input physical coordinates, clamp-to-edge.
    """
    ndim = 2 if isinstance(obj, Image2D) else 3
    if np.isscalar(target_spacing):
        target_spacing = (float(target_spacing),) * ndim
    target_spacing = tuple(float(s) for s in target_spacing)
    if isinstance(obj, Image2D):
        (nx_o, ny_o), (xs, ys) = _resample_axes(
            (obj.width, obj.height), obj.spacing, target_spacing)
        gx, gy = np.meshgrid(xs, ys)
        if obj.channels == 1:
            out = _kernels.sample_bilinear(obj.data, gx.ravel(), gy.ravel())
            out = out.reshape(ny_o, nx_o)
        else:
            out = np.stack(
                [_kernels.sample_bilinear(np.ascontiguousarray(obj.data[:, :, c]),
                                          gx.ravel(), gy.ravel()).reshape(ny_o, nx_o)
                 for c in range(3)], axis=2)
        return Image2D(out, target_spacing)
    (nx_o, ny_o, nz_o), (xs, ys, zs) = _resample_axes(
        obj.dims, obj.spacing, target_spacing)
    gz, gy, gx = np.meshgrid(zs, ys, xs, indexing="ij")
    out = _kernels.sample_trilinear(obj.data, gx.ravel(), gy.ravel(), gz.ravel())
    return Volume3D(out.reshape(nz_o, ny_o, nx_o), target_spacing)


def crop_to_foreground(obj, threshold: float):
    """Crop to the bounding box of samples >= threshold of the min/max range.

    Returns (cropped, offset) where offset is the physical position (µm) of
    the crop origin in the input frame: (ox, oy) for images, (ox, oy, oz)
    for volumes.
    """
    if not (0.0 <= threshold <= 1.0):
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    data = obj.data
    if isinstance(obj, Image2D) and obj.channels == 3:
        scalar = data.max(axis=2)
    else:
        scalar = data
    vmin, vmax = float(scalar.min()), float(scalar.max())
    if vmax <= vmin:
        raise ValueError("crop_to_foreground: constant input, no sample above threshold")
    thr = vmin + threshold * (vmax - vmin)
    mask = scalar >= thr
    if not mask.any():
        raise ValueError("crop_to_foreground: no sample reaches the threshold")
    idx = np.nonzero(mask)
    lo = [int(a.min()) for a in idx]
    hi = [int(a.max()) + 1 for a in idx]
    if isinstance(obj, Image2D):
        cropped = Image2D(data[lo[0]:hi[0], lo[1]:hi[1]], obj.spacing)
        offset = (lo[1] * obj.spacing[0], lo[0] * obj.spacing[1])
    else:
        cropped = Volume3D(data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]], obj.spacing)
        offset = (lo[2] * obj.spacing[0], lo[1] * obj.spacing[1], lo[0] * obj.spacing[2])
    return cropped, offset
