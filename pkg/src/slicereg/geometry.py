"""Plane pose, cubic B-spline free-form deformation, and slice extraction.

The sampling plane lives in the volume's physical frame: plane coordinates
(u, v) map to volume x/y before the pose rotation, w is the out-of-plane
offset along z. The curved sampling surface is the plane displaced along w
by a B-spline field, which is equivalent to deforming the volume and slicing
it flat, but far cheaper per objective evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .imgcore import Image2D, Volume3D


@dataclass(frozen=True)
class PlanePose:
    """Sampling-plane pose: z-translation (µm) and x/y rotations (degrees)
    about the in-plane pivot ``center`` (µm)."""

    tz: float
    rx: float
    ry: float
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        for name in ("tz", "rx", "ry"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"PlanePose.{name} must be finite")
        if abs(self.rx) > 90.0 or abs(self.ry) > 90.0:
            raise ValueError("PlanePose rotations must stay within ±90° of the z-axis")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    def rotation(self) -> np.ndarray:
        """3x3 rotation, Rx applied first, then Ry."""
        ax = np.deg2rad(self.rx)
        ay = np.deg2rad(self.ry)
        cx, sx = np.cos(ax), np.sin(ax)
        cy, sy = np.cos(ay), np.sin(ay)
        rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
        ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        return ry @ rx


def plane_to_world(pose: PlanePose, pts) -> np.ndarray:
    """Map plane coordinates (u, v, w) µm to volume coordinates (x, y, z) µm."""
    pts = np.asarray(pts, dtype=np.float64)
    pivot = np.array([pose.center[0], pose.center[1], 0.0])
    shift = pivot + np.array([0.0, 0.0, pose.tz])
    return (pts - pivot) @ pose.rotation().T + shift


def world_to_plane(pose: PlanePose, pts) -> np.ndarray:
    """Inverse of plane_to_world (exact for |rx|, |ry| < 90)."""
    pts = np.asarray(pts, dtype=np.float64)
    pivot = np.array([pose.center[0], pose.center[1], 0.0])
    shift = pivot + np.array([0.0, 0.0, pose.tz])
    return (pts - shift) @ pose.rotation() + pivot


@lru_cache(maxsize=32)
def _clamped_knots(n_ctrl: int) -> np.ndarray:
    inner = np.linspace(0.0, 1.0, n_ctrl - 2)
    return np.concatenate([np.zeros(3), inner, np.ones(3)])


def bspline_basis(n_ctrl: int, t) -> np.ndarray:
    """Cubic B-spline basis on a clamped uniform knot vector.

    Returns (len(t), n_ctrl); rows sum to 1 and the end control points are
    interpolated at t = 0 and t = 1. t is clamped into [0, 1].
    """
    if n_ctrl < 4:
        raise ValueError("cubic B-spline needs at least 4 control points")
    t = np.clip(np.atleast_1d(np.asarray(t, dtype=np.float64)).ravel(), 0.0, 1.0)
    knots = _clamped_knots(n_ctrl)
    m = len(knots) - 1
    basis = np.zeros((len(t), m))
    for i in range(m):
        if knots[i] < knots[i + 1]:
            basis[:, i] = (t >= knots[i]) & (t < knots[i + 1])
    # close the final span so t = 1 is covered
    last = max(i for i in range(m) if knots[i] < knots[i + 1])
    basis[t == 1.0, :] = 0.0
    basis[t == 1.0, last] = 1.0
    for deg in range(1, 4):
        nxt = np.zeros((len(t), m - deg))
        for i in range(m - deg):
            left = knots[i + deg] - knots[i]
            right = knots[i + deg + 1] - knots[i + 1]
            term = 0.0
            if left > 0:
                term = (t - knots[i]) / left * basis[:, i]
            if right > 0:
                term = term + (knots[i + deg + 1] - t) / right * basis[:, i + 1]
            nxt[:, i] = term
        basis = nxt
    return basis


def greville_abscissae(n_ctrl: int) -> np.ndarray:
    """Normalized parameter positions where control values act like samples;
    linear control data at these positions reproduces a linear field."""
    knots = _clamped_knots(n_ctrl)
    return np.array([(knots[i + 1] + knots[i + 2] + knots[i + 3]) / 3.0
                     for i in range(n_ctrl)])


def _check_grid(values: np.ndarray, extent) -> tuple[np.ndarray, tuple]:
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < 4 or values.shape[1] < 4:
        raise ValueError("control grid must be at least 4x4")
    if not np.isfinite(values).all():
        raise ValueError("control values must be finite")
    values = values.copy()
    values.setflags(write=False)
    (u0, u1), (v0, v1) = extent
    extent = ((float(u0), float(u1)), (float(v0), float(v1)))
    if not (u1 >= u0 and v1 >= v0):
        raise ValueError(f"bad grid extent {extent}")
    return values, extent


@dataclass(frozen=True)
class OutOfPlaneGrid:
    """n_v x n_u control grid of scalar z-displacements (µm) spanning a
    plane-domain extent ((u0, u1), (v0, v1)) µm; one value per control-point
    pair, which moves jointly above and below the plane."""

    values: np.ndarray
    extent: tuple

    def __post_init__(self):
        values, extent = _check_grid(self.values, self.extent)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "extent", extent)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class InPlaneGrid:
    """n_v x n_u control grid of 2D displacement vectors (µm), values shaped
    (n_v, n_u, 2), spanning an image-domain extent."""

    values: np.ndarray
    extent: tuple

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or values.shape[2] != 2:
            raise ValueError("InPlaneGrid values must be (n_v, n_u, 2)")
        checked, extent = _check_grid(values[..., 0], self.extent)
        values = values.copy()
        values.setflags(write=False)
        if not np.isfinite(values).all():
            raise ValueError("control values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "extent", extent)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]


def grid_for_image(img: Image2D, n_u: int = 4, n_v: int = 4, values=None,
                   kind: str = "inplane"):
    """Control grid spanning an image's physical domain, outer points on the
    boundary. values defaults to zeros."""
    extent = ((0.0, (img.width - 1) * img.spacing[0]),
              (0.0, (img.height - 1) * img.spacing[1]))
    if kind == "inplane":
        if values is None:
            values = np.zeros((n_v, n_u, 2))
        return InPlaneGrid(values, extent)
    if values is None:
        values = np.zeros((n_v, n_u))
    return OutOfPlaneGrid(values, extent)


def _normalized(coord, lo, hi):
    span = hi - lo
    if span <= 0:
        return np.zeros_like(np.asarray(coord, dtype=np.float64))
    return np.clip((np.asarray(coord, dtype=np.float64) - lo) / span, 0.0, 1.0)


def bspline_eval(grid, u, v):
    """Evaluate the grid's displacement at normalized coordinates in [0, 1]².

    Scalar grids return a scalar field, in-plane grids an (..., 2) field.
    """
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    u, v = np.broadcast_arrays(u, v)
    shape = u.shape
    n_v, n_u = grid.shape
    bu = bspline_basis(n_u, u.ravel())
    bv = bspline_basis(n_v, v.ravel())
    if isinstance(grid, InPlaneGrid):
        out = np.einsum("ki,kj,ijc->kc", bv, bu, grid.values)
        return out.reshape(shape + (2,))
    out = np.einsum("ki,kj,ij->k", bv, bu, grid.values)
    return out.reshape(shape)


def displacement_field(grid, us, vs):
    """Separable evaluation over a raster: us (W,) and vs (H,) physical µm.

    Returns (H, W) for scalar grids, (H, W, 2) for in-plane grids.
    """
    (u0, u1), (v0, v1) = grid.extent
    bu = bspline_basis(grid.shape[1], _normalized(us, u0, u1))
    bv = bspline_basis(grid.shape[0], _normalized(vs, v0, v1))
    if isinstance(grid, InPlaneGrid):
        return np.stack([bv @ grid.values[..., c] @ bu.T for c in range(2)], axis=-1)
    return bv @ grid.values @ bu.T


def extract_slice(vol: Volume3D, pose: PlanePose, surface, out_dims,
                  out_spacing) -> Image2D:
    """Sample the (possibly curved) plane through the volume as a 2D image.

    out_dims is (width, height) in pixels, out_spacing (sx, sy) µm. surface
    is an OutOfPlaneGrid or None for a flat plane. Samples outside the
    volume clamp to the border.
    """
    width, height = int(out_dims[0]), int(out_dims[1])
    sx, sy = float(out_spacing[0]), float(out_spacing[1])
    if width < 1 or height < 1 or sx <= 0 or sy <= 0:
        raise ValueError("extract_slice: out_dims must be >= 1, spacing > 0")
    us = np.arange(width, dtype=np.float64) * sx
    vs = np.arange(height, dtype=np.float64) * sy
    if surface is not None:
        w = displacement_field(surface, us, vs)
    else:
        w = np.zeros((height, width))
    pts = np.empty((height, width, 3))
    pts[..., 0] = us[None, :]
    pts[..., 1] = vs[:, None]
    pts[..., 2] = w
    world = plane_to_world(pose, pts.reshape(-1, 3))
    svx, svy, svz = vol.spacing
    samples = _kernels.sample_trilinear(
        vol.data, world[:, 0] / svx, world[:, 1] / svy, world[:, 2] / svz)
    return Image2D(samples.reshape(height, width), (sx, sy))


def project_points(pts2d, pose: PlanePose, surface=None, inplane=None) -> np.ndarray:
    """Map 2D plane-frame points (µm) into 3D volume coordinates (µm).

    Applies the in-plane displacement (if any), looks up the out-of-plane
    surface at the displaced position, and maps through the plane pose.
    This is the forward map a histology point takes into the volume.
    """
    pts = np.asarray(pts2d, dtype=np.float64).reshape(-1, 2).copy()
    if inplane is not None:
        (u0, u1), (v0, v1) = inplane.extent
        disp = bspline_eval(inplane, _normalized(pts[:, 0], u0, u1),
                            _normalized(pts[:, 1], v0, v1))
        pts = pts + disp
    if surface is not None:
        (u0, u1), (v0, v1) = surface.extent
        w = bspline_eval(surface, _normalized(pts[:, 0], u0, u1),
                         _normalized(pts[:, 1], v0, v1))
    else:
        w = np.zeros(len(pts))
    return plane_to_world(pose, np.column_stack([pts, w]))


def plane_z_at(pose: PlanePose, x, y) -> np.ndarray:
    """z-coordinate of the (flat) pose plane above volume position (x, y)."""
    normal = pose.rotation() @ np.array([0.0, 0.0, 1.0])
    anchor = np.array([pose.center[0], pose.center[1], pose.tz])
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return anchor[2] + (normal[0] * (anchor[0] - x) + normal[1] * (anchor[1] - y)) / normal[2]


def warp_2d(img: Image2D, grid: InPlaneGrid) -> Image2D:
    """Backward-warp an image by the grid's displacement field.

    output(p) = img(p + d(p)); the zero grid reproduces the input exactly.
    """
    if img.channels != 1:
        raise ValueError("warp_2d expects a single-channel image")
    (u0, u1), (v0, v1) = grid.extent
    ext = img.extent
    tol = 1e-9 * max(1.0, ext[0], ext[1])
    if u0 > tol or v0 > tol or u1 < ext[0] - tol or v1 < ext[1] - tol:
        raise ValueError("warp_2d: grid extent does not cover the image domain")
    us = np.arange(img.width, dtype=np.float64) * img.spacing[0]
    vs = np.arange(img.height, dtype=np.float64) * img.spacing[1]
    disp = displacement_field(grid, us, vs)
    xs = (us[None, :] + disp[..., 0]) / img.spacing[0]
    ys = (vs[:, None] + disp[..., 1]) / img.spacing[1]
    out = _kernels.sample_bilinear(img.data, xs.ravel(), ys.ravel())
    return Image2D(out.reshape(img.height, img.width), img.spacing)
