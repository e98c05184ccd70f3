"""Synthetic benchmark generation: textured phantoms, ground-truth curved
cuts with in-plane deformation, modality simulation, and fiducials.

Everything is seeded and bit-reproducible. The phantom is a sum of smoothed
ellipsoidal blobs at two spatial scales: macro structures that drive the
initialization and a fine granular texture that disambiguates nearby planes,
so the true cut is a genuine similarity optimum.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import (InPlaneGrid, OutOfPlaneGrid, PlanePose, extract_slice,
                       greville_abscissae, project_points, warp_2d)
from .imgcore import Image2D, Volume3D


def _remove_affine_part(values: np.ndarray) -> np.ndarray:
    """Project the best-fit plane out of surface control values.

    The pose/surface split is otherwise ambiguous: any mean tilt in the
    surface could equally be represented by rotating the pose. Canonical
    ground truth keeps the affine part in the pose and pure bending in the
    surface, so "true rotations" are well defined.
    """
    n_v, n_u = values.shape
    gu = greville_abscissae(n_u)
    gv = greville_abscissae(n_v)
    uu, vv = np.meshgrid(gu, gv)
    basis = np.column_stack([uu.ravel(), vv.ravel(), np.ones(uu.size)])
    coef, *_ = np.linalg.lstsq(basis, values.ravel(), rcond=None)
    return values - (basis @ coef).reshape(n_v, n_u)


@dataclass(frozen=True)
class ModalityParams:
    """Monotone nonlinear intensity remap plus additive Gaussian noise."""

    gamma: float = 0.7
    invert: bool = True
    noise_sigma: float = 0.02

    def __post_init__(self):
        if not (self.gamma > 0):
            raise ValueError("gamma must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class GroundTruth:
    pose: PlanePose
    surface: OutOfPlaneGrid
    inplane: InPlaneGrid
    fiducial_ids: list
    fiducials_2d: np.ndarray          # (n, 2) µm, histology frame
    fiducials_3d: np.ndarray | None   # (n, 3) µm, volume frame; set by make_pair
    modality: ModalityParams
    seed: int
    slice_dims: tuple[int, int]
    slice_spacing: tuple[float, float]


def _add_blob(acc, spacing, center, radii, amp):
    nz, ny, nx = acc.shape
    sx, sy, sz = spacing
    los, his, axes = [], [], []
    for n, s, c, r in ((nz, sz, center[2], radii[2]),
                       (ny, sy, center[1], radii[1]),
                       (nx, sx, center[0], radii[0])):
        lo = max(0, int(np.floor((c - 3.5 * r) / s)))
        hi = min(n, int(np.ceil((c + 3.5 * r) / s)) + 1)
        if hi <= lo:
            return
        los.append(lo)
        his.append(hi)
        axes.append(((np.arange(lo, hi) * s) - c) / r)
    d2 = (axes[0][:, None, None] ** 2 + axes[1][None, :, None] ** 2
          + axes[2][None, None, :] ** 2)
    acc[los[0]:his[0], los[1]:his[1], los[2]:his[2]] += amp * np.exp(-0.5 * d2)


def make_volume(seed: int, dims=(128, 128, 128), spacing=(10.0, 10.0, 10.0),
                n_macro: int = 24, n_micro: int = 4000) -> Volume3D:
    """Deterministic two-scale blob phantom normalized to [0, 1]."""
    nx, ny, nz = (int(d) for d in dims)
    if min(nx, ny, nz) < 32:
        raise ValueError("phantom dims must be >= 32 per axis")
    rng = np.random.default_rng(seed)
    acc = np.zeros((nz, ny, nx))
    ext = np.array([(nx - 1) * spacing[0], (ny - 1) * spacing[1], (nz - 1) * spacing[2]])
    min_ext = ext.min()
    mean_sp = float(np.mean(spacing))
    for _ in range(n_macro):
        center = rng.uniform(0.0, 1.0, 3) * ext
        base_r = rng.uniform(0.10, 0.22) * min_ext
        radii = base_r * rng.uniform(0.7, 1.5, 3)
        amp = rng.uniform(0.35, 1.0) * rng.choice([-1.0, 1.0])
        _add_blob(acc, spacing, center, radii, amp)
    for _ in range(n_micro):
        center = rng.uniform(0.0, 1.0, 3) * ext
        radii = np.full(3, rng.uniform(1.2, 3.0) * mean_sp)
        amp = rng.uniform(0.08, 0.2) * rng.choice([-1.0, 1.0])
        _add_blob(acc, spacing, center, radii, amp)
    vmin, vmax = acc.min(), acc.max()
    if vmax > vmin:
        acc = (acc - vmin) / (vmax - vmin)
    else:
        acc = np.zeros_like(acc)
    return Volume3D(acc, spacing)


def make_ground_truth(vol: Volume3D, seed: int, slice_dims=None, slice_spacing=None,
                      max_rot: float = 5.0, tz_frac=(0.08, 0.18),
                      oop_amplitude: float = 30.0, inplane_amplitude: float = 20.0,
                      n_fiducials: int = 20, grid_size: int = 4,
                      modality: ModalityParams = ModalityParams()) -> GroundTruth:
    """Draw a random plausible cut: small rotations, a B-spline surface and
    in-plane warp, and fiducials in the slice interior."""
    rng = np.random.default_rng([seed, 0xC0FFEE])
    if slice_spacing is None:
        slice_spacing = (vol.spacing[0], vol.spacing[1])
    if slice_dims is None:
        slice_dims = (int(vol.dims[0] * 0.8), int(vol.dims[1] * 0.8))
    width, height = slice_dims
    ext_u = (width - 1) * slice_spacing[0]
    ext_v = (height - 1) * slice_spacing[1]
    extent = ((0.0, ext_u), (0.0, ext_v))
    center = (ext_u / 2.0, ext_v / 2.0)

    tz = rng.uniform(*tz_frac) * vol.extent[2]
    rx = rng.uniform(-max_rot, max_rot)
    ry = rng.uniform(-max_rot, max_rot)
    pose = PlanePose(tz, rx, ry, center)
    control = rng.uniform(-oop_amplitude, oop_amplitude, (grid_size, grid_size))
    surface = OutOfPlaneGrid(_remove_affine_part(control), extent)
    inplane = InPlaneGrid(rng.uniform(-inplane_amplitude, inplane_amplitude,
                                      (grid_size, grid_size, 2)), extent)
    fid_2d = np.column_stack([rng.uniform(0.15 * ext_u, 0.85 * ext_u, n_fiducials),
                              rng.uniform(0.15 * ext_v, 0.85 * ext_v, n_fiducials)])
    ids = [f"F{i:02d}" for i in range(n_fiducials)]
    return GroundTruth(pose, surface, inplane, ids, fid_2d, None, modality,
                       seed, (width, height), tuple(slice_spacing))


def apply_modality(img: Image2D, modality: ModalityParams, seed) -> Image2D:
    """Monotone gamma remap (with optional contrast inversion) plus seeded
    additive Gaussian noise."""
    data = np.clip(img.data.astype(np.float64), 0.0, 1.0)
    if modality.invert:
        data = 1.0 - data
    data = data ** modality.gamma
    if modality.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        data = data + rng.normal(0.0, modality.noise_sigma, data.shape)
    return Image2D(data, img.spacing)


def make_pair(vol: Volume3D, gt: GroundTruth):
    """Produce the synthetic histology image for a ground truth and fill in
    the 3D fiducials by pushing the 2D ones through the same maps."""
    width, height = gt.slice_dims
    ext_u = (width - 1) * gt.slice_spacing[0]
    ext_v = (height - 1) * gt.slice_spacing[1]
    outside = [pid for pid, (x, y) in zip(gt.fiducial_ids, gt.fiducials_2d)
               if not (0.0 <= x <= ext_u and 0.0 <= y <= ext_v)]
    if outside:
        raise ValueError(f"fiducials outside the slice domain: {', '.join(outside)}")

    true_slice = extract_slice(vol, gt.pose, gt.surface, gt.slice_dims, gt.slice_spacing)
    warped = warp_2d(true_slice, gt.inplane)
    histology = apply_modality(warped, gt.modality, [gt.seed, 0x5EED])
    fid_3d = project_points(gt.fiducials_2d, gt.pose, gt.surface, gt.inplane)
    return histology, replace(gt, fiducials_3d=fid_3d)


def ground_truth_sections(gt: GroundTruth):
    """Ground-truth report in the result-report layout (offsets are zero:
    the truth lives in the original frames)."""
    from .report import grid_entries, pose_entries
    meta = [
        ("kind", "ground-truth"),
        ("seed", gt.seed),
        ("volume_crop_offset_um", (0.0, 0.0, 0.0)),
        ("histology_crop_offset_um", (0.0, 0.0)),
        ("slice_dims_px", gt.slice_dims),
        ("slice_spacing_um", gt.slice_spacing),
    ]
    modality = [
        ("gamma", gt.modality.gamma),
        ("invert", gt.modality.invert),
        ("noise_sigma", gt.modality.noise_sigma),
    ]
    return [
        ("meta", meta),
        ("pose", pose_entries(gt.pose)),
        ("out_of_plane_grid_um", grid_entries(gt.surface)),
        ("in_plane_grid_um", grid_entries(gt.inplane)),
        ("modality", modality),
    ]
