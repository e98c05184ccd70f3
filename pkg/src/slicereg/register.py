"""The registration pipeline: initialization, plane-pose refinement, and
out-of-plane surface optimization, each scored by a nested 2D-2D deformable
registration.

Stage structure and defaults follow the histology/µCT protocol: the pose
search covers ±400 µm translation and ±10° rotations around the start, the
pose optimizer stops at a 1e-4 parameter change, and the surface search runs
5 restarts of 80 evaluations over a 4x4 control grid. The outer objective
re-runs the inner in-plane registration (warm-started, capped) on every
evaluation, so a stage's score is always the similarity *after* in-plane
alignment.
"""
from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .disa import ConvNet, FeatureMap, FeatureVolume, feature_volume, forward
from .geometry import (InPlaneGrid, OutOfPlaneGrid, PlanePose, extract_slice,
                       warp_2d)
from .imgcore import (DegenerateDataWarning, Image2D, Volume3D, crop_to_foreground,
                      percentile_normalize, resample, standardize, to_grayscale)
from .optim import OptimProblem, minimize_bfgs, minimize_df
from .similarity import MetricConfig, lc2, lncc


class ConfigError(ValueError):
    """Bad configuration detected before any computation."""


INIT_MODES = ("disa", "intensity", "manual")


@dataclass
class RegisterConfig:
    init_mode: str = "intensity"
    working_spacing: float = 10.4      # µm, resample target for both inputs
    n_depths: int = 10                 # DISA init trials
    rot_bound: float = 10.0            # degrees, per-stage search range
    trans_bound: float = 400.0         # µm
    depth_range: tuple | None = None   # (z_lo, z_hi) µm in the working volume
    pose_stop: float = 1e-4            # pose optimizer parameter-change stop
    oop_restarts: int = 5
    oop_iterations: int = 80           # objective evaluations per restart
    oop_bound: float = 200.0           # µm, out-of-plane control displacement
    inplane_bound: float = 150.0       # µm, in-plane control displacement
    grid_size: int = 4
    seed: int = 0
    foreground_threshold: float = 0.05
    normalize_lo: float = 0.01
    normalize_hi: float = 0.99
    inner_evals_init: int = 60         # inner budget during the depth scan
    inner_evals_refine: int = 40       # inner budget inside outer objectives
    inner_evals_full: int = 200        # inner budget for the final registration
    refine_max_evals: int = 150
    bfgs_max_evals: int = 250          # per DISA trial and stage
    manual_pose: tuple | None = None   # (tz µm, rx°, ry°), original volume frame
    metric: MetricConfig = field(default_factory=MetricConfig)
    threads: int = 1

    def __post_init__(self):
        if self.init_mode not in INIT_MODES:
            raise ConfigError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")
        for name in ("working_spacing", "rot_bound", "trans_bound", "pose_stop",
                     "oop_bound", "inplane_bound"):
            if not (getattr(self, name) > 0):
                raise ConfigError(f"{name} must be positive")
        if self.oop_restarts < 1:
            raise ConfigError("oop_restarts must be >= 1")
        if self.grid_size < 4:
            raise ConfigError("grid_size must be >= 4 (cubic B-spline support)")
        if self.n_depths < 1:
            raise ConfigError("n_depths must be >= 1")
        if self.depth_range is not None:
            lo, hi = self.depth_range
            if not (lo < hi):
                raise ConfigError("depth_range must satisfy z_lo < z_hi")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


@dataclass
class StageStats:
    name: str
    evaluations: int
    seconds: float


@dataclass
class Preprocessed:
    """Working-resolution inputs plus the bookkeeping to map back."""

    volume: Volume3D
    histology: Image2D
    volume_std: Volume3D
    histology_std: Image2D
    volume_offset: tuple[float, float, float]
    histology_offset: tuple[float, float]


@dataclass
class RegistrationResult:
    init_provenance: str
    init_pose: PlanePose
    init_score: float
    init_info: list
    pose: PlanePose
    surface: OutOfPlaneGrid
    inplane: InPlaneGrid
    scores: dict
    stages: list
    meta: dict
    config: RegisterConfig
    registered: Image2D
    extracted: Image2D
    histology_working: Image2D


def preprocess(vol_raw: Volume3D, hist_raw: Image2D, cfg: RegisterConfig) -> Preprocessed:
    """Grayscale, crop to foreground, percentile-normalize (after the crop,
    so statistics come from the specimen), resample to the working spacing,
    and keep standardized copies for the feature network."""
    hist = to_grayscale(hist_raw) if hist_raw.channels == 3 else hist_raw
    hist, hist_off = crop_to_foreground(hist, cfg.foreground_threshold)
    hist = percentile_normalize(hist, cfg.normalize_lo, cfg.normalize_hi)
    hist = resample(hist, cfg.working_spacing)

    vol, vol_off = crop_to_foreground(vol_raw, cfg.foreground_threshold)
    vol = percentile_normalize(vol, cfg.normalize_lo, cfg.normalize_hi)
    vol = resample(vol, cfg.working_spacing)

    return Preprocessed(vol, hist, standardize(vol), standardize(hist),
                        vol_off, hist_off)


def slice_center(img: Image2D) -> tuple[float, float]:
    return ((img.width - 1) * img.spacing[0] / 2.0,
            (img.height - 1) * img.spacing[1] / 2.0)


def default_depth_range(vol: Volume3D, fraction: float = 0.2) -> tuple[float, float]:
    """Top slab of the (cropped) volume: the block face the cut came from."""
    z_hi = max(vol.extent[2] * fraction, vol.spacing[2])
    return (0.0, z_hi)


def _grid_from_params(x, n, extent):
    return InPlaneGrid(np.asarray(x, dtype=np.float64).reshape(n, n, 2), extent)


def inner_register_2d(ct_slice: Image2D, histology: Image2D, cfg: RegisterConfig,
                      init_grid: InPlaneGrid | None = None,
                      max_evals: int | None = None):
    """In-plane B-spline registration of the CT slice onto the histology.

    Maximizes LNCC(warp(ct_slice, grid), histology) over the control
    displacements (bounded by cfg.inplane_bound). Returns (grid, score);
    the score is never below the zero-grid score. Structureless inputs
    short-circuit to (zero grid, 0.0) with a DegenerateDataWarning.
    """
    if (ct_slice.width, ct_slice.height) != (histology.width, histology.height):
        raise ValueError("inner_register_2d: image dims differ")
    n = cfg.grid_size
    extent = ((0.0, (histology.width - 1) * histology.spacing[0]),
              (0.0, (histology.height - 1) * histology.spacing[1]))
    eps = cfg.metric.variance_epsilon
    if float(np.var(ct_slice.data)) < eps or float(np.var(histology.data)) < eps:
        warnings.warn("structureless image: inner registration degenerate",
                      DegenerateDataWarning, stacklevel=2)
        return _grid_from_params(np.zeros(n * n * 2), n, extent), 0.0

    def objective(x):
        grid = _grid_from_params(x, n, extent)
        return -lncc(warp_2d(ct_slice, grid), histology, cfg.metric)

    x0 = np.zeros(n * n * 2)
    if init_grid is not None:
        x_init = np.asarray(init_grid.values, dtype=np.float64).ravel()
        x_init = np.clip(x_init, -cfg.inplane_bound, cfg.inplane_bound)
        # keep the zero-grid guarantee even when warm-started
        if np.any(x_init != 0.0) and objective(x_init) < objective(x0):
            x0 = x_init
    bounds = np.tile([-cfg.inplane_bound, cfg.inplane_bound], (n * n * 2, 1))
    budget = max_evals if max_evals is not None else cfg.inner_evals_full
    res = minimize_df(OptimProblem(objective, bounds, x0, stop=cfg.pose_stop,
                                   max_evaluations=budget))
    return _grid_from_params(res.x, n, extent), -res.f


def _pose_objective(vol, histology, cfg, surface=None):
    """Closure evaluating s(histology, slice(pose[, surface])) with a
    warm-started inner registration; tracks the best and first scores."""
    dims = (histology.width, histology.height)
    state = {"grid": None, "score": -np.inf, "best_grid": None, "first": None}

    def evaluate(pose, surf):
        sl = extract_slice(vol, pose, surf, dims, histology.spacing)
        grid, score = inner_register_2d(sl, histology, cfg,
                                        init_grid=state["grid"],
                                        max_evals=cfg.inner_evals_refine)
        state["grid"] = grid
        if state["first"] is None:
            state["first"] = score
        if score > state["score"]:
            state["score"] = score
            state["best_grid"] = grid
        return score

    return evaluate, state


def refine_pose(vol: Volume3D, histology: Image2D, pose0: PlanePose,
                cfg: RegisterConfig):
    """Optimize (tz, rx, ry) around pose0 with the derivative-free optimizer;
    bounds are ±trans_bound / ±rot_bound, stop is the 1e-4 change rule."""
    evaluate, state = _pose_objective(vol, histology, cfg)

    def objective(x):
        pose = PlanePose(x[0], x[1], x[2], pose0.center)
        return -evaluate(pose, None)

    rx_lo = max(pose0.rx - cfg.rot_bound, -89.0)
    rx_hi = min(pose0.rx + cfg.rot_bound, 89.0)
    ry_lo = max(pose0.ry - cfg.rot_bound, -89.0)
    ry_hi = min(pose0.ry + cfg.rot_bound, 89.0)
    bounds = [[pose0.tz - cfg.trans_bound, pose0.tz + cfg.trans_bound],
              [rx_lo, rx_hi], [ry_lo, ry_hi]]
    res = minimize_df(OptimProblem(objective, bounds,
                                   [pose0.tz, pose0.rx, pose0.ry],
                                   stop=cfg.pose_stop,
                                   max_evaluations=cfg.refine_max_evals))
    pose = PlanePose(res.x[0], res.x[1], res.x[2], pose0.center)
    return pose, -res.f, res.evaluations, state["best_grid"], state["first"]


def optimize_out_of_plane(vol: Volume3D, histology: Image2D, pose: PlanePose,
                          cfg: RegisterConfig, warm_grid: InPlaneGrid | None = None):
    """5-restart bounded search over the control-pair z-displacements.

    Restart 1 starts from the flat surface, the rest from seeded uniform
    displacements in ±oop_bound/2; each restart is capped at
    cfg.oop_iterations objective evaluations. Returns the best surface.
    """
    n = cfg.grid_size
    extent = ((0.0, (histology.width - 1) * histology.spacing[0]),
              (0.0, (histology.height - 1) * histology.spacing[1]))
    rng = np.random.default_rng(cfg.seed)
    starts = [np.zeros(n * n)]
    for _ in range(cfg.oop_restarts - 1):
        starts.append(rng.uniform(-cfg.oop_bound / 2, cfg.oop_bound / 2, n * n))

    bounds = np.tile([-cfg.oop_bound, cfg.oop_bound], (n * n, 1))

    def run_restart(x0):
        evaluate, state = _pose_objective(vol, histology, cfg)
        if warm_grid is not None:
            state["grid"] = warm_grid

        def objective(x):
            surface = OutOfPlaneGrid(np.asarray(x).reshape(n, n), extent)
            return -evaluate(pose, surface)

        res = minimize_df(OptimProblem(objective, bounds, x0, stop=cfg.pose_stop,
                                       max_evaluations=cfg.oop_iterations))
        return res, state["best_grid"]

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outcomes = list(pool.map(run_restart, starts))
    else:
        outcomes = [run_restart(x0) for x0 in starts]

    best_idx = int(np.argmin([r.f for r, _ in outcomes]))
    res, grid = outcomes[best_idx]
    surface = OutOfPlaneGrid(res.x.reshape(n, n), extent)
    evals = sum(r.evaluations for r, _ in outcomes)
    return surface, -res.f, evals, grid


def init_intensity(vol: Volume3D, histology: Image2D, cfg: RegisterConfig,
                   depth_range: tuple[float, float]):
    """Scan axis-aligned slices across the depth range; the best inner
    registration score picks the starting plane."""
    z_lo, z_hi = depth_range
    sz = vol.spacing[2]
    k_lo = int(np.ceil(z_lo / sz - 1e-9))
    k_hi = int(np.floor(z_hi / sz + 1e-9))
    k_hi = min(k_hi, vol.data.shape[0] - 1)
    k_lo = max(k_lo, 0)
    if k_hi < k_lo:
        raise ConfigError(f"empty depth range [{z_lo}, {z_hi}] µm at spacing {sz}")
    dims = (histology.width, histology.height)
    center = slice_center(histology)

    def scan(k):
        pose = PlanePose(k * sz, 0.0, 0.0, center)
        sl = extract_slice(vol, pose, None, dims, histology.spacing)
        _, score = inner_register_2d(sl, histology, cfg, max_evals=cfg.inner_evals_init)
        return score

    ks = list(range(k_lo, k_hi + 1))
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            scores = list(pool.map(scan, ks))
    else:
        scores = [scan(k) for k in ks]
    best = int(np.argmax(scores))
    evals = len(ks) * cfg.inner_evals_init
    info = [("depth_indices", (ks[0], ks[-1])), ("best_index", ks[best]),
            ("best_scan_score", scores[best])]
    return PlanePose(ks[best] * sz, 0.0, 0.0, center), scores[best], evals, info


def _rot_xyz(rx_deg, ry_deg, rz_deg):
    ax, ay, az = np.deg2rad([rx_deg, ry_deg, rz_deg])
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _transform_matrix(linear, translation, pivot):
    t = np.eye(4)[:3]
    t[:, :3] = linear
    t[:, 3] = pivot - linear @ pivot + translation
    return t


def init_disa(feat_hist: FeatureMap, feat_ct: FeatureVolume, cfg: RegisterConfig,
              depth_range: tuple[float, float]):
    """Feature-space 2D-3D registration: for each equidistant start depth,
    a rigid then affine maximization of the feature dot product, all within
    ±rot_bound/±trans_bound of the start; the best trial's transform is
    projected onto the plane pose (in-plane components are logged only).
    """
    from .similarity import disa_similarity

    z_lo, z_hi = depth_range
    if not (z_hi >= z_lo):
        raise ConfigError("empty depth range for DISA initialization")
    depths = np.linspace(z_lo, z_hi, cfg.n_depths)
    h, w, _ = feat_hist.data.shape
    pivot = np.array([(w - 1) * feat_hist.spacing[0] / 2.0,
                      (h - 1) * feat_hist.spacing[1] / 2.0, 0.0])

    def trial(depth):
        def rigid_objective(p):
            linear = _rot_xyz(p[3], p[4], p[5])
            t = _transform_matrix(linear, np.array([p[0], p[1], depth + p[2]]), pivot)
            return -disa_similarity(feat_hist, feat_ct, t)

        tb, rb = cfg.trans_bound, cfg.rot_bound
        bounds_r = [[-tb, tb]] * 3 + [[-rb, rb]] * 3
        res_r = minimize_bfgs(OptimProblem(rigid_objective, bounds_r, np.zeros(6),
                                           stop=cfg.pose_stop,
                                           max_evaluations=cfg.bfgs_max_evals))
        linear_r = _rot_xyz(res_r.x[3], res_r.x[4], res_r.x[5])
        trans_r = np.array([res_r.x[0], res_r.x[1], depth + res_r.x[2]])

        def affine_objective(q):
            linear = linear_r @ (np.eye(3) + q[:9].reshape(3, 3))
            t = _transform_matrix(linear, trans_r + q[9:], pivot)
            return -disa_similarity(feat_hist, feat_ct, t)

        rel = trans_r - np.array([0.0, 0.0, depth])
        bounds_a = [[-0.08, 0.08]] * 9 + [[-tb - rel[i], tb - rel[i]] for i in range(3)]
        res_a = minimize_bfgs(OptimProblem(affine_objective, bounds_a, np.zeros(12),
                                           stop=cfg.pose_stop,
                                           max_evaluations=cfg.bfgs_max_evals))
        linear = linear_r @ (np.eye(3) + res_a.x[:9].reshape(3, 3))
        trans = trans_r + res_a.x[9:]
        score = -min(res_r.f, res_a.f)
        evals = res_r.evaluations + res_a.evaluations
        return score, linear, trans, evals

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(trial, depths))
    else:
        results = [trial(d) for d in depths]

    scores = [r[0] for r in results]
    if all(s == 0.0 for s in scores):
        warnings.warn("feature fields carry no signal: all DISA trials scored 0",
                      DegenerateDataWarning, stacklevel=2)
    best = int(np.argmax(scores))
    score, linear, trans, _ = results[best]

    normal = np.cross(linear[:, 0], linear[:, 1])
    nrm = np.linalg.norm(normal)
    normal = normal / nrm if nrm > 0 else np.array([0.0, 0.0, 1.0])
    if normal[2] < 0:
        normal = -normal
    rx = float(np.degrees(np.arcsin(np.clip(-normal[1], -1.0, 1.0))))
    ry = float(np.degrees(np.arctan2(normal[0], normal[2])))
    tz = float(pivot[2] + trans[2])  # the pivot maps to pivot + trans
    pose = PlanePose(tz, rx, ry, (pivot[0], pivot[1]))
    evals = sum(r[3] for r in results)
    info = [("trial_depths_um", depths), ("trial_scores", np.array(scores)),
            ("best_trial", best),
            ("inplane_shift_um_logged", (float(trans[0]), float(trans[1]))),
            ("inplane_linear_logged", linear[:2, :2].ravel())]
    return pose, float(score), evals, info


def register(vol_raw: Volume3D, hist_raw: Image2D, cfg: RegisterConfig,
             net: ConvNet | None = None) -> RegistrationResult:
    """Run the full pipeline on raw inputs and assemble the result."""
    if cfg.init_mode == "disa" and net is None:
        raise ConfigError("init_mode 'disa' requires a feature network (weights)")
    if cfg.init_mode == "manual" and cfg.manual_pose is None:
        raise ConfigError("init_mode 'manual' requires manual_pose = (tz, rx, ry)")

    stages: list[StageStats] = []

    t0 = time.perf_counter()
    prep = preprocess(vol_raw, hist_raw, cfg)
    stages.append(StageStats("preprocess", 0, time.perf_counter() - t0))

    vol, hist = prep.volume, prep.histology
    depth_range = cfg.depth_range if cfg.depth_range is not None else default_depth_range(vol)
    center = slice_center(hist)

    t0 = time.perf_counter()
    if cfg.init_mode == "intensity":
        init_pose, init_score, init_evals, init_info = init_intensity(
            vol, hist, cfg, depth_range)
    elif cfg.init_mode == "disa":
        feat_hist = forward(net, prep.histology_std)
        feat_ct = feature_volume(net, prep.volume_std)
        init_pose, init_score, init_evals, init_info = init_disa(
            feat_hist, feat_ct, cfg, depth_range)
    else:
        tz, rx, ry = cfg.manual_pose
        init_pose = PlanePose(tz - prep.volume_offset[2], rx, ry, center)
        init_score, init_evals, init_info = float("nan"), 0, [("source", "manual")]
    stages.append(StageStats(f"init_{cfg.init_mode}", init_evals,
                             time.perf_counter() - t0))

    t0 = time.perf_counter()
    pose, refine_score, refine_evals, warm_grid, score_at_init = refine_pose(
        vol, hist, init_pose, cfg)
    stages.append(StageStats("refine_pose", refine_evals, time.perf_counter() - t0))

    t0 = time.perf_counter()
    surface, oop_score, oop_evals, warm_grid = optimize_out_of_plane(
        vol, hist, pose, cfg, warm_grid)
    stages.append(StageStats("out_of_plane", oop_evals, time.perf_counter() - t0))

    t0 = time.perf_counter()
    extracted = extract_slice(vol, pose, surface, (hist.width, hist.height),
                              hist.spacing)
    inplane, final_score = inner_register_2d(extracted, hist, cfg,
                                             init_grid=warm_grid,
                                             max_evals=cfg.inner_evals_full)
    registered = warp_2d(extracted, inplane)
    stages.append(StageStats("final_inplane", cfg.inner_evals_full,
                             time.perf_counter() - t0))

    # the init score reported here is the refine-protocol objective at the
    # initial pose (the refine stage's first evaluation), so stage scores are
    # directly comparable and monotone; the init stage's own scan score stays
    # in the [init] section
    scores = {
        "init": score_at_init,
        "refine": refine_score,
        "out_of_plane": oop_score,
        "inner_final": final_score,
        "lncc_pre_warp": lncc(extracted, hist, cfg.metric),
        "lncc_post_warp": lncc(registered, hist, cfg.metric),
        "lc2_pre_warp": lc2(extracted, hist, cfg.metric),
        "lc2_post_warp": lc2(registered, hist, cfg.metric),
    }
    meta = {
        "kind": "registration",
        "seed": cfg.seed,
        "init_mode": cfg.init_mode,
        "working_spacing_um": (cfg.working_spacing,) * 3,
        "normalization": f"percentile {cfg.normalize_lo} {cfg.normalize_hi} after-crop",
        "volume_crop_offset_um": prep.volume_offset,
        "histology_crop_offset_um": prep.histology_offset,
        "slice_dims_px": (hist.width, hist.height),
        "slice_spacing_um": hist.spacing,
        "volume_dims": vol.dims,
    }
    return RegistrationResult(cfg.init_mode, init_pose, init_score, init_info,
                              pose, surface, inplane, scores, stages, meta, cfg,
                              registered, extracted, hist)


def _config_entries(cfg: RegisterConfig):
    entries = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "metric":
            entries.append(("metric_lncc_radius", value.lncc_radius))
            entries.append(("metric_lc2_radius", value.lc2_radius))
            entries.append(("metric_variance_epsilon", value.variance_epsilon))
        elif value is None:
            entries.append((f.name, "none"))
        else:
            entries.append((f.name, value))
    return entries


def result_sections(result: RegistrationResult):
    from .report import grid_entries, pose_entries

    meta_entries = [(k, v) for k, v in result.meta.items()]
    init_entries = [("provenance", result.init_provenance)]
    init_entries += pose_entries(result.init_pose)
    init_entries.append(("score", result.init_score))
    init_entries += [(k, v) for k, v in result.init_info]
    sections = [
        ("meta", meta_entries),
        ("init", init_entries),
        ("pose", pose_entries(result.pose)),
        ("out_of_plane_grid_um", grid_entries(result.surface)),
        ("in_plane_grid_um", grid_entries(result.inplane)),
        ("scores", [(k, v) for k, v in result.scores.items()]),
        ("stages", [(f"{s.name}_evaluations", s.evaluations) for s in result.stages]),
        ("config", _config_entries(result.config)),
    ]
    return sections


def write_result_report(path, result: RegistrationResult) -> None:
    from .report import write_report
    write_report(path, result_sections(result))


def write_timings(path, result: RegistrationResult) -> None:
    """Wall-clock sidecar; kept out of the report so reports stay
    byte-reproducible under a fixed seed."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in result.stages:
            fh.write(f"{s.name}: {s.seconds:.3f} s ({s.evaluations} evaluations)\n")


def config_from_mapping(mapping, base: RegisterConfig | None = None) -> RegisterConfig:
    """Build a config from string key/value pairs (config file or CLI),
    rejecting unknown keys."""
    base = base if base is not None else RegisterConfig()
    kwargs = {f.name: getattr(base, f.name) for f in fields(RegisterConfig)}
    metric_kwargs = {"lncc_radius": base.metric.lncc_radius,
                     "lc2_radius": base.metric.lc2_radius,
                     "variance_epsilon": base.metric.variance_epsilon}
    int_keys = {"n_depths", "oop_restarts", "oop_iterations", "grid_size", "seed",
                "inner_evals_init", "inner_evals_refine", "inner_evals_full",
                "refine_max_evals", "bfgs_max_evals", "threads"}
    float_keys = {"working_spacing", "rot_bound", "trans_bound", "pose_stop",
                  "oop_bound", "inplane_bound", "foreground_threshold",
                  "normalize_lo", "normalize_hi"}
    for key, value in mapping.items():
        if key == "init_mode":
            kwargs[key] = str(value)
        elif key in int_keys:
            kwargs[key] = int(value)
        elif key in float_keys:
            kwargs[key] = float(value)
        elif key == "depth_range":
            parts = [float(v) for v in str(value).replace(",", " ").split()]
            if len(parts) != 2:
                raise ConfigError(f"depth_range needs two values, got {value!r}")
            kwargs[key] = (parts[0], parts[1])
        elif key == "manual_pose":
            parts = [float(v) for v in str(value).replace(",", " ").split()]
            if len(parts) != 3:
                raise ConfigError(f"manual_pose needs 'tz,rx,ry', got {value!r}")
            kwargs[key] = tuple(parts)
        elif key == "metric_lncc_radius":
            metric_kwargs["lncc_radius"] = int(value)
        elif key == "metric_lc2_radius":
            metric_kwargs["lc2_radius"] = int(value)
        elif key == "metric_variance_epsilon":
            metric_kwargs["variance_epsilon"] = float(value)
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
    try:
        kwargs["metric"] = MetricConfig(**metric_kwargs)
        return RegisterConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def read_config_file(path, base: RegisterConfig | None = None) -> RegisterConfig:
    mapping = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            mapping[key] = value
    return config_from_mapping(mapping, base)
