"""Human-readable result reports: deterministic writer and strict parser.

The format is line-based: a fixed first line, ``[section]`` headers and
``key = value`` entries; repeated keys (grid rows) accumulate in order.
Floats are written with repr() so identical runs produce identical bytes.
All lengths are µm, all angles degrees.
"""
from __future__ import annotations

import numpy as np

from .geometry import InPlaneGrid, OutOfPlaneGrid, PlanePose

HEADER_LINE = "SLICEREG-RESULT v1"


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (tuple, list, np.ndarray)):
        return " ".join(fmt(v) for v in value)
    return str(value)


def write_report(path, sections) -> None:
    """sections: ordered list of (name, [(key, value), ...])."""
    lines = [HEADER_LINE, ""]
    for name, entries in sections:
        lines.append(f"[{name}]")
        for key, value in entries:
            lines.append(f"{key} = {fmt(value)}")
        lines.append("")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))


def read_report(path):
    """Inverse of write_report: {section: {key: value-string or [strings]}}."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != HEADER_LINE:
        raise ValueError(f"{path}: not a result report (missing '{HEADER_LINE}')")
    sections: dict[str, dict] = {}
    current = None
    for lineno, line in enumerate(lines[1:], 2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections.setdefault(current, {})
            continue
        if current is None or "=" not in line:
            raise ValueError(f"{path}:{lineno}: stray line {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        bucket = sections[current]
        if key in bucket:
            if not isinstance(bucket[key], list):
                bucket[key] = [bucket[key]]
            bucket[key].append(value)
        else:
            bucket[key] = value
    return sections


def floats(text) -> list[float]:
    return [float(v) for v in str(text).split()]


def pose_entries(pose: PlanePose):
    return [("tz_um", pose.tz), ("rx_deg", pose.rx), ("ry_deg", pose.ry),
            ("center_um", pose.center)]


def parse_pose(section) -> PlanePose:
    cx, cy = floats(section["center_um"])
    return PlanePose(float(section["tz_um"]), float(section["rx_deg"]),
                     float(section["ry_deg"]), (cx, cy))


def grid_entries(grid):
    (u0, u1), (v0, v1) = grid.extent
    entries = [("shape", grid.shape), ("extent_u_um", (u0, u1)), ("extent_v_um", (v0, v1))]
    values = grid.values
    for row in values:
        entries.append(("row", np.asarray(row).ravel()))
    return entries


def parse_grid(section, kind):
    n_v, n_u = (int(v) for v in str(section["shape"]).split())
    extent = (tuple(floats(section["extent_u_um"])), tuple(floats(section["extent_v_um"])))
    rows = section["row"]
    if not isinstance(rows, list):
        rows = [rows]
    values = np.array([floats(r) for r in rows])
    if kind == "inplane":
        return InPlaneGrid(values.reshape(n_v, n_u, 2), extent)
    return OutOfPlaneGrid(values.reshape(n_v, n_u), extent)


class ResultFile:
    """Parsed result (or ground-truth) report with the fiducial projection."""

    def __init__(self, sections):
        self.sections = sections
        meta = sections["meta"]
        self.kind = str(meta.get("kind", "registration"))
        self.seed = int(meta["seed"]) if "seed" in meta else None
        self.volume_offset = np.array(floats(meta.get("volume_crop_offset_um", "0 0 0")))
        self.histology_offset = np.array(floats(meta.get("histology_crop_offset_um", "0 0")))
        self.pose = parse_pose(sections["pose"])
        self.surface = (parse_grid(sections["out_of_plane_grid_um"], "scalar")
                        if "out_of_plane_grid_um" in sections else None)
        self.inplane = (parse_grid(sections["in_plane_grid_um"], "inplane")
                        if "in_plane_grid_um" in sections else None)
        self.scores = {k: float(v) for k, v in sections.get("scores", {}).items()}

    def map_to_volume(self, pts2d) -> np.ndarray:
        """Project histology points (µm, original frame) into the volume frame.

        Applies, in order: the histology crop offset, the in-plane
        displacement, the out-of-plane surface, the plane pose, and the
        volume crop offset.
        """
        from .geometry import project_points
        pts = np.asarray(pts2d, dtype=np.float64).reshape(-1, 2)
        local = pts - self.histology_offset[None, :]
        world = project_points(local, self.pose, self.surface, self.inplane)
        return world + self.volume_offset[None, :]


def load_result(path) -> ResultFile:
    return ResultFile(read_report(path))
