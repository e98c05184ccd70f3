"""Training-corpus construction.

Cases come from the registration toolkit's `slicereg synth` command
(subprocessed; the .imv files and ground-truth report are the interface).
Each case contributes CT slices around the true cut depth, paired with the
case's one histology image, mirroring the protocol of reusing the same
slides against many CT slices.
"""
from __future__ import annotations

import os
import subprocess
import sys
from dataclasses import dataclass

import numpy as np

from .imv import read_imv

SLICE_OFFSETS = (-3, -1, 0, 1, 3)


@dataclass
class ImagePair:
    ct_slice: np.ndarray    # (h, w) float32, percentile-normalized
    histology: np.ndarray   # (h, w) float32, percentile-normalized


def percentile_normalize(data, lo=0.01, hi=0.99):
    p_lo, p_hi = np.percentile(data, [lo * 100, hi * 100])
    if p_hi <= p_lo:
        return np.zeros_like(data, dtype=np.float32)
    return np.clip((data - p_lo) / (p_hi - p_lo), 0.0, 1.0).astype(np.float32)


def _truth_depth(report_path) -> float:
    """tz (µm) from the ground-truth report's [pose] section."""
    section = None
    with open(report_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1]
            elif section == "pose" and line.startswith("tz_um"):
                return float(line.split("=", 1)[1])
    raise ValueError(f"{report_path}: no pose tz found")


def generate_cases(out_dir, seeds, dims="64,64,64", spacing=10.4,
                   executable="slicereg") -> list:
    """Run `slicereg synth` for each seed; returns the case directories."""
    os.makedirs(out_dir, exist_ok=True)
    case_dirs = []
    for seed in seeds:
        case = os.path.join(out_dir, f"case_{seed:04d}")
        if not os.path.exists(os.path.join(case, "ground_truth.txt")):
            cmd = [executable, "synth", "--seed", str(seed), "--out-dir", case,
                   "--dims", dims, "--spacing", str(spacing),
                   "--macro-blobs", "14", "--micro-blobs", "900",
                   "--gamma", "0.7", "--noise", "0.02"]
            if seed % 2 == 1:
                cmd.append("--invert")
            subprocess.run(cmd, check=True, capture_output=True, text=True)
        case_dirs.append(case)
    return case_dirs


def load_pairs(case_dirs) -> list:
    """CT-slice/histology pairs for every case, normalized."""
    pairs = []
    for case in case_dirs:
        vol, vol_spacing = read_imv(os.path.join(case, "volume.imv"))
        hist, _ = read_imv(os.path.join(case, "histology.imv"))
        vol = vol[..., 0]
        hist_img = percentile_normalize(hist[0, :, :, 0])
        vol_n = percentile_normalize(vol)
        k_true = int(round(_truth_depth(os.path.join(case, "ground_truth.txt"))
                           / vol_spacing[2]))
        for off in SLICE_OFFSETS:
            k = k_true + off
            if 0 <= k < vol_n.shape[0]:
                pairs.append(ImagePair(vol_n[k], hist_img))
    return pairs
