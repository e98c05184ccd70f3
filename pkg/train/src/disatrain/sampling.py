"""Patch-pair sampling with LC2 labels.

Each sample is a (CT patch, histology patch) pair drawn at a random position
with a random relative offset; the label is the LC2 similarity of the raw
patches. Patches are standardized per patch for the network input, which
leaves the label unchanged (LC2 is invariant to affine remaps of either
side).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lc2ref import lc2


@dataclass
class TrainConfig:
    samples_per_pair: int = 10000
    patch_size: int = 32
    displacement_range: int = 10   # max |offset| between the two patches, px
    learning_rate: float = 3e-3
    lr_floor: float = 2e-4
    epochs: int = 30
    batch_size: int = 128
    validation_split: float = 0.15
    seed: int = 0
    lc2_radius: int = 3

    def __post_init__(self):
        if self.samples_per_pair < 1:
            raise ValueError("samples_per_pair must be >= 1")
        if self.patch_size < 2 * self.lc2_radius + 1:
            raise ValueError("patch_size must cover the LC2 patch")
        if not (0.0 < self.validation_split < 1.0):
            raise ValueError("validation_split must be in (0, 1)")


@dataclass
class PatchSet:
    ct: np.ndarray        # (n, p, p) float32, standardized
    histology: np.ndarray
    labels: np.ndarray    # (n,) float32 in [0, 1]

    def __len__(self):
        return len(self.labels)


def sample_patches(pairs, cfg: TrainConfig) -> PatchSet:
    """Seeded patch-pair sampling over all image pairs."""
    p = cfg.patch_size
    rng = np.random.default_rng(cfg.seed)
    cts, hists, labels = [], [], []
    for pair in pairs:
        ct, hist = pair.ct_slice, pair.histology
        if min(ct.shape) < p or min(hist.shape) < p:
            raise ValueError(f"images smaller than the patch size {p}")
        hc, wc = ct.shape
        hh, wh = hist.shape
        for _ in range(cfg.samples_per_pair):
            x = int(rng.integers(0, wc - p + 1))
            y = int(rng.integers(0, hc - p + 1))
            dx, dy = rng.integers(-cfg.displacement_range,
                                  cfg.displacement_range + 1, 2)
            x2 = int(np.clip(x + dx, 0, wh - p))
            y2 = int(np.clip(y + dy, 0, hh - p))
            cp = ct[y:y + p, x:x + p]
            hp = hist[y2:y2 + p, x2:x2 + p]
            c_std, h_std = float(cp.std()), float(hp.std())
            if c_std < 1e-6 or h_std < 1e-6:
                continue  # structureless patch carries no label signal
            labels.append(lc2(cp, hp, cfg.lc2_radius))
            cts.append((cp - cp.mean()) / c_std)
            hists.append((hp - hp.mean()) / h_std)
    if not labels:
        raise ValueError("no usable patches sampled")
    return PatchSet(np.asarray(cts, dtype=np.float32),
                    np.asarray(hists, dtype=np.float32),
                    np.asarray(labels, dtype=np.float32))
