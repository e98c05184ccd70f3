"""Training loop: minimize the MSE between center-feature dot products and
LC2 labels; deterministic under a fixed seed."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .model import FeatureNet
from .sampling import PatchSet, TrainConfig


class TrainingDiverged(RuntimeError):
    def __init__(self, curve):
        super().__init__(f"training error exceeded the initial error for 5 "
                         f"consecutive epochs (curve: {curve})")
        self.curve = curve


@dataclass
class TrainReport:
    train_l2: list          # mean |pred - label| per epoch, epoch 0 = pre-training
    val_l2: list
    train_mse: list
    epochs_run: int

    def lines(self):
        out = ["epoch  train_l2  val_l2"]
        for i, (tr, va) in enumerate(zip(self.train_l2, self.val_l2)):
            out.append(f"{i:5d}  {tr:.6f}  {va:.6f}")
        return out


def _to_tensors(patches: PatchSet):
    ct = torch.from_numpy(patches.ct)[:, None]
    hist = torch.from_numpy(patches.histology)[:, None]
    labels = torch.from_numpy(patches.labels)
    return ct, hist, labels


def _epoch_error(net, ct, hist, labels, idx, batch):
    net.eval()
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(idx), batch):
            sel = idx[i:i + batch]
            pred = net.center_dot(ct[sel], hist[sel])
            total += float((pred - labels[sel]).abs().sum())
    return total / len(idx)


def train(patches: PatchSet, cfg: TrainConfig, net: FeatureNet | None = None):
    """Returns (net, TrainReport). Aborts with TrainingDiverged when the
    training error stays above its initial value for 5 consecutive epochs."""
    if len(patches) == 0:
        raise ValueError("empty patch set")
    torch.manual_seed(cfg.seed)
    torch.use_deterministic_algorithms(True)
    if net is None:
        net = FeatureNet()
    ct, hist, labels = _to_tensors(patches)
    n = len(labels)
    perm = torch.randperm(n, generator=torch.Generator().manual_seed(cfg.seed))
    n_val = max(1, int(round(n * cfg.validation_split)))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        raise ValueError("validation split leaves no training samples")

    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=max(cfg.epochs, 1), eta_min=cfg.lr_floor)

    train_l2 = [_epoch_error(net, ct, hist, labels, train_idx, cfg.batch_size)]
    val_l2 = [_epoch_error(net, ct, hist, labels, val_idx, cfg.batch_size)]
    train_mse = [float("nan")]
    initial = train_l2[0]
    over_initial = 0
    epochs_run = 0
    for epoch in range(cfg.epochs):
        net.train()
        order = train_idx[torch.randperm(
            len(train_idx), generator=torch.Generator().manual_seed(cfg.seed + 1 + epoch))]
        mse_sum = 0.0
        for i in range(0, len(order), cfg.batch_size):
            sel = order[i:i + cfg.batch_size]
            opt.zero_grad()
            pred = net.center_dot(ct[sel], hist[sel])
            loss = F.mse_loss(pred, labels[sel])
            loss.backward()
            opt.step()
            mse_sum += float(loss.detach()) * len(sel)
        sched.step()
        epochs_run = epoch + 1
        train_mse.append(mse_sum / len(order))
        train_l2.append(_epoch_error(net, ct, hist, labels, train_idx, cfg.batch_size))
        val_l2.append(_epoch_error(net, ct, hist, labels, val_idx, cfg.batch_size))
        if train_l2[-1] > initial:
            over_initial += 1
            if over_initial >= 5:
                raise TrainingDiverged(train_l2)
        else:
            over_initial = 0
    return net, TrainReport(train_l2, val_l2, train_mse, epochs_run)
