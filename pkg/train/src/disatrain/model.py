"""The feature network (torch) and the .dsw weight container writer.

Architecture mirrors the registration toolkit's default stack exactly:
conv3x3(1->16) + LeakyReLU(0.1), residual block(16), BlurPool,
conv3x3(16->32) + LeakyReLU(0.1), residual block(32), BlurPool,
conv3x3(32->16) linear head. Combined stride 4, 16 output channels.
"""
from __future__ import annotations

import struct

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

MAGIC = b"DISAW001"
SLOPE = 0.1
OUT_CHANNELS = 16


class BlurPool(nn.Module):
    """3x3 binomial blur (edge-replicated) followed by stride-2 subsampling."""

    def __init__(self):
        super().__init__()
        kernel = torch.tensor([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0
        self.register_buffer("kernel", kernel[None, None])

    def forward(self, x):
        k = self.kernel.expand(x.shape[1], 1, 3, 3)
        x = F.pad(x, (1, 1, 1, 1), mode="replicate")
        return F.conv2d(x, k, stride=2, groups=x.shape[1])


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        y = F.leaky_relu(self.conv1(x), SLOPE)
        y = F.leaky_relu(self.conv2(y), SLOPE)
        return x + y


class FeatureNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 16, 3, padding=1)
        self.res1 = ResidualBlock(16)
        self.pool1 = BlurPool()
        self.conv2 = nn.Conv2d(16, 32, 3, padding=1)
        self.res2 = ResidualBlock(32)
        self.pool2 = BlurPool()
        self.head = nn.Conv2d(32, OUT_CHANNELS, 3, padding=1)

    def forward(self, x):
        x = F.leaky_relu(self.conv1(x), SLOPE)
        x = self.pool1(self.res1(x))
        x = F.leaky_relu(self.conv2(x), SLOPE)
        x = self.pool2(self.res2(x))
        return self.head(x)

    def center_dot(self, a, b):
        """Feature dot product at the patch-center position."""
        fa, fb = self(a), self(b)
        cy, cx = fa.shape[2] // 2, fa.shape[3] // 2
        return (fa[:, :, cy, cx] * fb[:, :, cy, cx]).sum(dim=1)


HEADER = "\n".join([
    "layer conv2d in=1 out=16 k=3",
    "layer leaky_relu slope=0.1",
    "layer residual_block ch=16 k=3 slope=0.1",
    "layer blurpool",
    "layer conv2d in=16 out=32 k=3",
    "layer leaky_relu slope=0.1",
    "layer residual_block ch=32 k=3 slope=0.1",
    "layer blurpool",
    "layer conv2d in=32 out=16 k=3",
]) + "\n"

_TENSOR_ORDER = [
    ("conv1.weight", (16, 1, 3, 3)), ("conv1.bias", (16,)),
    ("res1.conv1.weight", (16, 16, 3, 3)), ("res1.conv1.bias", (16,)),
    ("res1.conv2.weight", (16, 16, 3, 3)), ("res1.conv2.bias", (16,)),
    ("conv2.weight", (32, 16, 3, 3)), ("conv2.bias", (32,)),
    ("res2.conv1.weight", (32, 32, 3, 3)), ("res2.conv1.bias", (32,)),
    ("res2.conv2.weight", (32, 32, 3, 3)), ("res2.conv2.bias", (32,)),
    ("head.weight", (16, 32, 3, 3)), ("head.bias", (16,)),
]


def export_weights(net: FeatureNet, path) -> None:
    """Write the .dsw container: magic, header, then raw little-endian f32
    tensors in layer order, conv weights [out][in][ky][kx] then bias."""
    state = net.state_dict()
    expected = {name for name, _ in _TENSOR_ORDER}
    tensors = {k: v for k, v in state.items() if k.endswith(("weight", "bias"))
               and "kernel" not in k}
    if set(tensors) != expected:
        raise ValueError(f"architecture mismatch: parameters {sorted(set(tensors) ^ expected)}")
    header = HEADER.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name, shape in _TENSOR_ORDER:
            tensor = tensors[name].detach().cpu().numpy().astype("<f4")
            if tensor.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {tensor.shape}")
            fh.write(np.ascontiguousarray(tensor).tobytes())


def import_weights(path) -> FeatureNet:
    """Load a .dsw file produced by export_weights back into a FeatureNet."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path}: bad magic")
    (hlen,) = struct.unpack("<I", blob[8:12])
    offset = 12 + hlen
    net = FeatureNet()
    state = {}
    for name, shape in _TENSOR_ORDER:
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += count * 4
        state[name] = torch.tensor(arr.copy())
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes")
    net.load_state_dict(state, strict=False)
    return net
