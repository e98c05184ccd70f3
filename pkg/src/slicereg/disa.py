"""Feature-extraction network: forward inference and the weight container.

The network is a plain 2D CNN (convolutions with LeakyReLU, residual blocks,
anti-aliased BlurPool downsampling) with a combined striding factor of 4 and
16 output channels. The architecture is carried by the weight file, so the
training side can change the stack without code changes here, as long as the
stride/channel contract holds.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .imgcore import Image2D, Volume3D

STRIDE_TOTAL = 4
OUT_CHANNELS = 16
HISTOLOGY_THICKNESS_UM = 1.5

_MAGIC = b"DISAW001"


class WeightFormatError(Exception):
    """Weight container violation; ``code`` names the failed check."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _f32(arr, shape) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float32).reshape(shape)
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Conv2D:
    """3x3 (or kxk) convolution, zero padding k//2, stride 1."""

    weights: np.ndarray  # (out_ch, in_ch, k, k)
    bias: np.ndarray     # (out_ch,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float32)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ValueError(f"conv weights must be (out, in, k, k), got {w.shape}")
        object.__setattr__(self, "weights", _f32(w, w.shape))
        object.__setattr__(self, "bias", _f32(self.bias, (w.shape[0],)))

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def kernel(self):
        return self.weights.shape[2]


@dataclass(frozen=True)
class LeakyReLU:
    slope: float = 0.1


@dataclass(frozen=True)
class ResidualBlock:
    """x + lrelu(conv2(lrelu(conv1(x)))); channel count preserved."""

    conv1: Conv2D
    conv2: Conv2D
    slope: float = 0.1

    def __post_init__(self):
        ch = self.conv1.in_channels
        if not (self.conv1.out_channels == self.conv2.in_channels
                == self.conv2.out_channels == ch):
            raise ValueError("residual block convs must preserve the channel count")

    @property
    def channels(self):
        return self.conv1.in_channels


@dataclass(frozen=True)
class BlurPool:
    """Fixed 3x3 binomial blur ([1,2,1] x [1,2,1] / 16) then stride-2 subsample."""


Layer = Conv2D | LeakyReLU | ResidualBlock | BlurPool


@dataclass(frozen=True)
class ConvNet:
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        ch = None
        stride = 1
        for layer in self.layers:
            if isinstance(layer, Conv2D):
                if ch is not None and layer.in_channels != ch:
                    raise WeightFormatError(
                        "channel_mismatch",
                        f"conv expects {layer.in_channels} channels, gets {ch}")
                ch = layer.out_channels
            elif isinstance(layer, ResidualBlock):
                if ch is not None and layer.channels != ch:
                    raise WeightFormatError(
                        "channel_mismatch",
                        f"residual block expects {layer.channels} channels, gets {ch}")
                ch = layer.channels
            elif isinstance(layer, BlurPool):
                stride *= 2
        if stride != STRIDE_TOTAL:
            raise WeightFormatError(
                "bad_stride", f"combined striding factor must be {STRIDE_TOTAL}, got {stride}")
        if ch != OUT_CHANNELS:
            raise WeightFormatError(
                "bad_output_channels", f"network must emit {OUT_CHANNELS} channels, got {ch}")


@dataclass(frozen=True)
class FeatureMap:
    """Stride-4 multichannel raster; data (h, w, c), spacing µm/feature-pixel.

    thickness records the physical slab thickness the map stands for (the
    histology slide estimate by default); it does not affect sampling.
    """

    data: np.ndarray
    spacing: tuple[float, float]
    thickness: float = HISTOLOGY_THICKNESS_UM

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        data.setflags(write=False)
        if data.ndim != 3:
            raise ValueError("FeatureMap data must be (h, w, c)")
        if not np.isfinite(data).all():
            raise ValueError("FeatureMap contains non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", (float(self.spacing[0]), float(self.spacing[1])))


@dataclass(frozen=True)
class FeatureVolume:
    """Per-slice feature maps stacked along z; data (nz, h, w, c)."""

    data: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        data.setflags(write=False)
        if data.ndim != 4:
            raise ValueError("FeatureVolume data must be (nz, h, w, c)")
        if not np.isfinite(data).all():
            raise ValueError("FeatureVolume contains non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))


def _conv2d(x: np.ndarray, layer: Conv2D) -> np.ndarray:
    """x is (c_in, h, w) float32; zero padding keeps the spatial size."""
    cin, h, w = x.shape
    k = layer.kernel
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    cols = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    cols = cols.transpose(1, 2, 0, 3, 4).reshape(h * w, cin * k * k)
    flat = layer.weights.reshape(layer.out_channels, -1)
    out = cols @ flat.T + layer.bias
    return np.ascontiguousarray(out.T.reshape(layer.out_channels, h, w))


def _leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0, x, np.float32(slope) * x)


def _blurpool(x: np.ndarray) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")
    t = np.float32(0.25) * xp[:, :-2, :] + np.float32(0.5) * xp[:, 1:-1, :] \
        + np.float32(0.25) * xp[:, 2:, :]
    t = np.float32(0.25) * t[:, :, :-2] + np.float32(0.5) * t[:, :, 1:-1] \
        + np.float32(0.25) * t[:, :, 2:]
    return t[:, ::2, ::2]


def _apply(x: np.ndarray, layer: Layer) -> np.ndarray:
    if isinstance(layer, Conv2D):
        return _conv2d(x, layer)
    if isinstance(layer, LeakyReLU):
        return _leaky_relu(x, layer.slope)
    if isinstance(layer, ResidualBlock):
        y = _leaky_relu(_conv2d(x, layer.conv1), layer.slope)
        y = _leaky_relu(_conv2d(y, layer.conv2), layer.slope)
        return x + y
    if isinstance(layer, BlurPool):
        return _blurpool(x)
    raise TypeError(f"unknown layer {layer!r}")


def forward(net: ConvNet, img: Image2D, thickness: float = HISTOLOGY_THICKNESS_UM
            ) -> FeatureMap:
    """Run the network on a single-channel image.

    Output spatial dims are ceil(input / 4) per axis; spacing scales by the
    stride. The caller is expected to feed standardized intensities.
    """
    if img.channels != 1:
        raise ValueError("forward expects a single-channel image")
    x = img.data[None, :, :].astype(np.float32)
    for layer in net.layers:
        x = _apply(x, layer)
    data = np.transpose(x, (1, 2, 0))
    return FeatureMap(data, (img.spacing[0] * STRIDE_TOTAL,
                             img.spacing[1] * STRIDE_TOTAL), thickness)


def feature_volume(net: ConvNet, vol: Volume3D) -> FeatureVolume:
    """forward() applied to every z-slice, stacked in z order."""
    slices = []
    for k in range(vol.data.shape[0]):
        img = Image2D(vol.data[k], (vol.spacing[0], vol.spacing[1]))
        slices.append(forward(net, img).data)
    return FeatureVolume(np.stack(slices, axis=0),
                         (vol.spacing[0] * STRIDE_TOTAL,
                          vol.spacing[1] * STRIDE_TOTAL,
                          vol.spacing[2]))


def make_default_net(seed: int = 0) -> ConvNet:
    """Reference stack with seeded random weights: conv(1->16) + lrelu,
    res(16), blurpool, conv(16->32) + lrelu, res(32), blurpool, conv(32->16)."""
    rng = np.random.default_rng(seed)

    def conv(cin, cout, k=3):
        std = np.sqrt(2.0 / (cin * k * k))
        return Conv2D(rng.normal(0.0, std, (cout, cin, k, k)), np.zeros(cout))

    def res(ch):
        return ResidualBlock(conv(ch, ch), conv(ch, ch), 0.1)

    return ConvNet((
        conv(1, 16), LeakyReLU(0.1), res(16), BlurPool(),
        conv(16, 32), LeakyReLU(0.1), res(32), BlurPool(),
        conv(32, 16),
    ))


# ---------------------------------------------------------------------------
# weight container (.dsw)

def _header_text(net: ConvNet) -> str:
    lines = []
    for layer in net.layers:
        if isinstance(layer, Conv2D):
            lines.append(f"layer conv2d in={layer.in_channels} out={layer.out_channels} "
                         f"k={layer.kernel}")
        elif isinstance(layer, LeakyReLU):
            lines.append(f"layer leaky_relu slope={layer.slope!r}")
        elif isinstance(layer, ResidualBlock):
            lines.append(f"layer residual_block ch={layer.channels} "
                         f"k={layer.conv1.kernel} slope={layer.slope!r}")
        elif isinstance(layer, BlurPool):
            lines.append("layer blurpool")
    return "\n".join(lines) + "\n"


def _conv_tensors(layer: Conv2D):
    yield layer.weights
    yield layer.bias


def _net_tensors(net: ConvNet):
    for layer in net.layers:
        if isinstance(layer, Conv2D):
            yield from _conv_tensors(layer)
        elif isinstance(layer, ResidualBlock):
            yield from _conv_tensors(layer.conv1)
            yield from _conv_tensors(layer.conv2)


def write_weights(path, net: ConvNet) -> None:
    header = _header_text(net).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for tensor in _net_tensors(net):
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def _parse_attrs(parts, lineno):
    attrs = {}
    for part in parts:
        if "=" not in part:
            raise WeightFormatError("bad_header", f"header line {lineno}: bad attribute {part!r}")
        key, val = part.split("=", 1)
        attrs[key] = val
    return attrs


def load_weights(path) -> ConvNet:
    """Parse and validate a weight container; raises WeightFormatError with a
    distinct code for each violation class."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise WeightFormatError("bad_magic", f"{path}: not a weight container")
    if len(blob) < 12:
        raise WeightFormatError("truncated", f"{path}: missing header length")
    (hlen,) = struct.unpack("<I", blob[8:12])
    if len(blob) < 12 + hlen:
        raise WeightFormatError("truncated", f"{path}: header shorter than declared")
    try:
        header = blob[12:12 + hlen].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise WeightFormatError("bad_header", f"{path}: header is not UTF-8") from exc

    payload = memoryview(blob)[12 + hlen:]
    offset = 0

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        nbytes = count * 4
        if offset + nbytes > len(payload):
            raise WeightFormatError(
                "truncated", f"{path}: tensor of {count} floats exceeds remaining bytes")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        offset += nbytes
        # fresh copy: buffer views have arbitrary alignment, which would make
        # BLAS results differ from in-memory-built networks
        return arr.reshape(shape).copy()

    def take_conv(cin, cout, k):
        return Conv2D(take((cout, cin, k, k)), take((cout,)))

    layers: list[Layer] = []
    for lineno, raw in enumerate(header.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] != "layer" or len(parts) < 2:
            raise WeightFormatError("bad_header", f"{path}: line {lineno}: expected 'layer ...'")
        kind = parts[1]
        attrs = _parse_attrs(parts[2:], lineno)
        try:
            if kind == "conv2d":
                layers.append(take_conv(int(attrs["in"]), int(attrs["out"]), int(attrs["k"])))
            elif kind == "leaky_relu":
                layers.append(LeakyReLU(float(attrs["slope"])))
            elif kind == "residual_block":
                ch, k = int(attrs["ch"]), int(attrs["k"])
                slope = float(attrs["slope"])
                layers.append(ResidualBlock(take_conv(ch, ch, k), take_conv(ch, ch, k), slope))
            elif kind == "blurpool":
                layers.append(BlurPool())
            else:
                raise WeightFormatError("bad_layer", f"{path}: unknown layer type {kind!r}")
        except (KeyError, ValueError) as exc:
            raise WeightFormatError("bad_header",
                                    f"{path}: line {lineno}: {exc}") from exc
    if offset != len(payload):
        raise WeightFormatError(
            "trailing_bytes", f"{path}: {len(payload) - offset} unused payload bytes")
    return ConvNet(tuple(layers))
