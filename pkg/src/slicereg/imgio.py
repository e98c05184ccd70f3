"""Raster container I/O.

".imv" container: 8-byte magic "IMVOL001", little-endian u32 header length,
a UTF-8 key=value header (dims, spacing in µm, channels, dtype of f32/u8/u16)
and raw little-endian samples, channel fastest, then x, then y, then z.
2D images are stored as nz = 1 volumes. Values load as float32 regardless of
the stored dtype.

8-bit and 16-bit binary PGM (P5) import/export is provided for convenience;
16-bit PGM samples are big-endian per the format.
"""
from __future__ import annotations

import struct

import numpy as np

from .imgcore import Image2D, Volume3D

_MAGIC = b"IMVOL001"
_DTYPES = {"f32": "<f4", "u8": "u1", "u16": "<u2"}


def _header(dims, spacing, channels, dtype) -> bytes:
    lines = [
        "dims = " + " ".join(str(int(d)) for d in dims),
        "spacing = " + " ".join(repr(float(s)) for s in spacing),
        f"channels = {int(channels)}",
        f"dtype = {dtype}",
    ]
    return ("\n".join(lines) + "\n").encode("utf-8")


def write_imv(path, obj, dtype: str = "f32") -> None:
    """Write an Image2D, Volume3D, or (data, spacing) feature raster.

    Feature rasters pass data shaped (nz, ny, nx, channels) with a 3-tuple
    spacing. u8/u16 output clamps to the dtype range after rounding.
    """
    if isinstance(obj, Image2D):
        data = obj.data.reshape(obj.height, obj.width, obj.channels)[None, ...]
        dims = (obj.width, obj.height, 1)
        spacing = (obj.spacing[0], obj.spacing[1], 1.0)
        channels = obj.channels
    elif isinstance(obj, Volume3D):
        data = obj.data[..., None]
        dims = obj.dims
        spacing = obj.spacing
        channels = 1
    else:
        data, spacing = obj
        data = np.asarray(data, dtype=np.float32)
        if data.ndim != 4:
            raise ValueError("raw rasters must be (nz, ny, nx, channels)")
        dims = (data.shape[2], data.shape[1], data.shape[0])
        channels = data.shape[3]
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {dtype}")
    np_dtype = np.dtype(_DTYPES[dtype])
    samples = np.ascontiguousarray(data, dtype=np.float32)
    if dtype != "f32":
        info = np.iinfo(np_dtype)
        samples = np.clip(np.rint(samples), info.min, info.max)
    payload = samples.astype(np_dtype).tobytes()
    header = _header(dims, spacing, channels, dtype)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def read_imv(path):
    """Read a container; returns Image2D (nz=1, channels 1/3), Volume3D
    (channels=1), or a raw (data, spacing) pair for other channel counts."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise ValueError(f"{path}: bad magic, not an .imv container")
    if len(blob) < 12:
        raise ValueError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", blob[8:12])
    if len(blob) < 12 + hlen:
        raise ValueError(f"{path}: header shorter than declared")
    fields = {}
    for raw in blob[12:12 + hlen].decode("utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}: bad header line {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        fields[key] = value
    try:
        nx, ny, nz = (int(v) for v in fields["dims"].split())
        spacing = tuple(float(v) for v in fields["spacing"].split())
        channels = int(fields["channels"])
        dtype = fields["dtype"]
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: invalid header: {exc}") from exc
    if dtype not in _DTYPES:
        raise ValueError(f"{path}: unsupported dtype {dtype!r}")
    np_dtype = np.dtype(_DTYPES[dtype])
    count = nx * ny * nz * channels
    payload = blob[12 + hlen:]
    if len(payload) < count * np_dtype.itemsize:
        raise ValueError(f"{path}: payload shorter than {count} samples")
    data = np.frombuffer(payload, dtype=np_dtype, count=count)
    data = data.astype(np.float32).reshape(nz, ny, nx, channels)
    if channels == 1 and nz > 1:
        return Volume3D(data[..., 0], spacing)
    if channels in (1, 3) and nz == 1:
        img = data[0, :, :, 0] if channels == 1 else data[0]
        return Image2D(img, (spacing[0], spacing[1]))
    return data, spacing


def write_pgm(path, img: Image2D, maxval: int = 255) -> None:
    """Binary PGM export of a single-channel image, scaled from [0, 1]."""
    if img.channels != 1:
        raise ValueError("PGM export expects a single-channel image")
    if maxval not in (255, 65535):
        raise ValueError("maxval must be 255 or 65535")
    scaled = np.clip(np.rint(img.data.astype(np.float64) * maxval), 0, maxval)
    arr = scaled.astype(">u2" if maxval == 65535 else "u1")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path, spacing=(1.0, 1.0)) -> Image2D:
    """Binary PGM import; values scale back into [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P5"):
        raise ValueError(f"{path}: only binary PGM (P5) is supported")
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        # skip whitespace and '#' comment lines between header tokens
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(t) for t in tokens)
    if maxval not in (255, 65535):
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    dt = np.dtype(">u2" if maxval == 65535 else "u1")
    count = width * height
    data = np.frombuffer(blob, dtype=dt, count=count, offset=pos)
    return Image2D(data.reshape(height, width).astype(np.float32) / maxval, spacing)
