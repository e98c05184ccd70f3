"""Reader/writer for the .imv raster container (see the registration
toolkit's README for the format). Kept independent of that package: the
container bytes are the interface."""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"IMVOL001"
DTYPES = {"f32": "<f4", "u8": "u1", "u16": "<u2"}


def read_imv(path):
    """Returns (data, spacing): data float32 (nz, ny, nx, channels)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path}: not an .imv container")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = blob[12:12 + hlen].decode("utf-8")
    fields = {}
    for line in header.splitlines():
        line = line.strip()
        if line and "=" in line:
            key, value = (p.strip() for p in line.split("=", 1))
            fields[key] = value
    nx, ny, nz = (int(v) for v in fields["dims"].split())
    spacing = tuple(float(v) for v in fields["spacing"].split())
    channels = int(fields["channels"])
    dtype = np.dtype(DTYPES[fields["dtype"]])
    count = nx * ny * nz * channels
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=12 + hlen)
    return data.astype(np.float32).reshape(nz, ny, nx, channels), spacing


def write_imv(path, data, spacing):
    """data: (nz, ny, nx, channels) float32."""
    data = np.ascontiguousarray(data, dtype=np.float32)
    if data.ndim != 4:
        raise ValueError("write_imv expects (nz, ny, nx, channels)")
    nz, ny, nx, channels = data.shape
    header = (f"dims = {nx} {ny} {nz}\n"
              f"spacing = {spacing[0]!r} {spacing[1]!r} {spacing[2]!r}\n"
              f"channels = {channels}\n"
              "dtype = f32\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(data.astype("<f4").tobytes())
