"""Self-describing binary checkpoint format.

Layout (little-endian): magic b"GFLN", version u32, record count u32, then per
record: name length u16, name utf-8, ndim u32, dims u32 each, raw float32 data.
The same container is reused for raw heatmap dumps.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"GFLN"
VERSION = 1


class CheckpointError(IOError):
    pass


def save_arrays(path, arrays: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in sorted(arrays.items()):
            data = np.ascontiguousarray(arr, dtype="<f4")
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", data.ndim))
            for d in data.shape:
                fh.write(struct.pack("<I", d))
            fh.write(data.tobytes())


def load_arrays(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError("bad magic; not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", fh.read(4))
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode()
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            n_items = int(np.prod(shape)) if shape else 1
            buf = fh.read(4 * n_items)
            if len(buf) != 4 * n_items:
                raise CheckpointError(f"truncated record '{name}'")
            out[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
        return out
