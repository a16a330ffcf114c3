"""Binary checkpoint format.

Little-endian layout::

    b"SDTL"  u32 version  u32 count
    count x ( u32 name_len, name (utf-8), u32 rank, rank x u32 dim, float32 data )
"""
import struct
from pathlib import Path

import numpy as np

from sdtl.errors import FormatError, ParseError

MAGIC = b"SDTL"
VERSION = 1


def save_checkpoint(path, tensors):
    """Write ``{name: array}`` to ``path``; values are stored as float32."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise ParseError(
                f"truncated checkpoint reading {what}: need {n} bytes, {len(self.buf) - self.pos} left",
                offset=self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path):
    """Read a checkpoint back into an ordered ``{name: float32 array}`` dict."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4, "magic") != MAGIC:
        raise ParseError("not an SDTL checkpoint (bad magic)", offset=0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    out = {}
    for _ in range(r.u32("tensor count")):
        name = r.take(r.u32("name length"), "name").decode("utf-8")
        rank = r.u32("rank")
        dims = tuple(r.u32("dimension") for _ in range(rank))
        n = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(r.take(4 * n, f"data of {name}"), dtype="<f4")
        out[name] = data.reshape(dims).astype(np.float32)
    if r.pos != len(r.buf):
        raise ParseError(f"{len(r.buf) - r.pos} trailing bytes after last tensor", offset=r.pos)
    return out
