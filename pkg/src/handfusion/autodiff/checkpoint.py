"""Flat binary checkpoint container.

Layout (all integers little-endian)::

    b"PDFU"  u32 version
    repeated until EOF:
        u32 name_len, name (UTF-8), u8 dtype_tag, u32 ndim, u32 dims[ndim],
        raw little-endian array data (C order)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError

MAGIC = b"PDFU"
VERSION = 1
_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8"), 4: np.dtype("u1"), 5: np.dtype("<i4")}
_TAG_OF = {(dt.kind, dt.itemsize): tag for tag, dt in _TAGS.items()}


def _tag(arr: np.ndarray) -> int:
    key = (arr.dtype.kind, arr.dtype.itemsize)
    if key not in _TAG_OF:
        raise TypeError(f"unsupported dtype {arr.dtype}")
    return _TAG_OF[key]


def save(path: str | Path, records: dict[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", VERSION))
        for name, arr in records.items():
            arr = np.ascontiguousarray(arr)
            tag = _tag(arr)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<BI", tag, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype(_TAGS[tag], copy=False).tobytes())
    tmp.replace(path)


def load(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ParseError(str(path), "bad magic, not a checkpoint")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise ParseError(str(path), f"unsupported checkpoint version {version}")
    pos, out = 8, {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            tag, ndim = struct.unpack_from("<BI", blob, pos)
            pos += 5
            dims = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            dt = _TAGS[tag]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(blob):
                raise ParseError(f"{path}:{name}", "truncated record")
            out[name] = np.frombuffer(blob, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(dims).copy()
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise ParseError(str(path), f"corrupt checkpoint ({exc})") from exc
    return out


def encode_text(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).copy()


def decode_text(arr: np.ndarray) -> str:
    return arr.astype(np.uint8).tobytes().decode("utf-8")
