"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"DCCC"  u32 version  u32 section_count
    per section: u16 name_len, UTF-8 name, u8 rank, u32 dims[rank],
                 prod(dims) float64 values
    u64 FNV-1a checksum of every preceding byte

Text (config echo, label names) is stored as rank-1 sections holding one
code point per value.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, VersionError

MAGIC = b"DCCC"
VERSION = 1
MAX_RANK = 32  # numpy's portable dimension limit
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def _fnv1a_py(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


try:
    import numba

    @numba.njit(cache=True)
    def _fnv1a_jit(buf):
        h = np.uint64(FNV_OFFSET)
        p = np.uint64(FNV_PRIME)
        for i in range(buf.size):
            h = (h ^ np.uint64(buf[i])) * p
        return h

    def fnv1a64(data: bytes) -> int:
        return int(_fnv1a_jit(np.frombuffer(data, dtype=np.uint8)))
except ImportError:  # pragma: no cover
    fnv1a64 = _fnv1a_py


def text_section(s: str) -> np.ndarray:
    return np.array([ord(c) for c in s], dtype=float)


def section_text(a: np.ndarray) -> str:
    return "".join(chr(int(v)) for v in a)


def dumps(sections: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(sections))]
    for name, arr in sections.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > MAX_RANK:
            raise FormatError(f"section {name!r}: name or rank too large")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", fnv1a64(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data) - 8:
            raise FormatError(f"{what}: needs {n} bytes at offset {self.pos}, "
                              f"only {max(0, len(self.data) - 8 - self.pos)} remain before the checksum")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out


def loads(data: bytes) -> dict[str, np.ndarray]:
    if len(data) < 20:
        raise FormatError("header: file too short to be a checkpoint")
    if data[:4] != MAGIC:
        raise FormatError(f"header: bad magic {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise VersionError(f"header: format version {version} is not supported (expected {VERSION})")
    r = _Reader(data)
    r.pos = 12
    sections: dict[str, np.ndarray] = {}
    for i in range(count):
        where = f"section {i}"
        (name_len,) = struct.unpack("<H", r.take(2, f"{where} name length"))
        try:
            name = r.take(name_len, f"{where} name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{where}: name is not valid UTF-8") from None
        where = f"section {i} ({name!r})"
        if name in sections:
            raise FormatError(f"{where}: duplicate section name")
        (rank,) = struct.unpack("<B", r.take(1, f"{where} rank"))
        if rank > MAX_RANK:
            raise FormatError(f"{where}: rank {rank} exceeds {MAX_RANK}")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"{where} dims"))
        n = math.prod(dims)
        raw = r.take(8 * n, f"{where} values")
        sections[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
    if r.pos != len(data) - 8:
        raise FormatError(f"trailer: {len(data) - 8 - r.pos} unexpected bytes after the last section")
    (stored,) = struct.unpack_from("<Q", data, len(data) - 8)
    if stored != fnv1a64(data[:-8]):
        raise FormatError("trailer: checksum mismatch, file is corrupt")
    return sections


def save(path, sections: dict[str, np.ndarray]) -> bytes:
    blob = dumps(sections)
    Path(path).write_bytes(blob)
    return blob


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
