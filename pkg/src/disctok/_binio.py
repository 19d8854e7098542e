"""Low-level helpers for the little-endian binary file formats."""

from __future__ import annotations

import os
import struct
import tempfile
from contextlib import contextmanager
from pathlib import Path

from .errors import CorruptionError, FormatError


def read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CorruptionError(f"unexpected end of file: wanted {n} bytes, got {len(buf)}")
    return buf


def expect_magic(fh, magic: bytes, path=None) -> None:
    head = fh.read(len(magic))
    if head != magic:
        where = f" in {path}" if path is not None else ""
        raise FormatError(f"bad magic {head!r}{where}, expected {magic!r}")


def expect_version(fh, expected: int, path=None) -> None:
    version = read_u32(fh)
    if version != expected:
        where = f" in {path}" if path is not None else ""
        raise FormatError(f"unsupported format version {version}{where}, expected {expected}")


def read_u32(fh) -> int:
    return struct.unpack("<I", read_exact(fh, 4))[0]


def read_u64(fh) -> int:
    return struct.unpack("<Q", read_exact(fh, 8))[0]


def read_f64(fh) -> float:
    return struct.unpack("<d", read_exact(fh, 8))[0]


def pack_u32(value: int) -> bytes:
    return struct.pack("<I", value)


def pack_u64(value: int) -> bytes:
    return struct.pack("<Q", value)


def pack_f64(value: float) -> bytes:
    return struct.pack("<d", value)


@contextmanager
def atomic_write(destination):
    """Open a binary file for writing via a temp file + rename.

    Interrupted writes never leave a torn file at the destination.
    """
    path = Path(destination)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            yield fh
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
