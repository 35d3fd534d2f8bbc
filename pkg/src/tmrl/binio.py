"""Little-endian binary container helpers with a trailing SHA-256 digest."""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from pathlib import Path

from .errors import DigestMismatchError, FileFormatError, TruncatedFileError

DIGEST_LEN = 32


class Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def pack(self, fmt: str, *values) -> None:
        self.parts.append(struct.pack("<" + fmt, *values))

    def raw(self, data: bytes) -> None:
        self.parts.append(data)

    def string(self, s: str) -> None:
        b = s.encode("utf-8")
        self.pack("I", len(b))
        self.raw(b)

    def payload(self) -> bytes:
        return b"".join(self.parts)


class Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"{self.what}: truncated at byte {self.pos} (need {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("I")
        return self.take(n).decode("utf-8")

    def done(self) -> bool:
        return self.pos == len(self.data)


def write_container(path, magic: bytes, version: int, payload: bytes) -> bytes:
    """Write ``magic | version | length | payload | sha256(payload)`` atomically."""
    digest = hashlib.sha256(payload).digest()
    blob = magic + struct.pack("<HQ", version, len(payload)) + payload + digest
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return digest


def read_container(path, magic: bytes, version: int) -> tuple[Reader, bytes]:
    """Validate header and digest; returns a reader over the payload."""
    data = Path(path).read_bytes()
    what = str(path)
    if len(data) < len(magic) + 2:
        raise TruncatedFileError(f"{what}: file too short for header")
    if data[: len(magic)] != magic:
        raise FileFormatError(f"{what}: bad magic {data[:len(magic)]!r}, expected {magic!r}")
    (ver,) = struct.unpack("<H", data[len(magic):len(magic) + 2])
    if ver != version:
        raise FileFormatError(f"{what}: unsupported format version {ver}")
    head = len(magic) + 2
    if len(data) < head + 8:
        raise TruncatedFileError(f"{what}: file too short for header")
    (length,) = struct.unpack("<Q", data[head:head + 8])
    body = data[head + 8:]
    if len(body) < length + DIGEST_LEN:
        raise TruncatedFileError(f"{what}: expected {length + DIGEST_LEN} bytes after header, found {len(body)}")
    if len(body) > length + DIGEST_LEN:
        raise FileFormatError(f"{what}: {len(body) - length - DIGEST_LEN} trailing bytes")
    payload, digest = body[:length], body[length:]
    if hashlib.sha256(payload).digest() != digest:
        raise DigestMismatchError(f"{what}: content digest mismatch")
    return Reader(payload, what), digest
