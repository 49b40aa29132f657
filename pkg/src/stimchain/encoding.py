"""Canonical deterministic binary encoding.

Every transaction, block, and consensus message is hashed and signed over the
byte sequence produced here, so the encoding must be total, unambiguous, and
identical across platforms and runs. Layout (see docs/wire-format.md):

  None        -> 'N'
  False/True  -> 'F' / 'T'
  int         -> 'I' + 8-byte big-endian signed
  str         -> 'S' + u32 length + UTF-8 bytes
  bytes       -> 'B' + u32 length + raw bytes
  list/tuple  -> 'L' + u32 count + encoded items in order
  dict        -> 'D' + u32 count + (key, value) pairs sorted by key

Dict keys must be strings. Floats are deliberately unsupported: quantities
with fractional units (e.g. milliamps) travel as scaled integers.
"""

from __future__ import annotations

import hashlib
import struct


class EncodingError(ValueError):
    """Raised for values outside the canonical encoding domain."""


def encode(obj) -> bytes:
    """Encode *obj* into canonical bytes."""
    out = bytearray()
    _encode_into(obj, out)
    return bytes(out)


def _encode_into(obj, out: bytearray) -> None:
    if obj is None:
        out += b"N"
    elif obj is True:
        out += b"T"
    elif obj is False:
        out += b"F"
    elif isinstance(obj, int):
        out += b"I"
        try:
            out += struct.pack(">q", obj)
        except struct.error as exc:
            raise EncodingError(f"integer out of 64-bit range: {obj}") from exc
    elif isinstance(obj, str):
        data = obj.encode("utf-8")
        out += b"S"
        out += struct.pack(">I", len(data))
        out += data
    elif isinstance(obj, (bytes, bytearray)):
        out += b"B"
        out += struct.pack(">I", len(obj))
        out += bytes(obj)
    elif isinstance(obj, (list, tuple)):
        out += b"L"
        out += struct.pack(">I", len(obj))
        for item in obj:
            _encode_into(item, out)
    elif isinstance(obj, dict):
        keys = list(obj.keys())
        for k in keys:
            if not isinstance(k, str):
                raise EncodingError(f"dict keys must be str, got {type(k).__name__}")
        out += b"D"
        out += struct.pack(">I", len(keys))
        for k in sorted(keys):
            _encode_into(k, out)
            _encode_into(obj[k], out)
    else:
        raise EncodingError(f"unencodable type: {type(obj).__name__}")


def decode(data: bytes):
    """Decode canonical bytes back into the value they encode."""
    value, offset = _decode_at(data, 0)
    if offset != len(data):
        raise EncodingError(f"trailing bytes after value at offset {offset}")
    return value


def _decode_at(data: bytes, offset: int):
    if offset >= len(data):
        raise EncodingError("truncated value")
    tag = data[offset : offset + 1]
    offset += 1
    if tag == b"N":
        return None, offset
    if tag == b"T":
        return True, offset
    if tag == b"F":
        return False, offset
    if tag == b"I":
        _need(data, offset, 8)
        return struct.unpack_from(">q", data, offset)[0], offset + 8
    if tag in (b"S", b"B"):
        _need(data, offset, 4)
        (length,) = struct.unpack_from(">I", data, offset)
        offset += 4
        _need(data, offset, length)
        raw = data[offset : offset + length]
        offset += length
        if tag == b"S":
            return raw.decode("utf-8"), offset
        return raw, offset
    if tag == b"L":
        _need(data, offset, 4)
        (count,) = struct.unpack_from(">I", data, offset)
        offset += 4
        items = []
        for _ in range(count):
            item, offset = _decode_at(data, offset)
            items.append(item)
        return items, offset
    if tag == b"D":
        _need(data, offset, 4)
        (count,) = struct.unpack_from(">I", data, offset)
        offset += 4
        result = {}
        for _ in range(count):
            key, offset = _decode_at(data, offset)
            if not isinstance(key, str):
                raise EncodingError("dict key is not a string")
            value, offset = _decode_at(data, offset)
            result[key] = value
        return result, offset
    raise EncodingError(f"unknown tag {tag!r} at offset {offset - 1}")


def _need(data: bytes, offset: int, count: int) -> None:
    if offset + count > len(data):
        raise EncodingError("truncated value")


def digest(obj) -> bytes:
    """SHA-256 over the canonical encoding of *obj*."""
    return hashlib.sha256(encode(obj)).digest()


def digest_hex(obj) -> str:
    return hashlib.sha256(encode(obj)).hexdigest()
