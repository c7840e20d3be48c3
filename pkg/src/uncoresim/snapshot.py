"""Snapshots: canonical binary state encoding plus the snapshot file format.

State is encoded with a small self-describing codec (ints, strings, bools,
None, lists, tuples, dicts with sorted keys, and a packed fast path for flat
integer lists).  Encoding is canonical: equal states produce equal bytes, so
snapshot comparison and round-trip checks reduce to bytes equality.

File layout: magic, format version, config hash, payload length, payload.
Restoring under a different configuration is refused via the embedded hash.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

MAGIC = b"UCSNAP"
FORMAT_VERSION = 1

_I64 = struct.Struct("<q")
_U32 = struct.Struct("<I")


class SnapshotError(ValueError):
    pass


def snapshot_base_cycle(injection_cycle: int, interval: int) -> int:
    """Largest multiple of `interval` not exceeding `injection_cycle`."""
    if interval <= 0:
        raise ValueError("snapshot interval must be positive")
    if injection_cycle < 0:
        raise ValueError("cycle must be non-negative")
    return (injection_cycle // interval) * interval


# --- codec -----------------------------------------------------------------

def _encode_into(obj, out: list[bytes]) -> None:
    if obj is None:
        out.append(b"N")
    elif obj is True:
        out.append(b"T")
    elif obj is False:
        out.append(b"F")
    elif isinstance(obj, int):
        if -(1 << 63) <= obj < (1 << 63):
            out.append(b"i" + _I64.pack(obj))
        else:  # wide ints (512-bit buffer fields)
            raw = obj.to_bytes((obj.bit_length() + 8) // 8, "little", signed=True)
            out.append(b"I" + _U32.pack(len(raw)) + raw)
    elif isinstance(obj, str):
        raw = obj.encode()
        out.append(b"s" + _U32.pack(len(raw)) + raw)
    elif isinstance(obj, (list, tuple)):
        tag = b"l" if isinstance(obj, list) else b"t"
        if all(type(x) is int and -(1 << 63) <= x < (1 << 63) for x in obj):
            out.append((b"P" if tag == b"l" else b"Q") + _U32.pack(len(obj)))
            out.append(struct.pack(f"<{len(obj)}q", *obj))
        else:
            out.append(tag + _U32.pack(len(obj)))
            for x in obj:
                _encode_into(x, out)
    elif isinstance(obj, dict):
        keys = sorted(obj)
        out.append(b"d" + _U32.pack(len(keys)))
        for k in keys:
            _encode_into(k, out)
            _encode_into(obj[k], out)
    else:
        raise TypeError(f"cannot encode {type(obj).__name__}")


def encode_state(obj) -> bytes:
    out: list[bytes] = []
    _encode_into(obj, out)
    return b"".join(out)


def _decode_from(buf: bytes, pos: int):
    tag = buf[pos:pos + 1]
    pos += 1
    if tag == b"N":
        return None, pos
    if tag == b"T":
        return True, pos
    if tag == b"F":
        return False, pos
    if tag == b"i":
        return _I64.unpack_from(buf, pos)[0], pos + 8
    if tag == b"I":
        n = _U32.unpack_from(buf, pos)[0]
        pos += 4
        return int.from_bytes(buf[pos:pos + n], "little", signed=True), pos + n
    if tag == b"s":
        n = _U32.unpack_from(buf, pos)[0]
        pos += 4
        return buf[pos:pos + n].decode(), pos + n
    if tag in (b"P", b"Q"):
        n = _U32.unpack_from(buf, pos)[0]
        pos += 4
        vals = list(struct.unpack_from(f"<{n}q", buf, pos))
        pos += 8 * n
        return (vals if tag == b"P" else tuple(vals)), pos
    if tag in (b"l", b"t"):
        n = _U32.unpack_from(buf, pos)[0]
        pos += 4
        items = []
        for _ in range(n):
            v, pos = _decode_from(buf, pos)
            items.append(v)
        return (items if tag == b"l" else tuple(items)), pos
    if tag == b"d":
        n = _U32.unpack_from(buf, pos)[0]
        pos += 4
        d = {}
        for _ in range(n):
            k, pos = _decode_from(buf, pos)
            v, pos = _decode_from(buf, pos)
            d[k] = v
        return d, pos
    raise SnapshotError(f"corrupt state encoding (tag {tag!r} at {pos - 1})")


def decode_state(buf: bytes):
    obj, pos = _decode_from(buf, 0)
    if pos != len(buf):
        raise SnapshotError("trailing bytes in state encoding")
    return obj


# --- snapshot container ----------------------------------------------------

@dataclass(frozen=True)
class Snapshot:
    cycle: int
    config_hash: str
    payload: bytes

    def to_bytes(self) -> bytes:
        h = self.config_hash.encode()
        return b"".join([
            MAGIC, struct.pack("<HQ", FORMAT_VERSION, self.cycle),
            _U32.pack(len(h)), h,
            _U32.pack(len(self.payload)), self.payload,
        ])

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Snapshot":
        if raw[:len(MAGIC)] != MAGIC:
            raise SnapshotError("not a snapshot file (bad magic)")
        pos = len(MAGIC)
        version, cycle = struct.unpack_from("<HQ", raw, pos)
        pos += 10
        if version != FORMAT_VERSION:
            raise SnapshotError(f"unsupported snapshot format version {version}")
        n = _U32.unpack_from(raw, pos)[0]
        pos += 4
        config_hash = raw[pos:pos + n].decode()
        pos += n
        n = _U32.unpack_from(raw, pos)[0]
        pos += 4
        payload = raw[pos:pos + n]
        if pos + n != len(raw):
            raise SnapshotError("trailing bytes in snapshot file")
        return cls(cycle, config_hash, payload)

    def to_file(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_file(cls, path: str) -> "Snapshot":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def check_config(self, config_hash: str) -> None:
        if self.config_hash != config_hash:
            raise SnapshotError(
                f"snapshot config hash {self.config_hash} does not match {config_hash}")
