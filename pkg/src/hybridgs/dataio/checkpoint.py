"""Versioned binary checkpoints; byte layout documented in docs/formats.md."""
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import FormatError, IntegrityError, UnsupportedVersionError
from ..scene import DynamicPool, HybridScene, StaticPool

MAGIC = b"HGS4DCKP"
VERSION = 1
_DTYPES = {0: "<f8", 1: "<i8", 2: "<f4", 3: "<i4", 4: "|u1"}
_CODES = {np.dtype(v).str: k for k, v in _DTYPES.items()}


def _pack_arrays(arrays):
    out = [struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype.newbyteorder("<").str)
        if code is None:
            raise TypeError(f"unsupported dtype {arr.dtype} for {name}")
        key = name.encode("utf-8")
        out.append(struct.pack("<H", len(key)) + key)
        out.append(struct.pack("<BB", code, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(out)


def _unpack_arrays(buf, section):
    try:
        pos = 0
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        arrays = {}
        for _ in range(n):
            (klen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + klen].decode("utf-8")
            pos += klen
            code, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            dtype = np.dtype(_DTYPES[code])
            size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if pos + size > len(buf):
                raise IntegrityError(f"section {section}: array {name} truncated", section)
            arrays[name] = np.frombuffer(buf, dtype=dtype, count=size // dtype.itemsize, offset=pos).reshape(shape).copy()
            pos += size
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise IntegrityError(f"section {section}: malformed payload ({exc})", section) from None
    return arrays


def _section(tag, payload):
    return tag + struct.pack("<QI", len(payload), zlib.crc32(payload)) + payload


def save_checkpoint(scene, path, state=None):
    """Write ``scene`` (and optionally an optimizer state mapping of arrays) to ``path``."""
    meta = struct.pack("<ddI", scene.tau, scene.duration_seconds, scene.sh_degree)
    sections = [
        _section(b"META", meta),
        _section(b"STAT", _pack_arrays(scene.statics.arrays())),
        _section(b"DYNA", _pack_arrays(scene.dynamics.arrays())),
    ]
    if state is not None:
        sections.append(_section(b"OPTS", _pack_arrays(state)))
    body = MAGIC + struct.pack("<II", VERSION, len(sections)) + b"".join(sections)
    Path(path).write_bytes(body)


def load_checkpoint(path):
    """Returns ``(scene, state)``; ``state`` is ``None`` when not stored."""
    buf = Path(path).read_bytes()
    if len(buf) < len(MAGIC) + 8:
        raise IntegrityError("file truncated inside the header", "HEADER")
    if buf[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", buf, len(MAGIC))
    if version != VERSION:
        raise UnsupportedVersionError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    pos = len(MAGIC) + 8
    payloads = {}
    for _ in range(count):
        if pos + 16 > len(buf):
            raise IntegrityError("file truncated inside a section header", "HEADER")
        tag = buf[pos:pos + 4].decode("ascii", "replace")
        length, crc = struct.unpack_from("<QI", buf, pos + 4)
        pos += 16
        payload = buf[pos:pos + length]
        if len(payload) != length:
            raise IntegrityError(f"section {tag} truncated", tag)
        if zlib.crc32(payload) != crc:
            raise IntegrityError(f"section {tag} failed its CRC check", tag)
        payloads[tag] = payload
        pos += length
    if pos != len(buf):
        raise IntegrityError("trailing bytes after the last section", "TRAILER")
    for tag in ("META", "STAT", "DYNA"):
        if tag not in payloads:
            raise IntegrityError(f"missing section {tag}", tag)
    try:
        tau, duration, sh_degree = struct.unpack("<ddI", payloads["META"])
    except struct.error:
        raise IntegrityError("section META malformed", "META") from None
    try:
        statics = StaticPool(**_unpack_arrays(payloads["STAT"], "STAT"))
        dynamics = DynamicPool(**_unpack_arrays(payloads["DYNA"], "DYNA"))
    except TypeError as exc:
        raise FormatError(f"pool fields do not match this version: {exc}") from None
    scene = HybridScene(statics, dynamics, tau, duration, sh_degree)
    state = _unpack_arrays(payloads["OPTS"], "OPTS") if "OPTS" in payloads else None
    return scene, state
