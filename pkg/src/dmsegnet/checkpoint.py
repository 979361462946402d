"""Binary training-state container with per-tensor integrity checks.

Layout (all integers little-endian):

    magic   4 bytes  b"DMSG"
    version u32      format version (currently 1)
    step    u64      global optimizer step
    config  u32 length + UTF-8 canonical config snapshot
    rng     u32 length + UTF-8 JSON of the generator state
    count   u32      number of tensors
    table   per tensor: u16 name length, name UTF-8, u8 dtype tag,
            u8 rank, rank*u32 dims, u64 absolute payload offset,
            u32 CRC-32 of the payload bytes
    payloads raw little-endian tensor bytes, in table order

Writes are atomic (temp file in the target directory, then rename), so
a crash never leaves a half-written checkpoint behind.
"""

import json
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError, CheckpointVersionError

MAGIC = b"DMSG"
VERSION = 1

_TAG_FOR_DTYPE = {
    np.dtype(np.float32): 1,
    np.dtype(np.float64): 2,
    np.dtype(np.int64): 3,
}
_DTYPE_FOR_TAG = {tag: dt for dt, tag in _TAG_FOR_DTYPE.items()}


@dataclass
class TrainState:
    """Everything needed to resume a run exactly where it stopped."""

    config_text: str
    step: int
    tensors: dict[str, np.ndarray]
    rng_state: dict


def save_checkpoint(state: TrainState, path) -> None:
    path = Path(path)
    config_b = state.config_text.encode("utf-8")
    rng_b = json.dumps(state.rng_state).encode("utf-8")

    table = bytearray()
    payloads = []
    header_fixed = len(MAGIC) + 4 + 8 + 4 + len(config_b) + 4 + len(rng_b) + 4
    table_size = 0
    entries = []
    for name, arr in state.tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("=")
        if dt not in _TAG_FOR_DTYPE:
            raise CheckpointFormatError(
                f"tensor {name!r}: dtype {arr.dtype} not storable "
                f"(supported: {sorted(str(d) for d in _TAG_FOR_DTYPE)})")
        name_b = name.encode("utf-8")
        if len(name_b) > 0xFFFF:
            raise CheckpointFormatError(f"tensor name too long: {name!r}")
        payload = np.ascontiguousarray(arr).astype(
            dt.newbyteorder("<"), copy=False).tobytes()
        entries.append((name_b, _TAG_FOR_DTYPE[dt], arr.shape, payload))
        table_size += 2 + len(name_b) + 1 + 1 + 4 * arr.ndim + 8 + 4

    offset = header_fixed + table_size
    for name_b, tag, shape, payload in entries:
        table += struct.pack("<H", len(name_b)) + name_b
        table += struct.pack("<BB", tag, len(shape))
        table += struct.pack(f"<{len(shape)}I", *shape)
        table += struct.pack("<QI", offset, zlib.crc32(payload))
        payloads.append(payload)
        offset += len(payload)

    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<Q", state.step)
    blob += struct.pack("<I", len(config_b)) + config_b
    blob += struct.pack("<I", len(rng_b)) + rng_b
    blob += struct.pack("<I", len(entries))
    blob += table
    for payload in payloads:
        blob += payload

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(bytes(blob))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointFormatError(f"{self.path}: truncated at byte "
                                        f"{self.pos} (wanted {n} more)")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> TrainState:
    path = Path(path)
    raw = path.read_bytes()
    r = _Reader(raw, path)
    if r.take(4) != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic; not a checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, this build reads "
            f"{VERSION}; migration required")
    (step,) = r.unpack("<Q")
    (n,) = r.unpack("<I")
    config_text = r.take(n).decode("utf-8")
    (n,) = r.unpack("<I")
    rng_state = json.loads(r.take(n).decode("utf-8"))
    (count,) = r.unpack("<I")

    entries = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        tag, rank = r.unpack("<BB")
        shape = r.unpack(f"<{rank}I") if rank else ()
        offset, crc = r.unpack("<QI")
        if tag not in _DTYPE_FOR_TAG:
            raise CheckpointFormatError(f"{path}: tensor {name!r} has "
                                        f"unknown dtype tag {tag}")
        entries.append((name, _DTYPE_FOR_TAG[tag], shape, offset, crc))

    tensors = {}
    expected = r.pos
    for name, dt, shape, offset, crc in entries:
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if offset != expected:
            raise CheckpointFormatError(f"{path}: tensor {name!r} offset "
                                        f"{offset} != expected {expected}; "
                                        "overlapping or out-of-order table")
        expected += nbytes
        if offset + nbytes > len(raw):
            raise CheckpointFormatError(f"{path}: tensor {name!r} payload "
                                        "runs past end of file")
        payload = raw[offset:offset + nbytes]
        if zlib.crc32(payload) != crc:
            raise CheckpointFormatError(f"{path}: tensor {name!r} failed "
                                        "its CRC-32 integrity check")
        arr = np.frombuffer(payload, dtype=dt.newbyteorder("<"))
        tensors[name] = arr.reshape(shape).astype(dt, copy=True)
    if expected != len(raw):
        raise CheckpointFormatError(f"{path}: {len(raw) - expected} "
                                    "trailing bytes after last payload")
    return TrainState(config_text=config_text, step=step, tensors=tensors,
                      rng_state=rng_state)
