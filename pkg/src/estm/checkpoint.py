"""Self-describing binary checkpoint container.

Layout (little-endian): magic ``ESTM``, version u32, 32-byte config digest,
then named blobs until EOF.  Each blob: name length u32, UTF-8 name,
ndim u32, dims u32 * ndim, f32 payload.  Round-trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CheckpointFormatError

MAGIC = b"ESTM"
VERSION = 1


def save_checkpoint(path, blobs: dict[str, np.ndarray], digest: bytes) -> None:
    if len(digest) != 32:
        raise CheckpointFormatError("config digest must be 32 bytes")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(digest)
        for name, arr in blobs.items():
            data = np.asarray(arr, dtype="<f4")  # asarray keeps 0-d scalars 0-d
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(data.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], bytes]:
    try:
        fh = open(path, "rb")
    except FileNotFoundError as exc:
        raise CheckpointFormatError(f"checkpoint not found: {path}") from exc
    with fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointFormatError(f"{path}: bad checkpoint magic {magic!r}")
        raw = fh.read(4)
        if len(raw) != 4:
            raise CheckpointFormatError(f"{path}: truncated checkpoint header")
        (version,) = struct.unpack("<I", raw)
        if version != VERSION:
            raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
        digest = fh.read(32)
        if len(digest) != 32:
            raise CheckpointFormatError(f"{path}: truncated config digest")
        blobs: dict[str, np.ndarray] = {}
        while True:
            raw = fh.read(4)
            if not raw:
                break
            if len(raw) != 4:
                raise CheckpointFormatError(f"{path}: truncated blob header")
            (name_len,) = struct.unpack("<I", raw)
            name = fh.read(name_len)
            if len(name) != name_len:
                raise CheckpointFormatError(f"{path}: truncated blob name")
            raw = fh.read(4)
            if len(raw) != 4:
                raise CheckpointFormatError(f"{path}: truncated blob rank")
            (ndim,) = struct.unpack("<I", raw)
            raw = fh.read(4 * ndim)
            if len(raw) != 4 * ndim:
                raise CheckpointFormatError(f"{path}: truncated blob dims")
            shape = struct.unpack(f"<{ndim}I", raw) if ndim else ()
            count = int(np.prod(shape)) if shape else 1
            payload = fh.read(4 * count)
            if len(payload) != 4 * count:
                raise CheckpointFormatError(f"{path}: truncated blob payload")
            blobs[name.decode("utf-8")] = np.frombuffer(payload, dtype="<f4").reshape(shape)
    return blobs, digest
