"""Binary checkpoint files.

Layout, little endian:

    magic        8 bytes, b"DBCK01\\n\\0"
    fingerprint  u64, hash of the architecture's canonical JSON
    count        u32, number of parameter records
    per record:  u32 name length, UTF-8 name, u32 rank, rank * u32 dims,
                 then the values as f32

Loading refuses files whose fingerprint differs from the expected one, so
weights cannot silently land in a different architecture.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .params import ParamStore

MAGIC = b"DBCK01\n\0"


class FingerprintError(ValueError):
    pass


def arch_fingerprint(arch_json: str) -> int:
    digest = hashlib.blake2b(arch_json.encode("utf-8"), digest_size=8).digest()
    return struct.unpack("<Q", digest)[0]


def save_checkpoint(path, store: ParamStore, fingerprint: int) -> None:
    parts = [MAGIC, struct.pack("<QI", fingerprint, len(store))]
    for name, t in store.items():
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        dims = arr.shape
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *dims))
        parts.append(arr.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_checkpoint(path, expected_fingerprint: int | None = None):
    """Read a checkpoint; returns (fingerprint, dict name -> float32 array)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 20 or blob[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    fingerprint, count = struct.unpack_from("<QI", blob, 8)
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        raise FingerprintError(
            f"{path}: checkpoint fingerprint {fingerprint:#018x} does not match "
            f"the requested architecture ({expected_fingerprint:#018x})"
        )
    pos = 20
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=pos)
            if arr.size != n:
                raise struct.error("short read")
            pos += 4 * n
        except struct.error as e:
            raise ValueError(f"{path}: truncated checkpoint ({e})") from e
        arrays[name] = arr.reshape(dims).copy()
    if pos != len(blob):
        raise ValueError(f"{path}: {len(blob) - pos} trailing bytes")
    return fingerprint, arrays
