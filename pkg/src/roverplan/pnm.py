"""Binary portable graymap (P5) and pixmap (P6) reading and writing.

Maxval is fixed at 255. Writers take uint8 arrays, (H, W) for P5 and
(H, W, 3) for P6. The reader exists mainly so tests can round-trip.
"""

from __future__ import annotations

import numpy as np


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"P5 image must be 2-D, got shape {img.shape}")
    _write(path, b"P5", img.astype(np.uint8, copy=False))


def write_ppm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"P6 image must be (H, W, 3), got shape {img.shape}")
    _write(path, b"P6", img.astype(np.uint8, copy=False))


def _write(path, magic: bytes, img: np.ndarray) -> None:
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img).tobytes())


def read_pnm(path) -> np.ndarray:
    """Read a binary P5 or P6 file written by this module."""
    with open(path, "rb") as f:
        data = f.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":  # comment line
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    pos += 1  # the single whitespace byte after maxval
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    if magic == b"P5":
        shape = (h, w)
    elif magic == b"P6":
        shape = (h, w, 3)
    else:
        raise ValueError(f"unsupported magic {magic!r}")
    n = int(np.prod(shape))
    raw = data[pos : pos + n]
    if len(raw) != n:
        raise ValueError(f"truncated pixel data: wanted {n} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(shape).copy()
