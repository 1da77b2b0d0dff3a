"""On-disk formats: SPT1 binary tensors, CSV, and PNM images.

SPT1 layout (all integers little-endian):

    bytes 0..3   magic "SPT1"
    u32          rank
    u32 * rank   extents
    f64 * n      row-major payload

CSV exports use 17 significant digits so float64 values round-trip.
Masks export as PBM (P1, 1 = kept connection) and grayscale images as
binary PGM (P5, 8-bit).  PNM comment lines carry provenance digests.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SPT1"


def save_tensor(path, array) -> None:
    arr = np.ascontiguousarray(getattr(array, "data", array), dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype("<f8").tobytes())


def load_tensor(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not an SPT1 tensor (magic {blob[:4]!r})")
    (rank,) = struct.unpack_from("<I", blob, 4)
    shape = struct.unpack_from(f"<{rank}I", blob, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(shape)) if rank else 1
    payload = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
    if payload.size != count:
        raise ValueError(f"{path}: truncated payload")
    return payload.astype(np.float64).reshape(shape)


def save_csv(path, array, comment: str | None = None) -> None:
    """Row-major CSV; rank > 2 flattens trailing axes into columns."""
    arr = np.asarray(getattr(array, "data", array), dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    else:
        arr = arr.reshape(arr.shape[0], -1)
    lines = []
    if comment:
        lines.append(f"# {comment}")
    for row in arr:
        lines.append(",".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def save_pbm(path, bits, comment: str | None = None) -> None:
    arr = np.asarray(getattr(bits, "bits", bits), dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"PBM expects a 2-D bit matrix, got shape {arr.shape}")
    h, w = arr.shape
    head = f"P1\n# {comment}\n" if comment else "P1\n"
    body = "\n".join(" ".join(str(int(v)) for v in row) for row in arr)
    Path(path).write_text(f"{head}{w} {h}\n{body}\n")


def save_pgm(path, image, comment: str | None = None) -> None:
    """8-bit binary PGM; input values are clipped to [0, 1]."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"PGM expects a 2-D image, got shape {arr.shape}")
    quant = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = arr.shape
    head = f"P5\n# {comment}\n" if comment else "P5\n"
    with open(path, "wb") as fh:
        fh.write(head.encode("ascii"))
        fh.write(f"{w} {h}\n255\n".encode("ascii"))
        fh.write(quant.tobytes())


def load_pgm(path) -> np.ndarray:
    """Read a binary 8-bit PGM back to floats in [0, 1]."""
    blob = Path(path).read_bytes()
    if not blob.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).astype(np.float64) / float(maxval)
