"""Plain file formats: binary PGM (P5) images and whitespace text matrices."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .exceptions import InvalidInputError


def _pgm_tokens(data: bytes, count: int):
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    """Load an 8- or 16-bit binary PGM as a float64 array of raw grey levels."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise InvalidInputError(f"{path}: not a binary PGM (P5) file")
    try:
        (width, height, maxval), offset = _pgm_tokens(data, 3)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: malformed PGM header") from exc
    if not 0 < maxval < 65536:
        raise InvalidInputError(f"{path}: invalid maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = width * height
    if len(data) - offset < n * dtype.itemsize:
        raise InvalidInputError(f"{path}: truncated raster")
    raster = np.frombuffer(data, dtype=dtype, count=n, offset=offset)
    return raster.reshape(height, width).astype(np.float64)


def write_pgm(path, image, maxval: int | None = None) -> None:
    """Write ``image`` (rounded, clipped) as binary PGM.

    ``maxval`` defaults to 255 when the data fits in 8 bits and 65535 otherwise.
    """
    arr = np.rint(np.asarray(image, dtype=np.float64))
    if maxval is None:
        maxval = 255 if arr.max(initial=0) <= 255 else 65535
    arr = np.clip(arr, 0, maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(arr.astype(dtype).tobytes())


def read_matrix(path) -> np.ndarray:
    arr = np.loadtxt(path, dtype=np.float64, ndmin=2)
    return arr


def write_matrix(path, matrix) -> None:
    np.savetxt(path, np.asarray(matrix, dtype=np.float64), fmt="%.17g")
