"""RGB raster helpers and binary PPM (P6) I/O.

Images are plain ``numpy.uint8`` arrays of shape ``(height, width, 3)``.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import FormatError, ParameterError

MIN_SIDE = 8


def check_image(img, min_side: int = MIN_SIDE) -> np.ndarray:
    """Validate an RGB raster and return it as a uint8 array."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ParameterError(f"expected (height, width, 3) image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise ParameterError(f"expected uint8 image, got {arr.dtype}")
    h, w = arr.shape[:2]
    if h < min_side or w < min_side:
        raise ParameterError(f"image {w}x{h} smaller than {min_side}x{min_side}")
    return arr


def round_half_away(x):
    """Round to the nearest integer, ties away from zero (numpy rounds ties to even)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_uint8(x) -> np.ndarray:
    """Round half away from zero and clamp into [0, 255]."""
    return np.clip(round_half_away(x), 0, 255).astype(np.uint8)


def constant_image(height: int, width: int, value=128) -> np.ndarray:
    img = np.empty((height, width, 3), dtype=np.uint8)
    img[...] = value
    return img


def checkerboard(height: int, width: int, low: int = 0, high: int = 255) -> np.ndarray:
    """Single-pixel checkerboard, i.e. the Nyquist pattern in both axes."""
    yy, xx = np.indices((height, width))
    plane = np.where((yy + xx) % 2 == 0, high, low).astype(np.uint8)
    return np.repeat(plane[:, :, None], 3, axis=2)


def grayscale(img) -> np.ndarray:
    """BT.601 luma as float64."""
    x = np.asarray(img, dtype=np.float64)
    return 0.299 * x[..., 0] + 0.587 * x[..., 1] + 0.114 * x[..., 2]


def mse(a, b) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(d * d))


def psnr(a, b) -> float:
    err = mse(a, b)
    if err == 0:
        return float("inf")
    return 10.0 * np.log10(255.0 ** 2 / err)


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of PPM header")
    return buf[start:pos], pos


def decode_ppm(buf: bytes) -> np.ndarray:
    """Parse a binary P6 image with maxval 255."""
    magic, pos = _read_token(buf, 0)
    if magic != b"P6":
        raise FormatError(f"not a binary PPM (magic {magic!r})")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"bad PPM header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    size = width * height * 3
    data = buf[pos : pos + size]
    if len(data) != size:
        raise FormatError(f"PPM raster truncated: expected {size} bytes, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3).copy()


def encode_ppm(img) -> bytes:
    arr = check_image(img, min_side=1)
    h, w = arr.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr).tobytes()


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    try:
        return decode_ppm(buf)
    except FormatError as exc:
        raise FormatError(f"{os.fspath(path)}: {exc}") from None


def write_ppm(img, path) -> None:
    data = encode_ppm(img)
    with open(path, "wb") as f:
        f.write(data)
