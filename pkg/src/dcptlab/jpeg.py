"""Baseline sequential JPEG round trip (encode then decode) in numpy.

Entropy coding is lossless, so it is skipped: the round trip only needs the
lossy stages. Those are colour conversion, 4:2:0 chroma subsampling, the 8x8
DCT, quantization with IJG-scaled standard tables, and the inverse path.
The decoder upsamples chroma with the centred triangle filter that libjpeg
calls "fancy upsampling".
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ParameterError
from .image import check_image, round_half_away, to_uint8

# ITU-T T.81 Annex K, tables K.1 and K.2
LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)

CHROMA_TABLE = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.int64,
)


@lru_cache(maxsize=None)
def dct_matrix(n: int = 8) -> np.ndarray:
    """Orthonormal DCT-II matrix ``C`` so that ``C @ x`` transforms a column."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    c = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    c[0, :] = np.sqrt(1.0 / n)
    c.setflags(write=False)
    return c


def quality_scale(quality: int) -> int:
    """IJG percentage scaling applied to the base tables."""
    if not 1 <= quality <= 100:
        raise ParameterError(f"JPEG quality must be in 1..100, got {quality}")
    return 5000 // quality if quality < 50 else 200 - 2 * quality


@lru_cache(maxsize=None)
def _quant_tables(quality: int) -> tuple[np.ndarray, np.ndarray]:
    scale = quality_scale(quality)
    tables = []
    for base in (LUMA_TABLE, CHROMA_TABLE):
        t = np.clip((base * scale + 50) // 100, 1, 255).astype(np.float64)
        t.setflags(write=False)
        tables.append(t)
    return tables[0], tables[1]


def quant_tables(quality: int) -> tuple[np.ndarray, np.ndarray]:
    """Luminance and chrominance quantization tables for ``quality``."""
    return _quant_tables(int(quality))


def rgb_to_ycbcr(rgb) -> np.ndarray:
    """JFIF (BT.601 full range) conversion, rounded to integer sample values."""
    x = np.asarray(rgb, dtype=np.float64)
    r, g, b = x[..., 0], x[..., 1], x[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.clip(round_half_away(np.stack([y, cb, cr], axis=-1)), 0, 255)


def ycbcr_to_rgb(ycc) -> np.ndarray:
    x = np.asarray(ycc, dtype=np.float64)
    y, cb, cr = x[..., 0], x[..., 1] - 128.0, x[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return to_uint8(np.stack([r, g, b], axis=-1))


def _blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)


def _unblocks(blocks: np.ndarray) -> np.ndarray:
    bh, bw = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(bh * 8, bw * 8)


def block_dct(plane: np.ndarray) -> np.ndarray:
    """Forward 8x8 DCT of every block; returns ``(rows, cols, 8, 8)``."""
    c = dct_matrix(8)
    return c @ _blocks(plane) @ c.T


def block_idct(coefs: np.ndarray) -> np.ndarray:
    c = dct_matrix(8)
    return _unblocks(c.T @ coefs @ c)


def _code_plane(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    coefs = block_dct(plane - 128.0)
    dequant = round_half_away(coefs / table) * table
    return np.clip(round_half_away(block_idct(dequant) + 128.0), 0, 255)


def _downsample2(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    box = plane.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    return round_half_away(box)


def _upsample2_axis(plane: np.ndarray, axis: int) -> np.ndarray:
    # output 2i takes 3/4 of sample i and 1/4 of i-1; output 2i+1 uses i+1
    x = np.moveaxis(plane, axis, 0)
    prev = np.concatenate([x[:1], x[:-1]], axis=0)
    nxt = np.concatenate([x[1:], x[-1:]], axis=0)
    out = np.empty((2 * x.shape[0],) + x.shape[1:], dtype=np.float64)
    out[0::2] = 0.75 * x + 0.25 * prev
    out[1::2] = 0.75 * x + 0.25 * nxt
    return np.moveaxis(out, 0, axis)


def _upsample2(plane: np.ndarray) -> np.ndarray:
    return round_half_away(_upsample2_axis(_upsample2_axis(plane, 0), 1))


def jpeg_roundtrip(img, quality: int) -> np.ndarray:
    """Compress ``img`` at ``quality`` and decode it again.

    Args:
        img: ``(h, w, 3)`` uint8 image.
        quality: IJG quality factor, 1..100.

    Returns:
        The decoded image, same shape as the input.
    """
    img = check_image(img)
    if isinstance(quality, bool) or int(quality) != quality:
        raise ParameterError(f"JPEG quality must be an integer, got {quality!r}")
    quality = int(quality)
    luma_q, chroma_q = quant_tables(quality)

    h, w = img.shape[:2]
    ph, pw = -h % 16, -w % 16
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge")
    ycc = rgb_to_ycbcr(padded)

    y = _code_plane(ycc[..., 0], luma_q)
    cb = _upsample2(_code_plane(_downsample2(ycc[..., 1]), chroma_q))
    cr = _upsample2(_code_plane(_downsample2(ycc[..., 2]), chroma_q))

    out = ycbcr_to_rgb(np.stack([y, cb, cr], axis=-1))
    return out[:h, :w]
