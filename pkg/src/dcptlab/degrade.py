"""Degradation families (JPEG, Gaussian blur, down/up resize) and the view sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ParameterError
from .image import check_image, to_uint8
from .jpeg import jpeg_roundtrip

JPEG = "jpeg"
BLUR = "blur"
RESIZE = "resize"
NONE = "none"

KINDS = (JPEG, BLUR, RESIZE)

# training-time grids
GRIDS = {
    JPEG: (30, 50, 70, 90),
    BLUR: (1.0, 2.0, 3.0),
    RESIZE: (0.25, 0.5, 0.75),
}


@dataclass(frozen=True)
class DegradationSpec:
    """One degradation: a kind plus its parameter (``None`` for the identity)."""

    kind: str = NONE
    param: float | int | None = None

    def __post_init__(self):
        if self.kind == NONE:
            if self.param is not None:
                raise ParameterError("the identity degradation takes no parameter")
        elif self.kind not in KINDS:
            raise ParameterError(f"unknown degradation kind {self.kind!r}")
        elif self.param is None:
            raise ParameterError(f"{self.kind} needs a parameter")

    @property
    def on_grid(self) -> bool:
        return self.kind == NONE or self.param in GRIDS[self.kind]

    @property
    def label(self) -> str:
        if self.kind == NONE:
            return "none"
        return f"{self.kind}:{self.param:g}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "param": self.param}


IDENTITY = DegradationSpec()


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps over ``[-ceil(3 sigma), ceil(3 sigma)]``."""
    if not sigma > 0:
        raise ParameterError(f"blur sigma must be positive, got {sigma}")
    r = int(math.ceil(3.0 * sigma))
    i = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(i * i) / (2.0 * sigma * sigma))
    return k / k.sum()


def _convolve_axis(x: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    r = len(k) // 2
    pad = [(0, 0)] * x.ndim
    pad[axis] = (r, r)
    padded = np.pad(x, pad, mode="edge")
    n = x.shape[axis]
    out = np.zeros(x.shape, dtype=np.float64)
    for j, w in enumerate(k):
        out += w * np.take(padded, np.arange(j, j + n), axis=axis)
    return out


def blur_float(x: np.ndarray, sigma: float) -> np.ndarray:
    """Separable edge-replicated blur over the first two axes, without rounding."""
    k = gaussian_kernel(sigma)
    x = np.asarray(x, dtype=np.float64)
    return _convolve_axis(_convolve_axis(x, k, 1), k, 0)


def gaussian_blur(img, sigma: float) -> np.ndarray:
    img = check_image(img)
    return to_uint8(blur_float(img, sigma))


def _cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    x = np.abs(x)
    near = ((a + 2) * x - (a + 3)) * x * x + 1
    far = ((a * x - 5 * a) * x + 8 * a) * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


@lru_cache(maxsize=None)
def _bicubic_matrix(n_in: int, n_out: int) -> np.ndarray:
    centres = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(centres).astype(np.int64)
    m = np.zeros((n_out, n_in))
    for off in (-1, 0, 1, 2):
        taps = base + off
        w = _cubic(centres - taps)
        np.add.at(m, (np.arange(n_out), np.clip(taps, 0, n_in - 1)), w)
    m /= m.sum(axis=1, keepdims=True)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=None)
def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    centres = np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0, n_in - 1)
    lo = np.floor(centres).astype(np.int64)
    t = centres - lo
    hi = np.minimum(lo + 1, n_in - 1)
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - t)
    np.add.at(m, (rows, hi), t)
    m.setflags(write=False)
    return m


def _resample(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    planes = np.moveaxis(img.astype(np.float64), 2, 0)
    return np.moveaxis(rows @ planes @ cols.T, 0, 2)


def resize_down_up(img, scale: float) -> np.ndarray:
    """Bicubic (Catmull-Rom) downsample by ``scale``, then bilinear back up.

    Both stages use pixel-centre alignment and no anti-alias prefilter; each
    stage is rounded and clamped to 8 bits.
    """
    img = check_image(img)
    if not 0 < scale <= 1:
        raise ParameterError(f"resize scale must be in (0, 1], got {scale}")
    h, w = img.shape[:2]
    sh, sw = int(math.floor(h * scale)), int(math.floor(w * scale))
    if sh < 4 or sw < 4:
        raise ParameterError(f"scale {scale} shrinks {w}x{h} below 4x4")
    small = to_uint8(_resample(img, _bicubic_matrix(h, sh), _bicubic_matrix(w, sw)))
    return to_uint8(_resample(small, _bilinear_matrix(sh, h), _bilinear_matrix(sw, w)))


def sample_degradation(rng: np.random.Generator, p_deg: float) -> DegradationSpec:
    """Draw a degradation: with probability ``p_deg`` a uniform kind and grid value."""
    if not 0.0 <= p_deg <= 1.0:
        raise ParameterError(f"p_deg must be a probability, got {p_deg}")
    if rng.random() >= p_deg:
        return IDENTITY
    kind = KINDS[rng.integers(len(KINDS))]
    grid = GRIDS[kind]
    return DegradationSpec(kind, grid[rng.integers(len(grid))])


def apply(spec: DegradationSpec, img) -> np.ndarray:
    if spec.kind == NONE:
        return check_image(img)
    if spec.kind == JPEG:
        return jpeg_roundtrip(img, spec.param)
    if spec.kind == BLUR:
        return gaussian_blur(img, spec.param)
    return resize_down_up(img, spec.param)
