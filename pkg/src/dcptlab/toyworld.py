"""Synthetic real/fake images and a parameter-free frozen feature extractor.

Real images are smooth random colour fields. Each fake is its paired real
image plus a faint near-Nyquist grating whose orientation identifies the
generator. The extractor measures per-frequency DCT energy, so it sees the
grating directly and loses it when a degradation removes high frequencies.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .degrade import blur_float
from .errors import FormatError, ParameterError
from .image import grayscale, read_ppm, to_uint8, write_ppm
from .jpeg import block_dct

REAL, FAKE = 0, 1

IMAGE_SIZE = 64
FEATURE_DIM = 64
NOISE_SIGMA = 2.0
REAL_MEAN = 128.0
REAL_STD = 40.0
FINGERPRINT_AMPLITUDE = 6.0
FINGERPRINT_RADIUS = 0.35  # cycles per pixel
DEFAULT_GENERATORS = 9

FEATURE_MAGIC = b"DCPTFEAT"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<8sIII")


@dataclass(frozen=True)
class ToySample:
    image: np.ndarray
    label: int
    generator_id: int


def generator_frequencies(n_generators: int) -> np.ndarray:
    """(G, 2) array of (fy, fx) grating frequencies in cycles per pixel.

    Orientations are spread over a quarter circle at a fixed radius; the DCT
    energy features cannot tell the sign of a frequency component apart, so
    the other quadrant would only produce duplicates.
    """
    if n_generators < 1:
        raise ParameterError(f"need at least one generator, got {n_generators}")
    angles = (np.arange(n_generators) + 0.5) * (np.pi / 2) / n_generators
    return FINGERPRINT_RADIUS * np.stack([np.sin(angles), np.cos(angles)], axis=1)


def fingerprint(shape: tuple[int, int], freq, phase: float) -> np.ndarray:
    h, w = shape
    yy, xx = np.indices((h, w), dtype=np.float64)
    fy, fx = freq
    return FINGERPRINT_AMPLITUDE * np.sin(2.0 * np.pi * (fy * yy + fx * xx) + phase)


def real_image(rng: np.random.Generator, size: int = IMAGE_SIZE) -> np.ndarray:
    noise = rng.standard_normal((size, size, 3))
    field = blur_float(noise, NOISE_SIGMA)
    field = (field - field.mean()) / field.std()
    return to_uint8(REAL_MEAN + REAL_STD * field)


def gen_dataset(seed: int, n_per_class: int, n_generators: int = DEFAULT_GENERATORS,
                size: int = IMAGE_SIZE) -> list[ToySample]:
    """Balanced list of real/fake pairs, interleaved (real i, fake i).

    Pair ``i`` shares ``generator_id = i % n_generators``; the fake is the real
    image plus that generator's grating at a random phase.
    """
    if n_per_class < 1:
        raise ParameterError(f"n_per_class must be >= 1, got {n_per_class}")
    if size < 16:
        raise ParameterError(f"image size must be >= 16, got {size}")
    freqs = generator_frequencies(n_generators)
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_per_class):
        gen = i % n_generators
        real = real_image(rng, size)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        fake = to_uint8(real + fingerprint((size, size), freqs[gen], phase)[:, :, None])
        samples.append(ToySample(real, REAL, gen))
        samples.append(ToySample(fake, FAKE, gen))
    return samples


def extract_features(img) -> np.ndarray:
    """log(1 + mean squared 8x8 DCT coefficient) per frequency bin, on luma.

    The image is cropped to whole blocks. Bins are ordered row-major by
    (vertical, horizontal) frequency, so index 0 is DC and 63 the highest.
    """
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] < 16 or img.shape[1] < 16:
        raise ParameterError(f"extractor needs an RGB image of at least 16x16, got {img.shape}")
    gray = grayscale(img)
    h, w = gray.shape
    coefs = block_dct(gray[: h - h % 8, : w - w % 8])
    energy = (coefs * coefs).reshape(-1, 64).mean(axis=0)
    return np.log1p(energy)


def extract_batch(images, extractor=extract_features) -> np.ndarray:
    return np.stack([extractor(img) for img in images])


def write_dataset(samples, out_dir) -> Path:
    """Write PPM images plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for i, s in enumerate(samples):
        name = f"img_{i:05d}.ppm"
        write_ppm(s.image, out / name)
        manifest.append({"path": name, "label": int(s.label), "generator_id": int(s.generator_id)})
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def load_dataset(data_dir) -> list[ToySample]:
    root = Path(data_dir)
    manifest_path = root / "manifest.json"
    try:
        entries = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: {exc}") from None
    if not isinstance(entries, list):
        raise FormatError(f"{manifest_path}: expected a JSON list")
    samples = []
    for entry in entries:
        try:
            path, label, gen = entry["path"], int(entry["label"]), int(entry["generator_id"])
        except (KeyError, TypeError, ValueError):
            raise FormatError(f"{manifest_path}: malformed entry {entry!r}") from None
        if label not in (REAL, FAKE):
            raise FormatError(f"{manifest_path}: label {label} not in {{0, 1}}")
        samples.append(ToySample(read_ppm(root / path), label, gen))
    return samples


def write_feature_cache(path, features, labels, generator_ids) -> None:
    feats = np.asarray(features, dtype="<f8")
    n, dim = feats.shape
    labels = np.asarray(labels, dtype=np.uint8)
    gens = np.asarray(generator_ids, dtype=np.uint8)
    if labels.shape != (n,) or gens.shape != (n,):
        raise ParameterError("labels and generator ids must have one entry per feature row")
    record = np.dtype([("label", "u1"), ("gen", "u1"), ("x", "<f8", (dim,))])
    rows = np.empty(n, dtype=record)
    rows["label"], rows["gen"], rows["x"] = labels, gens, feats
    with open(path, "wb") as f:
        f.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, n, dim))
        f.write(rows.tobytes())


def read_feature_cache(path):
    """Return ``(features, labels, generator_ids)`` from a feature cache file."""
    with open(path, "rb") as f:
        buf = f.read()
    where = os.fspath(path)
    if len(buf) < _FEATURE_HEADER.size:
        raise FormatError(f"{where}: truncated header")
    magic, version, n, dim = _FEATURE_HEADER.unpack_from(buf)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{where}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FormatError(f"{where}: unsupported version {version}")
    record = np.dtype([("label", "u1"), ("gen", "u1"), ("x", "<f8", (dim,))])
    if len(buf) != _FEATURE_HEADER.size + n * record.itemsize:
        raise FormatError(f"{where}: size does not match {n} records of dim {dim}")
    rows = np.frombuffer(buf, dtype=record, offset=_FEATURE_HEADER.size)
    return rows["x"].astype(np.float64), rows["label"].astype(np.int64), rows["gen"].astype(np.int64)
