"""Two-layer ReLU classifier head: features -> hidden -> 2 logits.

The forward pass returns the hidden activations alongside the logits so a
consistency loss can attach to either. ``head_backward`` accepts upstream
gradients at both points at once.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError, ParameterError

PARAM_NAMES = ("W1", "b1", "W2", "b2")
N_CLASSES = 2

CHECKPOINT_MAGIC = b"DCPTHEAD"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sIII")


@dataclass(frozen=True)
class HeadParams:
    W1: np.ndarray  # (D, H)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (H, 2)
    b2: np.ndarray  # (2,)

    def __post_init__(self):
        d, h = np.shape(self.W1)
        if np.shape(self.b1) != (h,) or np.shape(self.W2) != (h, N_CLASSES) or np.shape(self.b2) != (N_CLASSES,):
            raise ContractError(
                f"inconsistent head shapes W1={np.shape(self.W1)} b1={np.shape(self.b1)} "
                f"W2={np.shape(self.W2)} b2={np.shape(self.b2)}"
            )

    @property
    def dim(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def from_dict(cls, arrays: dict) -> "HeadParams":
        return cls(**{name: np.asarray(arrays[name], dtype=np.float64) for name in PARAM_NAMES})

    @classmethod
    def zeros(cls, dim: int, hidden: int) -> "HeadParams":
        return cls(np.zeros((dim, hidden)), np.zeros(hidden), np.zeros((hidden, N_CLASSES)), np.zeros(N_CLASSES))

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(getattr(self, n)) for n in PARAM_NAMES])

    def unflat(self, vec) -> "HeadParams":
        """Rebuild parameters of this shape from a flat vector (order W1, b1, W2, b2)."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (param_count(self),):
            raise ContractError(f"expected {param_count(self)} values, got {vec.shape}")
        out, pos = {}, 0
        for name in PARAM_NAMES:
            shape = getattr(self, name).shape
            size = int(np.prod(shape))
            out[name] = vec[pos : pos + size].reshape(shape)
            pos += size
        return HeadParams(**out)

    def equals(self, other: "HeadParams") -> bool:
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in PARAM_NAMES)


def param_count(params: HeadParams) -> int:
    return int(sum(np.size(getattr(params, n)) for n in PARAM_NAMES))


def param_count_for(dim: int, hidden: int) -> int:
    return dim * hidden + hidden + hidden * N_CLASSES + N_CLASSES


def init(rng: np.random.Generator, dim: int, hidden: int) -> HeadParams:
    """Glorot-uniform weights and zero biases."""
    if dim < 1 or hidden < 1:
        raise ParameterError(f"head sizes must be >= 1, got D={dim} H={hidden}")
    lim1 = np.sqrt(6.0 / (dim + hidden))
    lim2 = np.sqrt(6.0 / (hidden + N_CLASSES))
    w1 = rng.uniform(-lim1, lim1, size=(dim, hidden))
    w2 = rng.uniform(-lim2, lim2, size=(hidden, N_CLASSES))
    return HeadParams(w1, np.zeros(hidden), w2, np.zeros(N_CLASSES))


def _check_feat(params: HeadParams, feat) -> np.ndarray:
    x = np.asarray(feat, dtype=np.float64)
    if x.shape[-1:] != (params.dim,) or x.ndim not in (1, 2):
        raise ContractError(f"features of shape {x.shape} do not match head input dim {params.dim}")
    return x


def head_forward(params: HeadParams, feat):
    """Return ``(hidden, logits)`` for one feature vector or a batch of rows."""
    x = _check_feat(params, feat)
    hidden = np.maximum(x @ params.W1 + params.b1, 0.0)
    logits = hidden @ params.W2 + params.b2
    return hidden, logits


def head_backward(params: HeadParams, feat, d_hidden=None, d_logits=None):
    """Chain rule through ``head_forward``.

    Args:
        params: head parameters used in the forward pass.
        feat: the input features (1-D or batch).
        d_hidden: upstream gradient at the hidden activations, or None.
        d_logits: upstream gradient at the logits, or None.

    Returns:
        ``(grads, d_feat)`` where ``grads`` is a HeadParams holding parameter
        gradients summed over the batch.
    """
    x = _check_feat(params, feat)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    n, hsize = x2.shape[0], params.hidden
    pre = x2 @ params.W1 + params.b1
    hidden = np.maximum(pre, 0.0)

    dh = np.zeros((n, hsize))
    dz = np.zeros((n, N_CLASSES))
    if d_logits is not None:
        dz = np.asarray(d_logits, dtype=np.float64).reshape(-1, N_CLASSES)
        if dz.shape[0] != n:
            raise ContractError(f"d_logits has {dz.shape[0]} rows for {n} samples")
        dh = dh + dz @ params.W2.T
    if d_hidden is not None:
        extra = np.asarray(d_hidden, dtype=np.float64).reshape(-1, hsize)
        if extra.shape[0] != n:
            raise ContractError(f"d_hidden has {extra.shape[0]} rows for {n} samples")
        dh = dh + extra

    dpre = dh * (pre > 0)
    grads = HeadParams(
        W1=x2.T @ dpre,
        b1=dpre.sum(axis=0),
        W2=hidden.T @ dz,
        b2=dz.sum(axis=0),
    )
    d_feat = dpre @ params.W1.T
    return grads, (d_feat[0] if single else d_feat)


def encode_checkpoint(params: HeadParams) -> bytes:
    parts = [_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, params.dim, params.hidden)]
    for name in PARAM_NAMES:
        parts.append(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> HeadParams:
    if len(buf) < _HEADER.size:
        raise FormatError("checkpoint truncated in header")
    magic, version, dim, hidden = _HEADER.unpack_from(buf)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    expected = _HEADER.size + 8 * param_count_for(dim, hidden)
    if len(buf) != expected:
        raise FormatError(f"checkpoint size {len(buf)} != expected {expected} for D={dim} H={hidden}")
    values = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    return HeadParams.zeros(dim, hidden).unflat(values)


def save_checkpoint(params: HeadParams, path) -> None:
    with open(path, "wb") as f:
        f.write(encode_checkpoint(params))


def load_checkpoint(path) -> HeadParams:
    with open(path, "rb") as f:
        buf = f.read()
    try:
        return decode_checkpoint(buf)
    except FormatError as exc:
        raise FormatError(f"{os.fspath(path)}: {exc}") from None
