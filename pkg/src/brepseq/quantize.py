"""Uniform scalar quantization of bounding-box coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRange, NonFiniteInput


@dataclass(frozen=True)
class QuantConfig:
    L: int = 2048

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"L must be an integer >= 2, got {self.L}")

    @property
    def step(self) -> float:
        return 2.0 / (self.L - 1)


DEFAULT = QuantConfig()


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_coord(b, cfg: QuantConfig = DEFAULT):
    """Map coordinates in [-1, 1] to integer levels ``0 .. L-1``.

    Inputs outside the range are clipped. Works elementwise on arrays; a scalar
    in gives a Python int out.
    """
    arr = np.asarray(b, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("cannot quantize NaN or inf")
    unit = np.clip((arr + 1.0) / 2.0, 0.0, 1.0)
    k = _round_half_away((cfg.L - 1) * unit).astype(np.int64)
    return int(k) if k.ndim == 0 else k


def dequantize_coord(k, cfg: QuantConfig = DEFAULT):
    arr = np.asarray(k)
    if arr.dtype.kind not in "iu":
        if not np.all(arr == np.round(arr)):
            raise IndexOutOfRange("quantization levels must be integers")
        arr = arr.astype(np.int64)
    if np.any(arr < 0) or np.any(arr > cfg.L - 1):
        raise IndexOutOfRange(f"level outside [0, {cfg.L - 1}]")
    b = 2.0 * arr / (cfg.L - 1) - 1.0
    return float(b) if np.ndim(b) == 0 else b


def tokenize_bbox(bbox, cfg: QuantConfig = DEFAULT) -> np.ndarray:
    bbox = np.asarray(bbox, dtype=np.float64)
    if bbox.shape != (6,):
        raise ValueError(f"bbox must have 6 values, got shape {bbox.shape}")
    return quantize_coord(bbox, cfg)


def detokenize_bbox(tokens, cfg: QuantConfig = DEFAULT) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.shape != (6,):
        raise ValueError(f"expected 6 position levels, got shape {tokens.shape}")
    b = dequantize_coord(tokens, cfg)
    lo, hi = np.minimum(b[:3], b[3:]), np.maximum(b[:3], b[3:])
    return np.concatenate([lo, hi])
