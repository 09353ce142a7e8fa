"""Frequency-bounded sinusoidal positional encodings.

Coordinates are lifted through sin/cos pairs at L frequencies 2^l * pi
with exponents spaced uniformly in [l_min, l_max].  The bounds come
from the dataset extent: location mode excludes frequencies that would
repeat inside the domain, shape mode adds octaves of headroom above the
same threshold to resolve fine boundary detail.  The rotation-invariant
variant feeds (x, y, r) instead of (x, y), so one third of the output
depends only on the radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import GeoEntity, GeometryError, dataset_bbox

__all__ = [
    "EncodingConfig",
    "SHAPE_HEADROOM_OCTAVES",
    "frequency_bounds",
    "pe",
    "pe_r",
    "encode",
]

# Octaves above the location cutoff used in shape mode; resolves features
# down to ~1/64 of the canonical extent.
SHAPE_HEADROOM_OCTAVES = 6.0


@dataclass(frozen=True)
class EncodingConfig:
    l_min: float
    l_max: float
    count: int  # frequencies per input component
    rotation_invariant: bool = False
    mode: str = "shape"

    def __post_init__(self):
        if self.l_max < self.l_min:
            raise ValueError("l_max must be >= l_min")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.mode not in ("shape", "location"):
            raise ValueError(f"unknown encoding mode {self.mode!r}")

    @property
    def components(self) -> int:
        return 3 if self.rotation_invariant else 2

    @property
    def width(self) -> int:
        return 2 * self.count * self.components

    def exponents(self) -> np.ndarray:
        if self.count == 1:
            return np.array([self.l_min])
        return np.linspace(self.l_min, self.l_max, self.count)


def frequency_bounds(entities, mode: str,
                     headroom: float = SHAPE_HEADROOM_OCTAVES) -> tuple[float, float]:
    """(l_min, l_max) from the dataset's vertex extrema.

    l_min = 1 - log2(max extent) for both modes.  l_max = log2(2 / min
    extent) for location (the repeated-frequency cutoff), plus
    `headroom` octaves for shape.  Accepts a Dataset or a sequence of
    entities.
    """
    if mode not in ("shape", "location"):
        raise ValueError(f"unknown encoding mode {mode!r}")
    if hasattr(entities, "entities"):
        entities = entities.entities
    box = dataset_bbox(entities)
    delta_min = min(box.width, box.height)
    delta_max = max(box.width, box.height)
    if delta_max == 0.0:
        raise GeometryError("frequency bounds undefined for a zero-extent dataset")
    if delta_min == 0.0:
        delta_min = delta_max  # degenerate 1-D extent: use the live axis
    l_min = 1.0 - math.log2(delta_max)
    l_max = math.log2(2.0 / delta_min)
    if mode == "shape":
        l_max += headroom
    return l_min, l_max


def pe(x, cfg: EncodingConfig) -> np.ndarray:
    """Sinusoidal features of each input component at every frequency.

    Input (..., D) maps to (..., 2 * count * D), ordered component-major
    with (sin, cos) adjacent per frequency.
    """
    arr = np.asarray(x, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[None, :]
    freqs = np.exp2(cfg.exponents()) * np.pi            # (L,)
    angles = arr[..., :, None] * freqs                  # (..., D, L)
    out = np.empty(angles.shape + (2,))
    np.sin(angles, out=out[..., 0])
    np.cos(angles, out=out[..., 1])
    flat = out.reshape(*arr.shape[:-1], arr.shape[-1] * cfg.count * 2)
    return flat[0] if squeeze else flat


def pe_r(x, cfg: EncodingConfig) -> np.ndarray:
    """pe applied to (x, y, r) with r = sqrt(x^2 + y^2).

    The r-derived third of the output is exactly rotation invariant.
    """
    arr = np.asarray(x, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[None, :]
    r = np.linalg.norm(arr, axis=-1, keepdims=True)
    out = pe(np.concatenate([arr, r], axis=-1), cfg)
    return out[0] if squeeze else out


def encode(x, cfg: EncodingConfig) -> np.ndarray:
    """Dispatch to pe_r or pe according to the config."""
    return pe_r(x, cfg) if cfg.rotation_invariant else pe(x, cfg)
