"""Class activation maps from the GAP + linear head.

The map for class c is the head-weighted sum of the last block's feature
maps, upsampled bilinearly to the input patch size and min-max normalized to
[0, 1] (an exactly constant map normalizes to all zeros).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError
from ..imaging import bilinear_resize
from .model import TinyResNet


@dataclass(frozen=True)
class Heatmap:
    """Float raster normalized to [0, 1], same size as the source patch."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InvalidInputError(f"heatmap must be 2-D, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def peak(self) -> tuple[int, int]:
        """(x, y) of the maximum value; first occurrence in row-major order."""
        flat = int(np.argmax(self.values))
        return flat % self.width, flat // self.width

    def to_u8(self) -> np.ndarray:
        return np.floor(self.values * 255.0 + 0.5).astype(np.uint8)


def class_activation_map(
    features: np.ndarray, head_weights: np.ndarray, out_h: int, out_w: int
) -> Heatmap:
    """Weighted feature-map sum -> bilinear upsample -> min-max normalize."""
    raw = np.einsum("k,khw->hw", head_weights, features)
    up = bilinear_resize(raw, out_h, out_w)
    lo, hi = up.min(), up.max()
    if hi == lo:
        return Heatmap(np.zeros((out_h, out_w)))
    return Heatmap((up - lo) / (hi - lo))


def cam(net: TinyResNet, patch, class_id: int = 1) -> Heatmap:
    """Activation map of `class_id` for one patch, at the patch's resolution."""
    values = patch.values if hasattr(patch, "values") else np.asarray(patch, dtype=np.float64)
    if values.ndim == 3:
        values = values[None]
    _, features = net.forward(values)
    h, w = values.shape[2], values.shape[3]
    return class_activation_map(features[0], net.head.w[class_id], h, w)
