"""Shared data carriers: image pairs and paired explanation maps.

Images are numpy float32 arrays of shape (3, H, W) with values in [0, 1].
Explanation maps are float32 arrays of shape (H, W) aligned with the image
they explain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputShapeError, NumericError


def validate_image(image: np.ndarray, name: str = "image") -> np.ndarray:
    """Check the (3, H, W) range/shape contract and return a float32 view."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise InputShapeError(f"{name}: expected shape (3, H, W), got {arr.shape}")
    if arr.shape[1] < 16 or arr.shape[2] < 16:
        raise InputShapeError(f"{name}: spatial size must be at least 16, got {arr.shape[1:]}")
    if not np.isfinite(arr).all():
        raise NumericError(f"{name}: contains non-finite values")
    return arr.astype(np.float32, copy=False)


@dataclass
class ImagePair:
    """Two same-shape images plus a record of how they were produced."""

    first: np.ndarray
    second: np.ndarray
    augmentation: Optional[dict] = None

    def __post_init__(self):
        self.first = validate_image(self.first, "first")
        self.second = validate_image(self.second, "second")
        if self.first.shape != self.second.shape:
            raise InputShapeError(
                f"pair images must share a shape, got {self.first.shape} vs {self.second.shape}"
            )

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.first.shape[1], self.first.shape[2]


@dataclass
class ExplanationPair:
    """Spatial importance maps for both images of a pair.

    ``normalization`` records what the values mean: ``"raw"`` maps keep the
    signed method output, ``"minmax"`` maps are scaled into [0, 1].
    """

    map1: np.ndarray
    map2: np.ndarray
    method: str
    options: dict = field(default_factory=dict)
    normalization: str = "raw"

    def __post_init__(self):
        self.map1 = np.asarray(self.map1, dtype=np.float32)
        self.map2 = np.asarray(self.map2, dtype=np.float32)
        for name, m in (("map1", self.map1), ("map2", self.map2)):
            if m.ndim != 2:
                raise InputShapeError(f"{name}: expected shape (H, W), got {m.shape}")
            if not np.isfinite(m).all():
                raise NumericError(f"{name}: contains non-finite values")
        if self.map1.shape != self.map2.shape:
            raise InputShapeError(
                f"maps must share a shape, got {self.map1.shape} vs {self.map2.shape}"
            )
        if self.normalization not in ("raw", "minmax"):
            raise ValueError(f"unknown normalization {self.normalization!r}")

    def maps(self) -> tuple[np.ndarray, np.ndarray]:
        return self.map1, self.map2
