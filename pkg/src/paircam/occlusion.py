"""Occlusion-based importance maps for image pairs.

Conditional Occlusion slides a square window over one image while the other
stays fully observed and records the similarity drop per window. Pairwise
Occlusion perturbs both images at once with randomly sized, placed and
shaped rectangles, turns the drops into a softmax importance distribution,
and assigns each sample's weight to the rectangle whose perturbed image lost
the most feature energy (lowest feature norm).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import SimilarityModel
from .saliency import postprocess_map
from .types import ExplanationPair, ImagePair

Rect = tuple[int, int, int, int]  # top, left, height, width


@dataclass
class OcclusionConfig:
    mask_size: int = 64
    stride: int = 8
    fill: str = "mean_pixel"  # or "zero"
    fill_value: Optional[np.ndarray] = None  # explicit per-channel fill, overrides `fill`
    n_masks: int = 100
    scale_range: tuple[float, float] = (0.10, 0.30)
    aspect_range: tuple[float, float] = (0.5, 2.0)
    temperature: float = 1.0
    softmax_over: str = "drops"  # or "scores"
    norm_source: str = "pooled"  # or "spatial"
    seed: int = 0
    batch_size: int = 128

    def __post_init__(self):
        lo, hi = self.scale_range
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi < 1, got {self.scale_range}")
        alo, ahi = self.aspect_range
        if not 0.0 < alo <= ahi:
            raise ValueError(f"invalid aspect_range {self.aspect_range}")
        if self.stride < 1:
            raise ValueError("stride must be at least 1")
        if self.mask_size < 1:
            raise ValueError("mask_size must be at least 1")
        if self.n_masks < 1:
            raise ValueError("n_masks must be at least 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.softmax_over not in ("drops", "scores"):
            raise ValueError(f"softmax_over must be 'drops' or 'scores', got {self.softmax_over!r}")


@dataclass
class MaskSample:
    rect1: Rect
    rect2: Rect


def _fill_color(config: OcclusionConfig, pair: ImagePair) -> np.ndarray:
    if config.fill_value is not None:
        return np.asarray(config.fill_value, dtype=np.float32).reshape(3)
    if config.fill == "zero":
        return np.zeros(3, dtype=np.float32)
    # gray occluder: per-channel mean over the pair when no corpus mean is given
    both = np.stack([pair.first, pair.second])
    return both.mean(axis=(0, 2, 3)).astype(np.float32)


def _occlude(image: np.ndarray, rect: Rect, fill: np.ndarray) -> np.ndarray:
    top, left, h, w = rect
    out = image.copy()
    out[:, top : top + h, left : left + w] = fill[:, None, None]
    return out


def conditional_occlusion(
    model: SimilarityModel, pair: ImagePair, config: OcclusionConfig
) -> ExplanationPair:
    """Sliding-window similarity drops, each direction conditioned on the
    other image being fully observed. Overlapping windows are averaged."""
    H, W = pair.spatial_shape
    m = config.mask_size
    if m > min(H, W):
        raise ValueError(f"mask_size {m} larger than image {H}x{W}")
    fill = _fill_color(config, pair)
    s = model.pair_similarity(pair)
    tops = range(0, H - m + 1, config.stride)
    lefts = range(0, W - m + 1, config.stride)
    rects: list[Rect] = [(t, l, m, m) for t in tops for l in lefts]

    maps = []
    for target, other, swap in ((pair.first, pair.second, False), (pair.second, pair.first, True)):
        acc = np.zeros((H, W), dtype=np.float64)
        cover = np.zeros((H, W), dtype=np.int64)
        for start in range(0, len(rects), config.batch_size):
            chunk = rects[start : start + config.batch_size]
            batch = np.stack([_occlude(target, r, fill) for r in chunk])
            other_batch = np.broadcast_to(other, batch.shape)
            if swap:
                scores = model.pair_scores(other_batch, batch)
            else:
                scores = model.pair_scores(batch, other_batch)
            for rect, score in zip(chunk, scores):
                t, l, h, w = rect
                acc[t : t + h, l : l + w] += s - score
                cover[t : t + h, l : l + w] += 1
        maps.append((acc / np.maximum(cover, 1)).astype(np.float32))

    return ExplanationPair(
        map1=maps[0],
        map2=maps[1],
        method="cond-occlusion",
        options={"mask_size": m, "stride": config.stride, "baseline": s, "n_windows": len(rects)},
        normalization="raw",
    )


def sample_occlusion_mask(
    H: int,
    W: int,
    scale_range: tuple[float, float],
    aspect_range: tuple[float, float],
    rng: np.random.Generator,
    max_tries: int = 100,
) -> Rect:
    """Rectangle with area fraction and aspect ratio (height/width) uniform
    in their ranges and position uniform among in-bounds placements."""
    for _ in range(max_tries):
        frac = rng.uniform(*scale_range)
        aspect = rng.uniform(*aspect_range)
        area = frac * H * W
        h = int(round(np.sqrt(area * aspect)))
        w = int(round(np.sqrt(area / aspect)))
        h, w = max(h, 1), max(w, 1)
        if h > H or w > W:
            continue
        top = int(rng.integers(0, H - h + 1))
        left = int(rng.integers(0, W - w + 1))
        return (top, left, h, w)
    raise ValueError(
        f"could not sample a feasible rectangle for {H}x{W} with scale {scale_range} "
        f"and aspect {aspect_range} after {max_tries} tries"
    )


@dataclass
class PairwiseOcclusionDetails:
    samples: list[MaskSample]
    scores: np.ndarray
    weights: np.ndarray
    assigned_to_first: np.ndarray  # bool per sample
    baseline: float


def pairwise_occlusion(
    model: SimilarityModel,
    pair: ImagePair,
    config: OcclusionConfig,
    return_details: bool = False,
):
    """Simultaneous random rectangle perturbations of both images.

    The softmax over similarity drops (scores, if configured) forms an
    importance distribution; each sample's weight lands on the rectangle of
    the image whose perturbed features have the smaller L2 norm. Maps are
    coverage-averaged and min-max normalized.
    """
    H, W = pair.spatial_shape
    fill = _fill_color(config, pair)
    rng = np.random.default_rng(config.seed)
    samples = [
        MaskSample(
            rect1=sample_occlusion_mask(H, W, config.scale_range, config.aspect_range, rng),
            rect2=sample_occlusion_mask(H, W, config.scale_range, config.aspect_range, rng),
        )
        for _ in range(config.n_masks)
    ]
    s = model.pair_similarity(pair)

    scores = np.empty(config.n_masks, dtype=np.float64)
    norm1 = np.empty(config.n_masks, dtype=np.float64)
    norm2 = np.empty(config.n_masks, dtype=np.float64)
    for start in range(0, config.n_masks, config.batch_size):
        chunk = samples[start : start + config.batch_size]
        batch1 = np.stack([_occlude(pair.first, ms.rect1, fill) for ms in chunk])
        batch2 = np.stack([_occlude(pair.second, ms.rect2, fill) for ms in chunk])
        stop = start + len(chunk)
        scores[start:stop] = model.pair_scores(batch1, batch2)
        norm1[start:stop] = model.feature_norms(batch1, config.norm_source)
        norm2[start:stop] = model.feature_norms(batch2, config.norm_source)

    if config.softmax_over == "drops":
        logits = (s - scores) / config.temperature
    else:
        logits = scores / config.temperature
    logits -= logits.max()
    weights = np.exp(logits)
    weights /= weights.sum()
    assigned_to_first = norm1 <= norm2

    acc = [np.zeros((H, W), dtype=np.float64) for _ in range(2)]
    cover = [np.zeros((H, W), dtype=np.int64) for _ in range(2)]
    for ms, weight, to_first in zip(samples, weights, assigned_to_first):
        idx = 0 if to_first else 1
        t, l, h, w = ms.rect1 if to_first else ms.rect2
        acc[idx][t : t + h, l : l + w] += weight
        cover[idx][t : t + h, l : l + w] += 1
    raw = [a / np.maximum(c, 1) for a, c in zip(acc, cover)]

    expl = ExplanationPair(
        map1=postprocess_map(raw[0], "minmax"),
        map2=postprocess_map(raw[1], "minmax"),
        method="pairwise-occlusion",
        options={
            "n_masks": config.n_masks,
            "scale_range": list(config.scale_range),
            "temperature": config.temperature,
            "softmax_over": config.softmax_over,
            "seed": config.seed,
        },
        normalization="minmax",
    )
    if return_details:
        return expl, PairwiseOcclusionDetails(
            samples=samples,
            scores=scores,
            weights=weights,
            assigned_to_first=assigned_to_first,
            baseline=s,
        )
    return expl
