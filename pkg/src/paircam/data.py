"""Procedural desk-scale image corpus: striped shapes on a shared background.

Every image in a corpus places one saturated, striped shape (disk, square or
triangle) at a random position over a background that is identical across
the corpus. The shared background carries no instance information, so a
contrastive model trained on the corpus has to embed images by their shape
region; the fine stripe pattern (2-4 px period) is destroyed by heavy
blurring, which gives insertion/deletion baselines real headroom. Everything
is fully determined by the generator seed. Generated corpora can be cached
under the directory named by the PAIRCAM_CACHE environment variable.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .transforms import resize_image

CACHE_ENV_VAR = "PAIRCAM_CACHE"


def make_background(side: int, seed: int) -> np.ndarray:
    """Low-frequency textured gray background, determined by the seed."""
    rng = np.random.default_rng([int(seed), 0xB6])
    lowres = rng.uniform(-1.0, 1.0, size=(3, 4, 4)).astype(np.float32)
    texture = resize_image(lowres, side, side) * 0.10
    return np.clip(0.45 + texture, 0.0, 1.0).astype(np.float32)


def _shape_mask(side: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float32)
    radius = rng.uniform(side * 0.18, side * 0.32)
    cy = rng.uniform(radius, side - radius)
    cx = rng.uniform(radius, side - radius)
    kind = rng.integers(0, 3)
    if kind == 0:  # disk
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    elif kind == 1:  # square
        mask = (np.abs(yy - cy) <= radius * 0.85) & (np.abs(xx - cx) <= radius * 0.85)
    else:  # upward triangle
        mask = (
            (yy >= cy - radius)
            & (yy <= cy + radius)
            & (np.abs(xx - cx) <= (yy - (cy - radius)) / 2.0)
        )
    return mask.astype(np.float32)


def _saturated_color(rng: np.random.Generator) -> np.ndarray:
    color = rng.uniform(0.0, 0.25, size=3).astype(np.float32)
    color[rng.integers(0, 3)] = rng.uniform(0.8, 1.0)
    return color


def place_shape(background: np.ndarray, rng: np.random.Generator, return_mask: bool = False):
    """Blend one striped shape over a copy of the background."""
    side = background.shape[-1]
    mask = _shape_mask(side, rng)
    theta = rng.uniform(0.0, np.pi)
    period = rng.uniform(2.0, 4.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float32)
    wave = np.sin(2.0 * np.pi * (np.cos(theta) * xx + np.sin(theta) * yy) / period + phase)
    stripes = (wave > 0).astype(np.float32)
    fill = _saturated_color(rng)[:, None, None] * stripes[None] + _saturated_color(rng)[
        :, None, None
    ] * (1.0 - stripes[None])
    out = background * (1.0 - 0.95 * mask[None]) + fill * (0.95 * mask[None])
    out = np.clip(out, 0.0, 1.0).astype(np.float32)
    if return_mask:
        return out, mask
    return out


def shape_image(side: int, rng: np.random.Generator, return_mask: bool = False):
    """One standalone image with its own background (for single-image tests)."""
    background = make_background(side, int(rng.integers(2**31)))
    return place_shape(background, rng, return_mask=return_mask)


def generate_corpus(n: int, side: int = 48, seed: int = 0) -> np.ndarray:
    """Seed-determined stack of n images sharing one background."""
    background = make_background(side, seed)
    rng = np.random.default_rng([int(seed), 0x5A9])
    return np.stack([place_shape(background, rng) for _ in range(n)])


def load_or_generate_corpus(n: int, side: int = 48, seed: int = 0) -> np.ndarray:
    """Like generate_corpus, with an optional on-disk cache via PAIRCAM_CACHE."""
    cache_dir = os.environ.get(CACHE_ENV_VAR)
    if not cache_dir:
        return generate_corpus(n, side, seed)
    path = Path(cache_dir) / f"corpus_n{n}_s{side}_seed{seed}.npy"
    if path.exists():
        return np.load(path)
    corpus = generate_corpus(n, side, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.save(fh, corpus)
    tmp.replace(path)
    return corpus
