"""Pixel-level attribution for image pairs.

All methods explain the cosine similarity score of the pair: maps are the
channel-summed Hadamard product of each image with its (possibly averaged)
score gradient. Raw maps keep their sign; ranking for metrics uses the
absolute min-max normalization from :func:`postprocess_map`.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
import scipy.ndimage as ndi

from .errors import NumericError
from .model import SimilarityModel
from .transforms import (
    apply_transform,
    interpolation_schedule,
    inverse_warp,
    is_geometric,
    make_strength_schedule,
    strength_range,
)
from .types import ExplanationPair, ImagePair


def postprocess_map(
    map_values: np.ndarray, mode: str = "minmax", blur_sigma: float | None = None
) -> np.ndarray:
    """Normalize a raw map into [0, 1]; constant maps become all zeros.

    ``abs_minmax`` takes absolute values first; an optional Gaussian blur is
    applied before normalization.
    """
    m = np.asarray(map_values, dtype=np.float32)
    if not np.isfinite(m).all():
        raise NumericError("postprocess_map: non-finite input")
    if mode not in ("minmax", "abs_minmax"):
        raise ValueError(f"unknown postprocess mode {mode!r}")
    if blur_sigma:
        m = ndi.gaussian_filter(m, sigma=blur_sigma, mode="reflect")
    if mode == "abs_minmax":
        m = np.abs(m)
    lo, hi = float(m.min()), float(m.max())
    if hi - lo == 0.0:
        return np.zeros_like(m)
    return ((m - lo) / (hi - lo)).astype(np.float32)


@contextmanager
def backprop_mode(model: SimilarityModel, mode: str):
    """Temporarily switch the model's backprop mode."""
    previous = model.backprop_mode
    if mode != previous:
        model.set_backprop_mode(mode)
    try:
        yield model
    finally:
        if model.backprop_mode != previous:
            model.set_backprop_mode(previous)


def _channel_sum(image: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return (image * grad).sum(axis=0).astype(np.float32)


def input_x_gradient(model: SimilarityModel, pair: ImagePair) -> ExplanationPair:
    """Hadamard product of each image with its similarity gradient."""
    g1, g2 = model.input_gradients(pair)
    return ExplanationPair(
        map1=_channel_sum(pair.first, g1),
        map2=_channel_sum(pair.second, g2),
        method="input-x-grad",
        options={"backprop": model.backprop_mode},
        normalization="raw",
    )


def _noise_sigma(image: np.ndarray, noise_sigma: float | None) -> float:
    if noise_sigma is not None:
        return float(noise_sigma)
    return 0.1 * float(image.max() - image.min())


def smooth_grad(
    model: SimilarityModel,
    pair: ImagePair,
    n_samples: int = 25,
    noise_sigma: float | None = None,
    seed: int = 0,
) -> ExplanationPair:
    """Average of Input x Grad maps over Gaussian-noised replicas of the pair."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    sigma1 = _noise_sigma(pair.first, noise_sigma)
    sigma2 = _noise_sigma(pair.second, noise_sigma)
    rng = np.random.default_rng(seed)
    n = n_samples
    noisy1 = pair.first[None] + sigma1 * rng.standard_normal(
        (n, *pair.first.shape), dtype=np.float32
    )
    noisy2 = pair.second[None] + sigma2 * rng.standard_normal(
        (n, *pair.second.shape), dtype=np.float32
    )
    g1, g2 = model.batch_input_gradients(noisy1, noisy2)
    map1 = (noisy1 * g1).sum(axis=1).mean(axis=0)
    map2 = (noisy2 * g2).sum(axis=1).mean(axis=0)
    return ExplanationPair(
        map1=map1,
        map2=map2,
        method="smooth-grad",
        options={
            "n_samples": n_samples,
            "noise_sigma": noise_sigma,
            "seed": seed,
            "backprop": model.backprop_mode,
        },
        normalization="raw",
    )


def _frame_gradients(model, image1, frames, smooth, n_samples, noise_sigma, rng):
    """Per-frame (d s_z / d I1, d s_z / d frame_z), each of shape (Z, 3, H, W).

    With smoothing on, each frame's gradient is averaged over ``n_samples``
    noisy replicas first.
    """
    frames = np.stack(frames)
    n_frames = frames.shape[0]
    batch1 = np.broadcast_to(image1, (n_frames, *image1.shape)).copy()
    if not smooth:
        return model.batch_input_gradients(batch1, frames)
    sigma = _noise_sigma(image1, noise_sigma)
    rep1 = np.repeat(batch1, n_samples, axis=0)
    rep2 = np.repeat(frames, n_samples, axis=0)
    rep1 += sigma * rng.standard_normal(rep1.shape, dtype=np.float32)
    rep2 += sigma * rng.standard_normal(rep2.shape, dtype=np.float32)
    g1, g2 = model.batch_input_gradients(rep1, rep2)
    g1 = g1.reshape(n_frames, n_samples, *image1.shape).mean(axis=1)
    g2 = g2.reshape(n_frames, n_samples, *image1.shape).mean(axis=1)
    return g1, g2


def averaged_transforms(
    model: SimilarityModel,
    pair: ImagePair,
    kind: str,
    guided: bool = False,
    smooth: bool = False,
    n_samples: int = 25,
    noise_sigma: float | None = None,
    scheme: str = "interpolate",
    rho_step: float = 0.1,
    Z: int | None = None,
    blur_sigma: float | None = None,
    seed: int = 0,
) -> ExplanationPair:
    """Gradients averaged across transform strengths of the second image.

    The default scheme applies the kind at full strength to the second image
    and walks the affine interpolation from the first image to that endpoint
    (11 frames at the default rho step of 0.1). The ``direct`` scheme instead
    evaluates Z discrete strengths of the transform itself; gradients of
    geometrically transformed frames are inverse-warped onto the second
    image's coordinates before averaging. The optional final blur is off by
    default and should stay off when the maps feed evaluation metrics.
    """
    if scheme not in ("interpolate", "direct"):
        raise ValueError(f"unknown scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    mode = "guided" if guided else "standard"
    if scheme == "interpolate":
        max_strength = strength_range(kind)[1]
        image_z = apply_transform(pair.second, kind, max_strength)
        frames = interpolation_schedule(pair.first, image_z, rho_step).frames
        strengths = [max_strength] * len(frames)
    else:
        schedule = make_strength_schedule(kind, Z if Z is not None else 11)
        frames = [apply_transform(pair.second, kind, t) for t in schedule.strengths]
        strengths = schedule.strengths
    with backprop_mode(model, mode):
        g1, g2 = _frame_gradients(
            model, pair.first, frames, smooth, n_samples, noise_sigma, rng
        )
    mg1 = g1.mean(axis=0)
    if is_geometric(kind):
        # frames live in transformed coordinates; map gradients back onto I2's
        mg2 = np.mean(
            [inverse_warp(g2[i], kind, t) for i, t in enumerate(strengths)], axis=0
        )
    else:
        mg2 = g2.mean(axis=0)
    n_frames = len(frames)
    map1 = _channel_sum(pair.first, mg1)
    map2 = _channel_sum(pair.second, mg2)
    if blur_sigma:
        map1 = ndi.gaussian_filter(map1, blur_sigma, mode="reflect")
        map2 = ndi.gaussian_filter(map2, blur_sigma, mode="reflect")
    return ExplanationPair(
        map1=map1,
        map2=map2,
        method="avg-transforms",
        options={
            "kind": kind,
            "scheme": scheme,
            "n_frames": n_frames,
            "guided": guided,
            "smooth": smooth,
            "seed": seed,
        },
        normalization="raw",
    )
