"""Activation-space explanations for image pairs.

Operates on the activations A1, A2 of shape (K, w, h) at the model's
configured layer and the score gradients with respect to them. The baseline
weighs each image's activations by its own rectified point-wise gradients;
the interaction variant weighs channels by the joint activation of both
images and, optionally, the cross-image gradient interaction.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InputShapeError
from .model import SimilarityModel
from .types import ExplanationPair, ImagePair

REDUCTIONS = ("mean", "max", "attention")


def upsample_normalize(map_values: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear upsample to (H, W), then min-max into [0, 1] (constant -> zeros)."""
    m = np.asarray(map_values, dtype=np.float32)
    th, tw = target
    if th < m.shape[0] or tw < m.shape[1]:
        raise ValueError(f"target {target} smaller than source {m.shape}")
    if (th, tw) != m.shape:
        t = torch.from_numpy(m)[None, None]
        m = F.interpolate(t, size=(th, tw), mode="bilinear", align_corners=True)[0, 0].numpy()
    lo, hi = float(m.min()), float(m.max())
    if hi - lo == 0.0:
        return np.zeros_like(m)
    return ((m - lo) / (hi - lo)).astype(np.float32)


def joint_activation(A1: np.ndarray, A2: np.ndarray, reduction: str = "mean") -> np.ndarray:
    """Channel-wise product of spatially reduced activation vectors.

    The attention reduction pools each image with softmax weights from the
    scaled dot product between the spatial vectors and the average-pooled
    query vector.
    """
    if A1.shape != A2.shape:
        raise InputShapeError(f"activation shapes differ: {A1.shape} vs {A2.shape}")
    if reduction not in REDUCTIONS:
        raise ValueError(f"unknown reduction {reduction!r}")

    def reduce(a: np.ndarray) -> np.ndarray:
        k = a.shape[0]
        if reduction == "mean":
            return a.reshape(k, -1).mean(axis=1)
        if reduction == "max":
            return a.reshape(k, -1).max(axis=1)
        flat = a.reshape(k, -1).T.astype(np.float64)  # (w*h, K) keys/values
        query = flat.mean(axis=0)
        logits = flat @ query / np.sqrt(k)
        logits -= logits.max()
        weights = np.exp(logits)
        weights /= weights.sum()
        return (weights @ flat).astype(np.float32)

    return (reduce(A1) * reduce(A2)).astype(np.float32)


def gradient_interaction(grad1: np.ndarray, grad2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row/column maxima of the cross-image gradient inner-product matrix.

    G[k, l] is the inner product of channel k's gradient map on image 1 with
    channel l's on image 2; g1 takes row maxima, g2 column maxima.
    """
    if grad1.shape != grad2.shape:
        raise InputShapeError(f"gradient shapes differ: {grad1.shape} vs {grad2.shape}")
    k = grad1.shape[0]
    flat1 = grad1.reshape(k, -1)
    flat2 = grad2.reshape(k, -1)
    G = flat1 @ flat2.T
    return G.max(axis=1).astype(np.float32), G.max(axis=0).astype(np.float32)


def _weighted_sum(weights: np.ndarray, acts: np.ndarray) -> np.ndarray:
    return np.tensordot(weights, acts, axes=([0], [0])).astype(np.float32)


def grad_cam_map(acts: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """Point-wise rectified gradients against activations, summed over channels."""
    return (np.maximum(grads, 0.0) * acts).sum(axis=0)


def interaction_map(acts: np.ndarray, J: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Channels weighed by the rectified joint-activation/interaction product."""
    return _weighted_sum(np.maximum(J * g, 0.0), acts)


def deep_similarity_map(acts: np.ndarray, other_pooled: np.ndarray) -> np.ndarray:
    """Dot product of each spatial vector with the other image's pooled vector."""
    return _weighted_sum(other_pooled, acts)


def baseline_grad_cam(model: SimilarityModel, pair: ImagePair) -> ExplanationPair:
    """Each image's activations weighed point-wise by its rectified gradients."""
    ag = model.activation_gradients(pair)
    raw1 = grad_cam_map(ag.act1, ag.grad1)
    raw2 = grad_cam_map(ag.act2, ag.grad2)
    target = pair.spatial_shape
    return ExplanationPair(
        map1=upsample_normalize(raw1, target),
        map2=upsample_normalize(raw2, target),
        method="grad-cam-baseline",
        normalization="minmax",
    )


def interaction_cam(
    model: SimilarityModel,
    pair: ImagePair,
    reduction: str = "mean",
    use_gradient_interaction: bool = True,
) -> ExplanationPair:
    """Joint-activation (and optionally gradient-interaction) weighted CAM."""
    ag = model.activation_gradients(pair)
    J = joint_activation(ag.act1, ag.act2, reduction)
    if use_gradient_interaction:
        g1, g2 = gradient_interaction(ag.grad1, ag.grad2)
    else:
        g1 = g2 = np.ones_like(J)
    raw1 = interaction_map(ag.act1, J, g1)
    raw2 = interaction_map(ag.act2, J, g2)
    target = pair.spatial_shape
    return ExplanationPair(
        map1=upsample_normalize(raw1, target),
        map2=upsample_normalize(raw2, target),
        method="int-cam",
        options={"reduction": reduction, "gradient_interaction": use_gradient_interaction},
        normalization="minmax",
    )


def deep_similarity(model: SimilarityModel, pair: ImagePair) -> ExplanationPair:
    """Dot product of each spatial vector with the other image's pooled vector."""
    b1 = model.encode(pair.first)
    b2 = model.encode(pair.second)
    raw1 = deep_similarity_map(b1.activations, b2.pooled)
    raw2 = deep_similarity_map(b2.activations, b1.pooled)
    target = pair.spatial_shape
    return ExplanationPair(
        map1=upsample_normalize(raw1, target),
        map2=upsample_normalize(raw2, target),
        method="deep-sim",
        normalization="minmax",
    )
