"""Desk-scale contrastive training on the procedural shape corpus.

The objective is the normalized-temperature cross-entropy over in-batch
positives and negatives: two augmented views per image, each view's positive
is its sibling and its negatives are every other view in the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .data import load_or_generate_corpus
from .errors import TrainingError
from .model import SimilarityModel, build_toy_model, similarity
from .transforms import DEFAULT_AUGMENT_POLICY, augment_pair


@dataclass
class ToyTrainConfig:
    dataset_size: int = 256
    image_side: int = 48
    batch_size: int = 64
    epochs: int = 60
    temperature: float = 0.1
    learning_rate: float = 2e-3
    seed: int = 0

    def __post_init__(self):
        for name in ("dataset_size", "image_side", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class TrainingTrace:
    initial_loss: float
    epoch_losses: list[float] = field(default_factory=list)


def nt_xent_loss(embeddings: torch.Tensor, temperature: float) -> torch.Tensor:
    """NT-Xent over 2B embeddings ordered [view1 of each image, view2 of each].

    For a random near-uniform batch this is approximately ln(2B - 1).
    """
    z = F.normalize(embeddings, dim=1, eps=1e-12)
    n = z.shape[0]
    b = n // 2
    logits = z @ z.T / temperature
    logits.fill_diagonal_(float("-inf"))
    targets = torch.cat([torch.arange(b, n), torch.arange(0, b)])
    return F.cross_entropy(logits, targets)


def _augmented_batch(images: np.ndarray, policy, base_seed) -> tuple[np.ndarray, np.ndarray]:
    views1, views2 = [], []
    for i, img in enumerate(images):
        pair = augment_pair(img, policy, seed=[*base_seed, i])
        views1.append(pair.first)
        views2.append(pair.second)
    return np.stack(views1), np.stack(views2)


def train_toy_contrastive(
    config: ToyTrainConfig, policy=None
) -> tuple[SimilarityModel, TrainingTrace]:
    """Train a fresh toy model; returns the model and the per-epoch loss trace."""
    if policy is None:
        policy = DEFAULT_AUGMENT_POLICY
    corpus = load_or_generate_corpus(config.dataset_size, config.image_side, config.seed)
    model = build_toy_model(seed=config.seed)
    params = list(model.backbone.parameters()) + list(model.projector.parameters())
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)
    rng = np.random.default_rng([config.seed, 0xB417])

    trace = TrainingTrace(initial_loss=float("nan"))
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(config.dataset_size)
        batch_losses = []
        for start in range(0, config.dataset_size, config.batch_size):
            idx = order[start : start + config.batch_size]
            if len(idx) < 2:
                continue
            v1, v2 = _augmented_batch(corpus[idx], policy, (config.seed, epoch, start))
            batch = torch.from_numpy(np.concatenate([v1, v2]))
            z = model._embed_t(batch)
            loss = nt_xent_loss(z, config.temperature)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, step {step}",
                    trace=trace.epoch_losses,
                )
            if step == 0:
                trace.initial_loss = float(loss.detach())
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            batch_losses.append(float(loss.detach()))
            step += 1
        trace.epoch_losses.append(float(np.mean(batch_losses)))
    return model, trace


def contrastive_margin(
    model: SimilarityModel,
    n_pairs: int = 100,
    image_side: int = 48,
    seed: int = 0,
    policy=None,
) -> dict:
    """Mean positive-pair minus mean negative-pair cosine on held-out images."""
    if policy is None:
        policy = DEFAULT_AUGMENT_POLICY
    # offset keeps the held-out images disjoint from any training corpus seed
    corpus = load_or_generate_corpus(n_pairs, image_side, seed=int(seed) + 99991)
    views1, views2 = _augmented_batch(corpus, policy, (seed, 0x803D))
    z1, _ = model.embed_batch(views1)
    z2, _ = model.embed_batch(views2)
    pos = [similarity(z1[i], z2[i]) for i in range(n_pairs)]
    rng = np.random.default_rng([seed, 0xD157])
    neg = []
    for _ in range(n_pairs):
        i, j = rng.choice(n_pairs, size=2, replace=False)
        neg.append(similarity(z1[i], z2[j]))
    mean_pos = float(np.mean(pos))
    mean_neg = float(np.mean(neg))
    return {"mean_positive": mean_pos, "mean_negative": mean_neg, "margin": mean_pos - mean_neg}
