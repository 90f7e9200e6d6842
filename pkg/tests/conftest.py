"""Shared fixtures: stub models with known analytic behavior and one trained
desk-scale model (session scoped; the acceptance suite depends on it)."""

import numpy as np
import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F

from paircam.model import SimilarityModel, build_toy_model, save_checkpoint
from paircam.train import ToyTrainConfig, train_toy_contrastive
from paircam.types import ImagePair


class LinearStubModel(SimilarityModel):
    """score(I1, I2) = <w, I1> + <w, I2>; gradients are exactly w."""

    def __init__(self, weight: np.ndarray):
        backbone = DownsampleBackbone(factor=1)
        super().__init__(backbone, nn.Identity(), activation_layer=-1)
        self.weight = torch.from_numpy(np.ascontiguousarray(weight, dtype=np.float32))

    def score_pairs_t(self, batch1, batch2):
        w = self.weight
        return (batch1 * w).sum(dim=(1, 2, 3)) + (batch2 * w).sum(dim=(1, 2, 3))


class DownsampleBackbone(nn.Module):
    """Average-pool image pyramid; stage activations are the pooled image."""

    def __init__(self, factor: int = 8):
        super().__init__()
        self.factor = factor
        self.downsampling = factor
        self.stages = nn.ModuleList([nn.Identity()])

    def forward_stages(self, x):
        if self.factor == 1:
            return [x]
        return [F.avg_pool2d(x, self.factor)]


class OverlapStubModel(SimilarityModel):
    """Cosine of flattened downsampled images: normalized pixel overlap."""

    def __init__(self, factor: int = 8):
        super().__init__(DownsampleBackbone(factor), nn.Identity(), activation_layer=-1)

    def _embed_t(self, batch, return_parts: bool = False):
        acts = self.backbone.forward_stages(batch)[-1]
        z = acts.flatten(1)
        if return_parts:
            return z, acts, acts.mean(dim=(2, 3))
        return z


def constant_model(seed: int = 0) -> SimilarityModel:
    """Toy model whose projector output is a constant vector: score == 1."""
    model = build_toy_model(seed=seed)
    with torch.no_grad():
        model.projector.fc2.weight.zero_()
        model.projector.fc2.bias.copy_(torch.linspace(0.1, 1.0, model.projector.fc2.bias.numel()))
    return model


class CountingModel(SimilarityModel):
    """Wrapper counting score_pairs_t rows, for forward-pass-count contracts."""

    def __init__(self, inner: SimilarityModel):
        super().__init__(inner.backbone, inner.projector, inner.activation_layer,
                         inner.embedding_tap)
        self._inner = inner
        self.pair_calls = 0

    def score_pairs_t(self, batch1, batch2):
        self.pair_calls += int(batch1.shape[0])
        return self._inner.score_pairs_t(batch1, batch2)


def planted_patch_pair(side: int = 32, seed: int = 0, patch: int = 8):
    """Two noise images sharing one bright patch at the same location.

    Returns (pair, patch_mask). The overlap stub's similarity is dominated by
    the shared patch, giving an oracle region for occlusion tests. The patch
    sits off-center: uniformly placed occlusion rectangles cover the image
    center far more often than the borders, and a centered patch would drown
    in that coverage halo.
    """
    rng = np.random.default_rng(seed)
    base1 = rng.uniform(0.0, 0.25, size=(3, side, side)).astype(np.float32)
    base2 = rng.uniform(0.0, 0.25, size=(3, side, side)).astype(np.float32)
    top = max(2, side // 8)
    mask = np.zeros((side, side), dtype=np.float32)
    mask[top : top + patch, top : top + patch] = 1.0
    for base in (base1, base2):
        base[:, top : top + patch, top : top + patch] = 1.0
    return ImagePair(base1, base2), mask


@pytest.fixture(scope="session")
def toy_train_result():
    import time

    start = time.monotonic()
    model, trace = train_toy_contrastive(ToyTrainConfig())
    seconds = time.monotonic() - start
    return model, trace, seconds


@pytest.fixture(scope="session")
def toy_model(toy_train_result):
    return toy_train_result[0]


@pytest.fixture(scope="session")
def toy_checkpoint(toy_model, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "toy.pcam"
    save_checkpoint(toy_model, path)
    return path


@pytest.fixture()
def fresh_model():
    return build_toy_model(seed=3)


@pytest.fixture()
def linear_stub():
    rng = np.random.default_rng(12)
    w = rng.normal(0.0, 0.05, size=(3, 32, 32)).astype(np.float32)
    return LinearStubModel(w)


@pytest.fixture()
def overlap_stub():
    return OverlapStubModel(factor=8)
