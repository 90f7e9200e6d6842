"""Two-input similarity models: encoding, cosine scoring, gradients.

A :class:`SimilarityModel` wraps a torch backbone (producing spatial
activations) and a projection head (producing the contrasted embedding z).
All public entry points accept and return numpy float32 arrays; torch is an
internal detail. Handles are immutable after construction except for the
backprop mode; stochastic operations take explicit seeds.
"""

from __future__ import annotations

import copy
import json
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import (
    CheckpointCorruptError,
    CheckpointNotFoundError,
    CheckpointVersionError,
    DegenerateEmbeddingError,
    InputShapeError,
    NumericError,
)
from .types import ImagePair, validate_image

CHECKPOINT_MAGIC = b"PCAM"
CHECKPOINT_VERSION = 1

BACKPROP_STANDARD = "standard"
BACKPROP_GUIDED = "guided"


@dataclass
class EmbeddingBundle:
    """Per-image encoder outputs: embedding z, activations A, pooled features."""

    embedding: np.ndarray  # (D,)
    activations: np.ndarray  # (K, w, h)
    pooled: np.ndarray  # (K,)


@dataclass
class ActivationGradients:
    """d(similarity)/dA for both images, with the activations themselves."""

    grad1: np.ndarray
    grad2: np.ndarray
    act1: np.ndarray
    act2: np.ndarray


def similarity(z1: np.ndarray, z2: np.ndarray) -> float:
    """Cosine similarity of two embeddings, computed in float64.

    Raises :class:`DegenerateEmbeddingError` if either vector has zero norm.
    """
    a = np.asarray(z1, dtype=np.float64).ravel()
    b = np.asarray(z2, dtype=np.float64).ravel()
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateEmbeddingError("cosine similarity of a zero-norm embedding")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


class ToyBackbone(nn.Module):
    """Four-stage CNN with total downsampling 8; stage outputs are exposed."""

    def __init__(self, channels=(16, 32, 64, 64)):
        super().__init__()
        self.channels = tuple(channels)
        strides = (1, 2, 2, 2)
        stages = []
        in_ch = 3
        for out_ch, stride in zip(self.channels, strides):
            stages.append(
                nn.Sequential(
                    nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1),
                    nn.ReLU(),
                )
            )
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)
        self.downsampling = 8

    def forward_stages(self, x: torch.Tensor) -> list[torch.Tensor]:
        outs = []
        for stage in self.stages:
            x = stage(x)
            outs.append(x)
        return outs

    def forward(self, x):
        return self.forward_stages(x)[-1]


class ToyProjector(nn.Module):
    """Two-layer MLP head mapping pooled features to the contrast space."""

    def __init__(self, in_dim=64, hidden_dim=64, out_dim=32):
        super().__init__()
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.out_dim = out_dim
        self.fc1 = nn.Linear(in_dim, hidden_dim)
        self.act = nn.ReLU()
        self.fc2 = nn.Linear(hidden_dim, out_dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


def _he_init_module(module: nn.Module, generator: torch.Generator) -> None:
    """He fan-in normal for weights, zeros for biases."""
    for p_name, param in module.named_parameters():
        with torch.no_grad():
            if p_name.endswith("bias") or param.ndim == 1:
                param.zero_()
            else:
                fan_in = param[0].numel()
                std = math.sqrt(2.0 / fan_in)
                param.copy_(torch.randn(param.shape, generator=generator) * std)


class SimilarityModel:
    """Backbone + projection head with cosine pair scoring.

    Parameters
    ----------
    backbone:
        torch module exposing ``forward_stages(x) -> list[Tensor]``.
    projector:
        torch module mapping pooled (N, K) features to embeddings (N, D).
    activation_layer:
        index into the backbone stage list whose output is the CAM
        activation A (default -1, the last stage).
    embedding_tap:
        where the contrasted embedding is read: ``"projector"`` (default,
        matching the training objective) or ``"pooled"`` for models whose
        similarity is computed on pooled backbone features directly.
    """

    def __init__(
        self,
        backbone: nn.Module,
        projector: nn.Module,
        activation_layer: int = -1,
        embedding_tap: str = "projector",
        arch_config: Optional[dict] = None,
    ):
        if embedding_tap not in ("projector", "pooled"):
            raise ValueError(f"unknown embedding tap {embedding_tap!r}")
        self.backbone = backbone
        self.projector = projector
        self.activation_layer = activation_layer
        self.embedding_tap = embedding_tap
        self._arch_config = arch_config
        self.backprop_mode = BACKPROP_STANDARD
        self._guided_handles = []
        self.guided_negative_count = 0
        self.backbone.eval()
        self.projector.eval()

    # ---------------------------------------------------------------- layers

    @property
    def layer_list(self) -> list[str]:
        """Ordered parameter-group names, bottom of the network first."""
        return [name for name, _ in self._parameter_groups()]

    def _parameter_groups(self) -> list[tuple[str, list[nn.Parameter]]]:
        groups = []
        for prefix, root in (("backbone", self.backbone), ("projector", self.projector)):
            for mod_name, module in root.named_modules():
                params = list(module.parameters(recurse=False))
                if params:
                    full = f"{prefix}.{mod_name}" if mod_name else prefix
                    groups.append((full, params))
        return groups

    def _modules(self):
        yield from self.backbone.modules()
        yield from self.projector.modules()

    # ------------------------------------------------------------- inference

    def _validate_input(self, image: np.ndarray, name: str = "image") -> np.ndarray:
        arr = validate_image(image, name)
        factor = getattr(self.backbone, "downsampling", 1)
        h, w = arr.shape[1], arr.shape[2]
        if h % factor or w % factor:
            raise InputShapeError(
                f"{name}: spatial size {h}x{w} not divisible by downsampling factor {factor}"
            )
        return arr

    def _embed_t(self, batch: torch.Tensor, return_parts: bool = False):
        """Differentiable batch forward: stages -> pool -> projector."""
        stage_outs = self.backbone.forward_stages(batch)
        acts = stage_outs[self.activation_layer]
        pooled = acts.mean(dim=(2, 3))
        z = pooled if self.embedding_tap == "pooled" else self.projector(pooled)
        if return_parts:
            return z, acts, pooled
        return z

    def score_pairs_t(self, batch1: torch.Tensor, batch2: torch.Tensor) -> torch.Tensor:
        """Differentiable cosine scores for row-aligned image batches."""
        z1 = self._embed_t(batch1)
        z2 = self._embed_t(batch2)
        return F.cosine_similarity(z1, z2, dim=1, eps=1e-12)

    def encode(self, image: np.ndarray) -> EmbeddingBundle:
        """Encode one image into (z, A, pooled). Deterministic per parameters."""
        arr = self._validate_input(image)
        with torch.no_grad():
            t = torch.from_numpy(np.ascontiguousarray(arr)).unsqueeze(0)
            z, acts, pooled = self._embed_t(t, return_parts=True)
        out = EmbeddingBundle(
            embedding=z[0].numpy().copy(),
            activations=acts[0].numpy().copy(),
            pooled=pooled[0].numpy().copy(),
        )
        for name, a in (("embedding", out.embedding), ("activations", out.activations)):
            if not np.isfinite(a).all():
                raise NumericError(f"encode produced non-finite {name}")
        return out

    def embed_batch(self, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """No-grad batch encode; returns (embeddings (N, D), pooled (N, K))."""
        arr = np.ascontiguousarray(images, dtype=np.float32)
        with torch.no_grad():
            z, _, pooled = self._embed_t(torch.from_numpy(arr), return_parts=True)
        return z.numpy(), pooled.numpy()

    def feature_norms(self, images: np.ndarray, source: str = "pooled") -> np.ndarray:
        """L2 norms of pooled features (default) or full spatial activations."""
        if source not in ("pooled", "spatial"):
            raise ValueError(f"unknown feature norm source {source!r}")
        arr = np.ascontiguousarray(images, dtype=np.float32)
        with torch.no_grad():
            _, acts, pooled = self._embed_t(torch.from_numpy(arr), return_parts=True)
            feats = pooled if source == "pooled" else acts.flatten(1)
            return torch.linalg.vector_norm(feats, dim=1).numpy()

    def pair_scores(self, batch1: np.ndarray, batch2: np.ndarray) -> np.ndarray:
        """No-grad batched pair scores, used by perturbation methods."""
        b1 = torch.from_numpy(np.ascontiguousarray(batch1, dtype=np.float32))
        b2 = torch.from_numpy(np.ascontiguousarray(batch2, dtype=np.float32))
        with torch.no_grad():
            s = self.score_pairs_t(b1, b2)
        return s.numpy()

    def pair_similarity(self, pair: ImagePair) -> float:
        return float(self.pair_scores(pair.first[None], pair.second[None])[0])

    # -------------------------------------------------------------- gradients

    def input_gradients(self, pair: ImagePair) -> tuple[np.ndarray, np.ndarray]:
        """d(score)/dI for both images, respecting the backprop mode."""
        t1 = torch.from_numpy(pair.first.copy()).unsqueeze(0).requires_grad_(True)
        t2 = torch.from_numpy(pair.second.copy()).unsqueeze(0).requires_grad_(True)
        self.guided_negative_count = 0
        s = self.score_pairs_t(t1, t2)[0]
        if not s.requires_grad:  # score is a constant w.r.t. the inputs
            return np.zeros_like(pair.first), np.zeros_like(pair.second)
        g1, g2 = torch.autograd.grad(s, [t1, t2], allow_unused=True)
        g1 = torch.zeros_like(t1) if g1 is None else g1
        g2 = torch.zeros_like(t2) if g2 is None else g2
        out1, out2 = g1[0].numpy().copy(), g2[0].numpy().copy()
        if not (np.isfinite(out1).all() and np.isfinite(out2).all()):
            raise NumericError("non-finite input gradients")
        return out1, out2

    def batch_input_gradients(
        self, batch1: np.ndarray, batch2: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Per-row d(score)/dI for row-aligned batches, in one backward pass."""
        t1 = torch.from_numpy(np.asarray(batch1, dtype=np.float32)).requires_grad_(True)
        t2 = torch.from_numpy(np.asarray(batch2, dtype=np.float32)).requires_grad_(True)
        self.guided_negative_count = 0
        s = self.score_pairs_t(t1, t2).sum()
        if not s.requires_grad:
            return np.zeros_like(t1.detach().numpy()), np.zeros_like(t2.detach().numpy())
        g1, g2 = torch.autograd.grad(s, [t1, t2], allow_unused=True)
        g1 = torch.zeros_like(t1) if g1 is None else g1
        g2 = torch.zeros_like(t2) if g2 is None else g2
        out1, out2 = g1.numpy().copy(), g2.numpy().copy()
        if not (np.isfinite(out1).all() and np.isfinite(out2).all()):
            raise NumericError("non-finite input gradients")
        return out1, out2

    def activation_gradients(self, pair: ImagePair) -> ActivationGradients:
        """d(score)/dA for both images at the configured activation layer."""
        t1 = torch.from_numpy(pair.first.copy()).unsqueeze(0)
        t2 = torch.from_numpy(pair.second.copy()).unsqueeze(0)
        self.guided_negative_count = 0
        z_parts = []
        acts = []
        for t in (t1, t2):
            z, a, _ = self._embed_t(t, return_parts=True)
            a.retain_grad()
            z_parts.append(z)
            acts.append(a)
        s = F.cosine_similarity(z_parts[0], z_parts[1], dim=1, eps=1e-12)[0]
        if s.requires_grad:
            s.backward()
        g1, g2 = acts[0].grad, acts[1].grad
        g1 = torch.zeros_like(acts[0]) if g1 is None else g1
        g2 = torch.zeros_like(acts[1]) if g2 is None else g2
        result = ActivationGradients(
            grad1=g1[0].numpy().copy(),
            grad2=g2[0].numpy().copy(),
            act1=acts[0][0].detach().numpy().copy(),
            act2=acts[1][0].detach().numpy().copy(),
        )
        if not (np.isfinite(result.grad1).all() and np.isfinite(result.grad2).all()):
            raise NumericError("non-finite activation gradients")
        return result

    # ----------------------------------------------------------- guided mode

    def set_backprop_mode(self, mode: str) -> "SimilarityModel":
        """Switch between exact autodiff and guided (positive-only) ReLU backward."""
        if mode not in (BACKPROP_STANDARD, BACKPROP_GUIDED):
            raise ValueError(f"unknown backprop mode {mode!r}")
        self._remove_guided_hooks()
        self.backprop_mode = mode
        if mode == BACKPROP_GUIDED:
            relus = [m for m in self._modules() if isinstance(m, nn.ReLU)]
            if not relus:
                warnings.warn("guided mode requested on a model without rectifiers")
            for m in relus:
                self._guided_handles.append(m.register_full_backward_hook(self._guided_hook))
        return self

    def _guided_hook(self, module, grad_input, grad_output):
        clamped = grad_input[0].clamp(min=0)
        self.guided_negative_count += int((clamped < 0).sum())
        return (clamped,)

    def _remove_guided_hooks(self):
        for handle in self._guided_handles:
            handle.remove()
        self._guided_handles = []

    # --------------------------------------------------------- randomization

    def clone(self) -> "SimilarityModel":
        """Independent copy of this handle, in standard backprop mode."""
        mode = self.backprop_mode
        self._remove_guided_hooks()
        backbone = copy.deepcopy(self.backbone)
        projector = copy.deepcopy(self.projector)
        if mode == BACKPROP_GUIDED:
            self.set_backprop_mode(mode)
        else:
            self.backprop_mode = mode
        return SimilarityModel(
            backbone,
            projector,
            activation_layer=self.activation_layer,
            embedding_tap=self.embedding_tap,
            arch_config=copy.deepcopy(self._arch_config),
        )

    def randomize_layers(self, from_top_count: int, seed: int) -> "SimilarityModel":
        """Re-initialize the top ``from_top_count`` parameter groups.

        Weights are re-drawn from the He fan-in distribution used at
        construction; biases are re-drawn as zeros. The original model is
        untouched; a new handle is returned.
        """
        groups = self._parameter_groups()
        if not 0 <= from_top_count <= len(groups):
            raise ValueError(
                f"from_top_count must be in [0, {len(groups)}], got {from_top_count}"
            )
        new_model = self.clone()
        new_groups = new_model._parameter_groups()
        gen = torch.Generator().manual_seed(int(seed))
        for _, params in reversed(new_groups[len(new_groups) - from_top_count:]):
            for param in params:
                with torch.no_grad():
                    if param.ndim == 1:
                        param.zero_()
                    else:
                        fan_in = param[0].numel()
                        std = math.sqrt(2.0 / fan_in)
                        param.copy_(torch.randn(param.shape, generator=gen) * std)
        return new_model

    # ------------------------------------------------------------ checkpoint

    def arch_config(self) -> dict:
        if self._arch_config is None:
            raise CheckpointCorruptError(
                "model has no architecture config and cannot be checkpointed"
            )
        return dict(self._arch_config)

    def state_items(self) -> list[tuple[str, torch.Tensor]]:
        items = [(f"backbone.{k}", v) for k, v in self.backbone.state_dict().items()]
        items += [(f"projector.{k}", v) for k, v in self.projector.state_dict().items()]
        return items


def build_toy_model(
    seed: int = 0,
    channels=(16, 32, 64, 64),
    hidden_dim: int = 64,
    embed_dim: int = 32,
    activation_layer: int = -1,
) -> SimilarityModel:
    """Freshly initialized desk-scale model (He weights, zero biases)."""
    backbone = ToyBackbone(channels)
    projector = ToyProjector(channels[-1], hidden_dim, embed_dim)
    gen = torch.Generator().manual_seed(int(seed))
    _he_init_module(backbone, gen)
    _he_init_module(projector, gen)
    config = {
        "arch": "toy",
        "channels": list(channels),
        "hidden_dim": hidden_dim,
        "embed_dim": embed_dim,
        "activation_layer": activation_layer,
    }
    return SimilarityModel(backbone, projector, activation_layer, arch_config=config)


def _build_from_config(config: dict) -> SimilarityModel:
    if config.get("arch") != "toy":
        raise CheckpointCorruptError(f"unknown architecture {config.get('arch')!r}")
    return build_toy_model(
        seed=0,
        channels=tuple(config["channels"]),
        hidden_dim=config["hidden_dim"],
        embed_dim=config["embed_dim"],
        activation_layer=config["activation_layer"],
    )


def save_checkpoint(model: SimilarityModel, path) -> None:
    """Write the PCAM binary format: magic, version, config JSON, f32 blobs."""
    items = model.state_items()
    config = model.arch_config()
    config["params"] = [{"name": k, "shape": list(v.shape)} for k, v in items]
    config_bytes = json.dumps(config).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(config_bytes)))
        fh.write(config_bytes)
        for _, tensor in items:
            fh.write(np.ascontiguousarray(tensor.numpy(), dtype="<f4").tobytes())
    tmp.replace(path)


def load_checkpoint(path) -> SimilarityModel:
    """Read a PCAM checkpoint back into a model, bit-exactly."""
    path = Path(path)
    if not path.exists():
        raise CheckpointNotFoundError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if len(blob) < 10 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointCorruptError(f"bad magic in {path}")
    (version,) = struct.unpack("<H", blob[4:6])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(version, CHECKPOINT_VERSION)
    (config_len,) = struct.unpack("<I", blob[6:10])
    if len(blob) < 10 + config_len:
        raise CheckpointCorruptError(f"truncated config block in {path}")
    try:
        config = json.loads(blob[10 : 10 + config_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"unreadable config block in {path}") from exc
    model = _build_from_config(config)
    offset = 10 + config_len
    state = dict(model.state_items())
    for entry in config.get("params", []):
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in state:
            raise CheckpointCorruptError(f"unexpected parameter {name!r} in {path}")
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(blob):
            raise CheckpointCorruptError(f"truncated payload for {name!r} in {path}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        with torch.no_grad():
            state[name].copy_(torch.from_numpy(arr.copy()))
        offset += nbytes
    if offset != len(blob):
        raise CheckpointCorruptError(f"trailing bytes in {path}")
    return model
