"""Feature inversion: synthesize an image matching a target's features.

Minimizes the mean-squared feature error at a chosen backbone stage plus two
natural-image priors (total variation and a centered alpha-norm) with
momentum SGD. The stock hyperparameters assume production-scale feature
magnitudes; for desk-scale models the learning rate is rescaled by the
target's feature energy (``lr_scale="auto"``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import torch

from .errors import DivergenceError
from .model import SimilarityModel
from .types import validate_image

_TV_EPS = 1e-8


@dataclass
class InversionConfig:
    layer_id: int = -1
    iterations: int = 200
    lr: float = 1e4
    momentum: float = 0.9
    lr_decay: float = 0.1
    lr_decay_every: int = 50
    init_std: float = 0.1
    tv_weight: float = 1e-8
    alpha: float = 6.0
    alpha_weight: float = 1e-7
    seed: int = 0
    lr_scale: Union[str, float] = "auto"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        for name in ("tv_weight", "alpha_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.alpha < 1:
            raise ValueError("alpha must be at least 1")


@dataclass
class InversionTrace:
    total_loss: list[float]
    feature_mse: list[float]


def scheduled_lr(config: InversionConfig, iteration: int) -> float:
    """Base learning rate after the step decays, before any feature rescale.

    Dividing by the inverse factor keeps the default 1e4 -> 1e3 -> 1e2 -> 1e1
    sequence exact in floating point.
    """
    steps = iteration // config.lr_decay_every
    return config.lr / (1.0 / config.lr_decay) ** steps


def _as_tensor(image) -> tuple[torch.Tensor, bool]:
    if isinstance(image, torch.Tensor):
        return image, True
    return torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)), False


def tv_regularizer(image):
    """Isotropic total variation with forward differences.

    Accepts (H, W) or (C, H, W), numpy or torch; numpy input returns a float,
    torch input returns a differentiable scalar tensor.
    """
    t, was_tensor = _as_tensor(image)
    arr = t if t.ndim == 3 else t.unsqueeze(0)
    dx = torch.zeros_like(arr)
    dy = torch.zeros_like(arr)
    dx[:, :, :-1] = arr[:, :, 1:] - arr[:, :, :-1]
    dy[:, :-1, :] = arr[:, 1:, :] - arr[:, :-1, :]
    value = torch.sqrt(dx**2 + dy**2 + _TV_EPS**2).sum()
    return value if was_tensor else float(value)


def alpha_norm(image, alpha: float = 6.0):
    """Sum of |pixel - mean|^alpha, the mean-centered natural-image prior."""
    if alpha < 1:
        raise ValueError("alpha must be at least 1")
    t, was_tensor = _as_tensor(image)
    value = (t - t.mean()).abs() ** alpha
    value = value.sum()
    return value if was_tensor else float(value)


def _target_features(model: SimilarityModel, image: np.ndarray, layer_id: int) -> torch.Tensor:
    t = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).unsqueeze(0)
    with torch.no_grad():
        return model.backbone.forward_stages(t)[layer_id].detach()


def invert_features(
    model: SimilarityModel,
    target_image: np.ndarray,
    config: InversionConfig,
    start_image: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, InversionTrace]:
    """Optimize an image whose stage features match the target's.

    ``start_image`` overrides the random-normal initialization (useful for
    exactness checks). Pixels are clamped to [0, 1] after every step. Raises
    :class:`DivergenceError` on a non-finite loss, with the trace attached.
    """
    target = validate_image(target_image, "target_image")
    f0 = _target_features(model, target, config.layer_id)
    if config.lr_scale == "auto":
        # stock lr presumes production feature scales; normalize by the
        # target's total feature energy so the same setting converges here
        scale = 4.0 / max(float(f0.abs().sum()), 1e-12)
    else:
        scale = float(config.lr_scale)

    if start_image is not None:
        x = torch.from_numpy(
            np.ascontiguousarray(validate_image(start_image, "start_image"))
        ).clone()
    else:
        gen = torch.Generator().manual_seed(int(config.seed))
        x = torch.randn(target.shape, generator=gen) * config.init_std
    x = x.requires_grad_(True)
    optimizer = torch.optim.SGD([x], lr=config.lr * scale, momentum=config.momentum)

    trace = InversionTrace(total_loss=[], feature_mse=[])
    for iteration in range(config.iterations):
        optimizer.param_groups[0]["lr"] = scheduled_lr(config, iteration) * scale
        feats = model.backbone.forward_stages(x.unsqueeze(0))[config.layer_id]
        feature_mse = ((feats - f0) ** 2).mean()
        loss = (
            feature_mse
            + config.tv_weight * tv_regularizer(x)
            + config.alpha_weight * alpha_norm(x, config.alpha)
        )
        if not torch.isfinite(loss):
            raise DivergenceError(
                f"non-finite inversion loss at iteration {iteration}",
                trace=trace.total_loss,
            )
        trace.total_loss.append(float(loss.detach()))
        trace.feature_mse.append(float(feature_mse.detach()))
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        with torch.no_grad():
            x.clamp_(0.0, 1.0)
    return x.detach().numpy().copy(), trace
