"""Image transforms with explicit strength schedules.

Every transform maps a (3, H, W) float image in [0, 1] to another one of the
same shape, deterministically for a given strength. Strength ranges per kind
are fixed and documented here:

==================  =========================================
kind                strength meaning and range
==================  =========================================
color_jitter        joint brightness/contrast/saturation/hue
                    distortion factor in [0, 0.8] (hue shift
                    caps at 0.2)
gaussian_blur       kernel sigma in [0.1, 2.0]
grayscale           desaturation blend in [0, 1]
solarization        inversion threshold 1.0 down to 0.5,
                    strength in [0, 1]
rotation@T          angle in degrees, [0, T]
horizontal_flip     single strength 1.0 (mirror)
==================  =========================================
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi
import torch
import torch.nn.functional as F
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from .types import ImagePair, validate_image

_BASE_RANGES = {
    "color_jitter": (0.0, 0.8),
    "gaussian_blur": (0.1, 2.0),
    "grayscale": (0.0, 1.0),
    "solarization": (0.0, 1.0),
    "horizontal_flip": (1.0, 1.0),
}

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def parse_kind(kind: str) -> tuple[str, float | None]:
    """Split "rotation@90" into ("rotation", 90.0); plain kinds pass through."""
    if kind.startswith("rotation@"):
        return "rotation", float(kind.split("@", 1)[1])
    if kind in _BASE_RANGES:
        return kind, None
    raise ValueError(f"unsupported transform kind {kind!r}")


def strength_range(kind: str) -> tuple[float, float]:
    base, param = parse_kind(kind)
    if base == "rotation":
        return 0.0, float(param)
    return _BASE_RANGES[base]


@dataclass
class TransformSchedule:
    """A transform kind decomposed into ordered strengths t^1..t^Z."""

    kind: str
    strengths: list[float]

    @property
    def Z(self) -> int:
        return len(self.strengths)


@dataclass
class InterpolationSchedule:
    """Frames blending I1 into I_Z as rho decreases from 1 to 0."""

    frames: list[np.ndarray]
    rhos: list[float] = field(default_factory=list)


def make_strength_schedule(kind: str, Z: int) -> TransformSchedule:
    """Z strengths spanning the kind's range, lowest to highest.

    Strengths are linearly spaced so that the last one is the maximal
    strength; Z=1 degenerates to that single endpoint.
    """
    if Z < 1:
        raise ValueError(f"Z must be at least 1, got {Z}")
    lo, hi = strength_range(kind)
    strengths = [lo + (hi - lo) * (i + 1) / Z for i in range(Z)]
    return TransformSchedule(kind=kind, strengths=strengths)


def _clamp(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _luminance(img: np.ndarray) -> np.ndarray:
    return np.tensordot(_LUMA, img, axes=([0], [0]))


def _color_jitter(img: np.ndarray, s: float) -> np.ndarray:
    out = img * (1.0 - 0.5 * s)  # brightness
    mean = out.mean()
    out = mean + (out - mean) * (1.0 - 0.5 * s)  # contrast toward the mean
    lum = _luminance(out)[None]
    out = lum + (out - lum) * (1.0 - s)  # saturation toward luminance
    hue_shift = 0.25 * s  # reaches the 0.2 cap at full strength
    if hue_shift > 0:
        hsv = rgb_to_hsv(np.clip(out, 0.0, 1.0).transpose(1, 2, 0))
        hsv[..., 0] = (hsv[..., 0] + hue_shift) % 1.0
        out = hsv_to_rgb(hsv).transpose(2, 0, 1)
    return out


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    return np.stack([ndi.gaussian_filter(c, sigma=sigma, mode="reflect") for c in img])


def _grayscale(img: np.ndarray, s: float) -> np.ndarray:
    lum = _luminance(img)[None]
    return (1.0 - s) * img + s * lum


def _solarize(img: np.ndarray, s: float) -> np.ndarray:
    threshold = 1.0 - 0.5 * s
    return np.where(img > threshold, 1.0 - img, img)


def _rotate(img: np.ndarray, angle: float) -> np.ndarray:
    # exposed corners take the per-channel mean so they do not dominate gradients
    return np.stack(
        [
            ndi.rotate(c, angle, reshape=False, order=1, mode="constant", cval=float(c.mean()))
            for c in img
        ]
    )


def apply_transform(image: np.ndarray, kind: str, strength: float) -> np.ndarray:
    """Apply one transform at the given strength. Deterministic; clamps to [0, 1]."""
    img = validate_image(image)
    base, _ = parse_kind(kind)
    lo, hi = strength_range(kind)
    if not lo <= strength <= hi:
        raise ValueError(f"{kind}: strength {strength} outside [{lo}, {hi}]")
    if base == "color_jitter":
        out = _color_jitter(img, strength)
    elif base == "gaussian_blur":
        out = _gaussian_blur(img, strength)
    elif base == "grayscale":
        out = _grayscale(img, strength)
    elif base == "solarization":
        out = _solarize(img, strength)
    elif base == "rotation":
        out = _rotate(img, strength)
    elif base == "horizontal_flip":
        out = img[:, :, ::-1]
    return _clamp(np.ascontiguousarray(out))


def is_geometric(kind: str) -> bool:
    return parse_kind(kind)[0] in ("rotation", "horizontal_flip")


def inverse_warp(array: np.ndarray, kind: str, strength: float) -> np.ndarray:
    """Map a gradient/map computed on a transformed frame back onto the
    untransformed image's coordinates. Identity for photometric kinds."""
    base, _ = parse_kind(kind)
    arr = np.asarray(array, dtype=np.float32)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    if base == "rotation":
        arr = np.stack(
            [ndi.rotate(c, -strength, reshape=False, order=1, mode="constant", cval=0.0) for c in arr]
        )
    elif base == "horizontal_flip":
        arr = np.ascontiguousarray(arr[:, :, ::-1])
    return arr[0] if squeeze else arr


def interpolation_schedule(
    image1: np.ndarray, image_z: np.ndarray, rho_step: float = 0.1
) -> InterpolationSchedule:
    """Affine frames rho*I1 + (1-rho)*I_Z for rho = 1, 1-step, ..., 0.

    Endpoints are exact copies of the inputs; with the default step of 0.1
    this yields 11 frames.
    """
    i1 = validate_image(image1, "image1")
    iz = validate_image(image_z, "image_z")
    if i1.shape != iz.shape:
        raise ValueError(f"shape mismatch: {i1.shape} vs {iz.shape}")
    if not 0.0 < rho_step <= 1.0:
        raise ValueError(f"rho_step must lie in (0, 1], got {rho_step}")
    rhos = []
    rho = 1.0
    while rho > 0.0:
        rhos.append(rho)
        rho = round(rho - rho_step, 12)
    rhos.append(0.0)
    frames = [np.float32(r) * i1 + np.float32(1.0 - r) * iz for r in rhos]
    frames[0] = i1.copy()
    frames[-1] = iz.copy()
    return InterpolationSchedule(frames=frames, rhos=rhos)


def resize_image(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a (C, H, W) array."""
    t = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).unsqueeze(0)
    out = F.interpolate(t, size=(height, width), mode="bilinear", align_corners=False)
    return out[0].numpy()


# crop + jitter + grayscale; blur is supported in policies but kept out of
# the default because it teaches low-frequency invariance that collapses the
# blurred-baseline evaluation headroom at desk scale
DEFAULT_AUGMENT_POLICY = [
    {"kind": "random_resized_crop", "scale": [0.7, 1.0], "p": 1.0},
    {"kind": "horizontal_flip", "p": 0.5},
    {"kind": "color_jitter", "strength": 0.6, "p": 0.8},
    {"kind": "grayscale", "strength": 1.0, "p": 0.5},
]


def _augment_view(img: np.ndarray, policy: list[dict], rng: np.random.Generator):
    out = img
    record = []
    for step in policy:
        kind = step["kind"]
        p = float(step.get("p", 1.0))
        if rng.random() >= p:
            continue
        if kind == "random_resized_crop":
            lo, hi = step.get("scale", [0.6, 1.0])
            _, h, w = out.shape
            area = rng.uniform(lo, hi) * h * w
            aspect = rng.uniform(3.0 / 4.0, 4.0 / 3.0)
            ch = int(round(np.sqrt(area * aspect)))
            cw = int(round(np.sqrt(area / aspect)))
            ch, cw = min(max(ch, 8), h), min(max(cw, 8), w)
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            out = resize_image(out[:, top : top + ch, left : left + cw], h, w)
            record.append({"kind": kind, "rect": [top, left, ch, cw]})
        elif kind == "gaussian_blur":
            lo, hi = step.get("sigma", [0.1, 2.0])
            sigma = float(rng.uniform(lo, hi))
            out = apply_transform(out, "gaussian_blur", sigma)
            record.append({"kind": kind, "sigma": sigma})
        elif kind in ("color_jitter", "grayscale", "solarization") or kind.startswith("rotation@"):
            hi = float(step.get("strength", strength_range(kind)[1]))
            strength = float(rng.uniform(strength_range(kind)[0], hi))
            out = apply_transform(out, kind, strength)
            record.append({"kind": kind, "strength": strength})
        elif kind == "horizontal_flip":
            out = apply_transform(out, "horizontal_flip", 1.0)
            record.append({"kind": kind})
        else:
            raise ValueError(f"unsupported policy step kind {kind!r}")
    return _clamp(out), record


def augment_pair(image: np.ndarray, policy: list[dict] | None = None, seed=0) -> ImagePair:
    """Two independently augmented views of one image, deterministic per seed.

    ``policy`` is a list of step dicts (see ``DEFAULT_AUGMENT_POLICY``); an
    empty list is the identity policy. The applied parameters of both views
    are recorded on the returned pair.
    """
    img = validate_image(image)
    if policy is None:
        policy = DEFAULT_AUGMENT_POLICY
    rng = np.random.default_rng(seed)
    view1, rec1 = _augment_view(img, policy, rng)
    view2, rec2 = _augment_view(img, policy, rng)
    return ImagePair(view1, view2, augmentation={"seed": seed, "view1": rec1, "view2": rec2})
