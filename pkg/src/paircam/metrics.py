"""Metrics for pairs of explanations.

Insertion/deletion curves and average drop come in a simultaneous flavor
(both images altered together) and a conditional one (one image altered, the
other fully observed, averaged over the two directions). Maximum sensitivity
measures explanation stability under bounded input noise, and the sanity
check correlates maps against progressively randomized models.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.ndimage as ndi
from scipy import stats

from .errors import InputShapeError
from .model import SimilarityModel
from .types import ExplanationPair, ImagePair

SIMULTANEOUS_MODES = ("SI", "SD")
CONDITIONAL_MODES = ("CI", "CD")

ExplainFn = Callable[[SimilarityModel, ImagePair], ExplanationPair]


@dataclass
class EvaluationCurve:
    fractions: np.ndarray
    scores: np.ndarray
    auc: float
    mode: str


@dataclass
class InsertionDeletionResult:
    mode: str
    curves: list[EvaluationCurve]
    auc: float  # mean AUC over directions (single direction for SI/SD)


@dataclass
class SensitivityResult:
    value: float
    radius: float
    samples: int
    seed: int
    degenerate: bool = False


@dataclass
class SanityStep:
    layers_randomized: int
    explanation: ExplanationPair
    spearman1: float
    spearman2: float
    degenerate: bool = False


@dataclass
class SanityTrace:
    steps: list[SanityStep] = field(default_factory=list)


def auc(curve_or_fractions, scores=None) -> float:
    """Trapezoidal area under a curve over its fraction axis."""
    if isinstance(curve_or_fractions, EvaluationCurve):
        fractions, values = curve_or_fractions.fractions, curve_or_fractions.scores
    else:
        fractions, values = curve_or_fractions, scores
    fractions = np.asarray(fractions, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if fractions.size < 2:
        raise ValueError("auc needs at least two curve points")
    return float(np.trapezoid(values, fractions))


def pixel_ranking(map_values: np.ndarray) -> np.ndarray:
    """Flat pixel indices by descending importance; ties break row-major."""
    flat = np.asarray(map_values).ravel()
    return np.argsort(-flat, kind="stable")


def blur_baseline(image: np.ndarray, sigma: float = 5.0, kernel: int = 11) -> np.ndarray:
    """Highly blurred copy used as the insertion starting point."""
    truncate = ((kernel - 1) / 2) / sigma
    return np.stack(
        [ndi.gaussian_filter(c, sigma=sigma, truncate=truncate, mode="reflect") for c in image]
    ).astype(np.float32)


def _unit_maps(explanations: ExplanationPair) -> tuple[np.ndarray, np.ndarray]:
    for name, m in (("map1", explanations.map1), ("map2", explanations.map2)):
        if m.min() < 0.0 or m.max() > 1.0:
            raise ValueError(f"{name} must be normalized to [0, 1]; run postprocess_map first")
    return explanations.map1, explanations.map2


def _step_counts(n_pixels: int, L: int) -> list[int]:
    counts = list(range(L, n_pixels, L))
    counts.append(n_pixels)
    return counts


def _altered_series(image, ranking, counts, start_from, fill_with):
    """Images along one ranking: start_from with top-k pixels set to fill_with."""
    c, h, w = image.shape
    current = start_from.reshape(c, -1).copy()
    source = fill_with.reshape(c, -1)
    series = []
    prev = 0
    for count in counts:
        idx = ranking[prev:count]
        current[:, idx] = source[:, idx]
        series.append(current.reshape(c, h, w).copy())
        prev = count
    return series


def insertion_deletion_curve(
    model: SimilarityModel,
    pair: ImagePair,
    explanations: ExplanationPair,
    mode: str,
    L: Optional[int] = None,
    deletion_fill: Optional[np.ndarray] = None,
    blur_sigma: float = 5.0,
    blur_kernel: int = 11,
    batch_size: int = 64,
) -> InsertionDeletionResult:
    """Similarity curve as ranked pixels are revealed (insertion) or removed
    (deletion), L pixels per image per step.

    Insertion starts from a highly blurred baseline and reveals original
    pixels; deletion starts from the original and writes the fill color. The
    default L is the image width. Curve endpoints are computed directly.
    """
    if mode not in SIMULTANEOUS_MODES + CONDITIONAL_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    H, W = pair.spatial_shape
    if explanations.map1.shape != (H, W):
        raise InputShapeError(
            f"explanation shape {explanations.map1.shape} does not match image {(H, W)}"
        )
    L = W if L is None else int(L)
    if L < 1:
        raise ValueError("L must be at least 1")
    n_pixels = H * W
    counts = _step_counts(n_pixels, L)
    fractions = np.concatenate([[0.0], np.asarray(counts, dtype=np.float64) / n_pixels])

    insertion = mode.endswith("I")
    if insertion:
        baselines = [blur_baseline(pair.first, blur_sigma, blur_kernel),
                     blur_baseline(pair.second, blur_sigma, blur_kernel)]
        fills = [pair.first, pair.second]
    else:
        if deletion_fill is None:
            deletion_fill = np.stack([pair.first, pair.second]).mean(axis=(0, 2, 3))
        fill = np.asarray(deletion_fill, dtype=np.float32).reshape(3, 1, 1)
        baselines = [pair.first, pair.second]
        fills = [np.broadcast_to(fill, pair.first.shape).copy(),
                 np.broadcast_to(fill, pair.second.shape).copy()]

    rankings = [pixel_ranking(explanations.map1), pixel_ranking(explanations.map2)]
    series = [
        _altered_series(img, rank, counts, base, fill)
        for img, rank, base, fill in zip(
            (pair.first, pair.second), rankings, baselines, fills
        )
    ]

    def scored(batch1, batch2):
        out = np.empty(len(batch1), dtype=np.float64)
        for start in range(0, len(batch1), batch_size):
            out[start : start + batch_size] = model.pair_scores(
                np.stack(batch1[start : start + batch_size]),
                np.stack(batch2[start : start + batch_size]),
            )
        return out

    curves = []
    if mode in SIMULTANEOUS_MODES:
        batch1 = [baselines[0]] + series[0]
        batch2 = [baselines[1]] + series[1]
        scores = scored(batch1, batch2)
        curves.append(EvaluationCurve(fractions, scores, auc(fractions, scores), mode))
    else:
        for altered_idx in (0, 1):
            intact = pair.second if altered_idx == 0 else pair.first
            batch_alt = [baselines[altered_idx]] + series[altered_idx]
            batch_intact = [intact] * len(batch_alt)
            if altered_idx == 0:
                scores = scored(batch_alt, batch_intact)
            else:
                scores = scored(batch_intact, batch_alt)
            curves.append(EvaluationCurve(fractions, scores, auc(fractions, scores), mode))
    mean_auc = float(np.mean([c.auc for c in curves]))
    return InsertionDeletionResult(mode=mode, curves=curves, auc=mean_auc)


def average_drop(
    model: SimilarityModel,
    pair: ImagePair,
    explanations: ExplanationPair,
    mode: str,
    epsilon: float = 0.05,
) -> Optional[float]:
    """Relative similarity drop when images are masked by their maps.

    Returns ``None`` when the baseline similarity is at or below ``epsilon``
    (the pair is skipped and should be counted by the caller).
    """
    if mode not in ("SAD", "CAD"):
        raise ValueError(f"unknown mode {mode!r}")
    map1, map2 = _unit_maps(explanations)
    s = model.pair_similarity(pair)
    if s <= epsilon:
        return None
    masked1 = (pair.first * map1[None]).astype(np.float32)
    masked2 = (pair.second * map2[None]).astype(np.float32)
    if mode == "SAD":
        s_masked = float(model.pair_scores(masked1[None], masked2[None])[0])
        return max(0.0, s - s_masked) / s
    drops = []
    for b1, b2 in ((masked1, pair.second), (pair.first, masked2)):
        s_masked = float(model.pair_scores(b1[None], b2[None])[0])
        drops.append(max(0.0, s - s_masked) / s)
    return float(np.mean(drops))


def max_sensitivity(
    model: SimilarityModel,
    pair: ImagePair,
    method: ExplainFn,
    radius: float,
    n_samples: int = 10,
    seed: int = 0,
) -> SensitivityResult:
    """Largest relative explanation change under uniform noise bounded by
    ``radius`` in the max norm, applied to both images."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    base = method(model, pair)
    reference = np.concatenate([base.map1.ravel(), base.map2.ravel()]).astype(np.float64)
    denom = float(np.linalg.norm(reference))
    if denom == 0.0:
        return SensitivityResult(0.0, radius, n_samples, seed, degenerate=True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        delta1 = rng.uniform(-radius, radius, size=pair.first.shape).astype(np.float32)
        delta2 = rng.uniform(-radius, radius, size=pair.second.shape).astype(np.float32)
        noisy = ImagePair(pair.first + delta1, pair.second + delta2)
        perturbed = method(model, noisy)
        moved = np.concatenate([perturbed.map1.ravel(), perturbed.map2.ravel()])
        worst = max(worst, float(np.linalg.norm(moved - reference)) / denom)
    return SensitivityResult(worst, radius, n_samples, seed)


def _spearman(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    if np.all(a == a.flat[0]) or np.all(b == b.flat[0]):
        return 0.0, True
    rho = stats.spearmanr(a.ravel(), b.ravel()).statistic
    if not np.isfinite(rho):
        return 0.0, True
    return float(rho), False


def sanity_check(
    model: SimilarityModel,
    pair: ImagePair,
    method: ExplainFn,
    stride_layers: int = 3,
    seed: int = 0,
) -> SanityTrace:
    """Cascading randomization from the top layer down.

    Maps are recomputed at randomization depths 0, stride, 2*stride, ...,
    full, and rank-correlated against the depth-0 maps. Constant maps
    correlate as 0 and carry a degenerate flag.
    """
    if stride_layers < 1:
        raise ValueError("stride_layers must be at least 1")
    n_layers = len(model.layer_list)
    depths = list(range(0, n_layers + 1, stride_layers))
    if depths[-1] != n_layers:
        depths.append(n_layers)
    reference = method(model, pair)
    trace = SanityTrace()
    for depth in depths:
        if depth == 0:
            trace.steps.append(SanityStep(0, reference, 1.0, 1.0))
            continue
        randomized = model.randomize_layers(depth, seed)
        expl = method(randomized, pair)
        rho1, deg1 = _spearman(reference.map1, expl.map1)
        rho2, deg2 = _spearman(reference.map2, expl.map2)
        trace.steps.append(SanityStep(depth, expl, rho1, rho2, degenerate=deg1 or deg2))
    return trace
