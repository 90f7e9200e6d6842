"""Name-based dispatch of explanation methods and the evaluation runner.

Registered names:

    input-x-grad[/guided]      smooth-grad[/guided]
    avg-transforms[/guided][/smooth]
    cond-occlusion             pairwise-occlusion
    grad-cam-baseline          deep-sim
    int-cam/{mean|max|attn}/{gi|nogi}
    random

``eval_norm`` records how raw maps are normalized before feeding metrics.
All families use signed min-max ranking: for gradient maps, pixels that
support the similarity outrank pixels that oppose it, which is what the
insertion/deletion metrics reward; ranking by absolute magnitude mixes the
two and erases the ordering signal at desk scale.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import cam, metrics, occlusion, saliency
from .errors import UnknownMethodError
from .model import SimilarityModel
from .occlusion import OcclusionConfig
from .types import ExplanationPair, ImagePair

REDUCTION_ALIASES = {"mean": "mean", "max": "max", "attn": "attention"}


@dataclass
class ExplainOptions:
    transform_kind: str = "color_jitter"
    scheme: str = "interpolate"
    n_samples: int = 25
    noise_sigma: Optional[float] = None
    occlusion: OcclusionConfig = field(default_factory=OcclusionConfig)
    sensitivity_radius: float = 0.05
    sensitivity_samples: int = 5
    L: Optional[int] = None
    deletion_fill: Optional[np.ndarray] = None
    drop_epsilon: float = 0.05


@dataclass
class Explainer:
    name: str
    eval_norm: str  # "abs_minmax" or "minmax"
    fn: Callable[[SimilarityModel, ImagePair, int], ExplanationPair]

    def __call__(self, model, pair, seed: int = 0) -> ExplanationPair:
        return self.fn(model, pair, seed)

    def eval_maps(self, expl: ExplanationPair) -> ExplanationPair:
        """Metric-ready copy with both maps normalized into [0, 1]."""
        if expl.normalization == "minmax":
            return expl
        return ExplanationPair(
            map1=saliency.postprocess_map(expl.map1, self.eval_norm),
            map2=saliency.postprocess_map(expl.map2, self.eval_norm),
            method=expl.method,
            options=dict(expl.options),
            normalization="minmax",
        )


def _random_maps(model, pair, seed) -> ExplanationPair:
    rng = np.random.default_rng(seed)
    h, w = pair.spatial_shape
    return ExplanationPair(
        map1=rng.random((h, w), dtype=np.float32),
        map2=rng.random((h, w), dtype=np.float32),
        method="random",
        options={"seed": seed},
        normalization="minmax",
    )


def list_methods() -> list[str]:
    names = ["input-x-grad", "input-x-grad/guided", "smooth-grad", "smooth-grad/guided"]
    names += ["avg-transforms", "avg-transforms/guided", "avg-transforms/smooth"]
    names += ["cond-occlusion", "pairwise-occlusion", "grad-cam-baseline", "deep-sim"]
    names += [f"int-cam/{r}/{g}" for r in ("mean", "max", "attn") for g in ("gi", "nogi")]
    names.append("random")
    return names


def make_explainer(name: str, options: Optional[ExplainOptions] = None) -> Explainer:
    """Resolve a method name into a seeded callable plus its metric norm."""
    opts = options or ExplainOptions()
    parts = name.split("/")
    base, flags = parts[0], parts[1:]
    guided = "guided" in flags
    mode = "guided" if guided else "standard"

    if base == "input-x-grad" and set(flags) <= {"guided"}:
        def fn(model, pair, seed):
            with saliency.backprop_mode(model, mode):
                return saliency.input_x_gradient(model, pair)
        return Explainer(name, "minmax", fn)

    if base == "smooth-grad" and set(flags) <= {"guided"}:
        def fn(model, pair, seed):
            with saliency.backprop_mode(model, mode):
                return saliency.smooth_grad(
                    model, pair, opts.n_samples, opts.noise_sigma, seed=seed
                )
        return Explainer(name, "minmax", fn)

    if base == "avg-transforms" and set(flags) <= {"guided", "smooth"}:
        smooth = "smooth" in flags
        def fn(model, pair, seed):
            return saliency.averaged_transforms(
                model,
                pair,
                kind=opts.transform_kind,
                guided=guided,
                smooth=smooth,
                n_samples=opts.n_samples,
                noise_sigma=opts.noise_sigma,
                scheme=opts.scheme,
                seed=seed,
            )
        return Explainer(name, "minmax", fn)

    if name == "cond-occlusion":
        def fn(model, pair, seed):
            return occlusion.conditional_occlusion(model, pair, opts.occlusion)
        return Explainer(name, "minmax", fn)

    if name == "pairwise-occlusion":
        def fn(model, pair, seed):
            return occlusion.pairwise_occlusion(
                model, pair, replace(opts.occlusion, seed=seed)
            )
        return Explainer(name, "minmax", fn)

    if name == "grad-cam-baseline":
        return Explainer(name, "minmax", lambda model, pair, seed: cam.baseline_grad_cam(model, pair))

    if name == "deep-sim":
        return Explainer(name, "minmax", lambda model, pair, seed: cam.deep_similarity(model, pair))

    if base == "int-cam" and len(flags) == 2 and flags[0] in REDUCTION_ALIASES:
        reduction = REDUCTION_ALIASES[flags[0]]
        use_gi = flags[1] == "gi"
        if flags[1] in ("gi", "nogi"):
            def fn(model, pair, seed):
                return cam.interaction_cam(model, pair, reduction, use_gradient_interaction=use_gi)
            return Explainer(name, "minmax", fn)

    if name == "random":
        return Explainer(name, "minmax", _random_maps)

    raise UnknownMethodError(f"unknown method {name!r}; known: {', '.join(list_methods())}")


METRIC_NAMES = ("SI", "SD", "CI", "CD", "SAD", "CAD", "MS")


def evaluate_pairs(
    model: SimilarityModel,
    pairs: list[ImagePair],
    method_names: list[str],
    metric_names: list[str],
    options: Optional[ExplainOptions] = None,
    seed: int = 0,
) -> list[dict]:
    """Per-method, per-metric aggregates over a pair list.

    Returns one result entry per (method, metric) combination with the mean
    value, the number of evaluated pairs and the skipped count.
    """
    opts = options or ExplainOptions()
    for metric in metric_names:
        if metric not in METRIC_NAMES:
            raise UnknownMethodError(
                f"unknown metric {metric!r}; known: {', '.join(METRIC_NAMES)}"
            )
    results = []
    for method_name in method_names:
        explainer = make_explainer(method_name, opts)
        per_metric: dict[str, list[float]] = {m: [] for m in metric_names}
        skipped: dict[str, int] = {m: 0 for m in metric_names}
        for index, pair in enumerate(pairs):
            pair_seed = int(np.random.default_rng([seed, index]).integers(2**31))
            expl = explainer(model, pair, pair_seed)
            ready = explainer.eval_maps(expl)
            for metric in metric_names:
                if metric in ("SI", "SD", "CI", "CD"):
                    result = metrics.insertion_deletion_curve(
                        model, pair, ready, metric, L=opts.L, deletion_fill=opts.deletion_fill
                    )
                    per_metric[metric].append(result.auc)
                elif metric in ("SAD", "CAD"):
                    drop = metrics.average_drop(model, pair, ready, metric, opts.drop_epsilon)
                    if drop is None:
                        skipped[metric] += 1
                    else:
                        per_metric[metric].append(drop)
                elif metric == "MS":
                    sens = metrics.max_sensitivity(
                        model,
                        pair,
                        lambda m, p: explainer.eval_maps(explainer(m, p, pair_seed)),
                        radius=opts.sensitivity_radius,
                        n_samples=opts.sensitivity_samples,
                        seed=pair_seed,
                    )
                    per_metric[metric].append(sens.value)
        for metric in metric_names:
            values = per_metric[metric]
            entry = {
                "method": method_name,
                "metric": metric,
                "mode": metric,
                "n_pairs": len(values),
                "skipped": skipped[metric],
                "config": {
                    "L": opts.L,
                    "transform_kind": opts.transform_kind,
                    "sensitivity_radius": opts.sensitivity_radius,
                },
            }
            value = float(np.mean(values)) if values else None
            if metric in ("SI", "SD", "CI", "CD"):
                entry["auc"] = value
            elif metric in ("SAD", "CAD"):
                entry["drop"] = value
            else:
                entry["sensitivity"] = value
            results.append(entry)
    return results


def bench_methods(
    model: SimilarityModel,
    pair: ImagePair,
    method_names: list[str],
    options: Optional[ExplainOptions] = None,
    runs: int = 5,
    seed: int = 0,
) -> list[dict]:
    """Mean wall-clock seconds per method over ``runs`` timed runs after one
    warm-up run."""
    opts = options or ExplainOptions()
    rows = []
    for name in method_names:
        explainer = make_explainer(name, opts)
        explainer(model, pair, seed)  # warm-up
        times = []
        for _ in range(runs):
            start = time.perf_counter()
            explainer(model, pair, seed)
            times.append(time.perf_counter() - start)
        rows.append({"method": name, "mean_seconds": float(np.mean(times)), "runs": runs})
    return rows
