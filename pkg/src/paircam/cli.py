"""Command-line entry points.

Commands: train, explain, evaluate, dissect, sanity, invert, bench,
summarize, correlate. Every command accepts --config pointing at a JSON file
whose keys mirror the flag names; explicit flags override the file. Reports
embed the resolved run configuration, and identical configs re-produce
identical artifacts.

Exit codes: 0 success, 2 input error, 3 unknown method or metric, 4 empty
dataset, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_or_generate_corpus
from .errors import (
    CheckpointError,
    DivergenceError,
    InputShapeError,
    NumericError,
    PaircamError,
    TrainingError,
    UnknownMethodError,
)
from .inversion import InversionConfig, invert_features
from .methods import ExplainOptions, bench_methods, evaluate_pairs, make_explainer
from .metrics import sanity_check
from .model import build_toy_model, load_checkpoint, save_checkpoint
from .occlusion import OcclusionConfig
from .render import (
    save_image_png,
    save_overlay_png,
    save_sanity_grid_png,
    save_strip_png,
    save_table_png,
)
from .report import (
    group_names,
    pearson,
    report_to_csv_rows,
    summarize,
    write_csv,
    write_json,
    write_tensor,
)
from .saliency import averaged_transforms
from .train import ToyTrainConfig, contrastive_margin, train_toy_contrastive
from .transforms import (
    DEFAULT_AUGMENT_POLICY,
    apply_transform,
    augment_pair,
    interpolation_schedule,
    strength_range,
)
from .types import ImagePair

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_UNKNOWN_METHOD = 3
EXIT_EMPTY = 4
EXIT_NUMERIC = 5

DEFAULT_METRICS = ["SI", "SD", "CI", "CD", "SAD", "CAD"]


class EmptyDatasetError(PaircamError):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with defaults for any flag")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", default=None, help="checkpoint path, or 'untrained'")
    p.add_argument("--pairs", default=None,
                   help="'toy', an image directory, or 'img1,img2' for one explicit pair")
    p.add_argument("--n-pairs", type=int, default=None)
    p.add_argument("--image-side", type=int, default=None)
    p.add_argument("--policy", default=None, help="JSON file with the augmentation policy")


def _add_method_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--methods", nargs="+", default=None)
    p.add_argument("--transform", default=None, help="transform kind for avg-transforms")
    p.add_argument("--L", type=int, default=None, help="pixels per insertion/deletion step")
    p.add_argument("--mask-size", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--n-masks", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paircam",
        description="Explain and evaluate two-input similarity vision models",
    )
    parser.add_argument("--version", action="version", version=f"paircam {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the desk-scale contrastive model")
    _add_common(p)
    p.add_argument("--checkpoint", default=None, help="output checkpoint path")
    p.add_argument("--dataset-size", type=int, default=None)
    p.add_argument("--image-side", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)

    p = sub.add_parser("explain", help="write maps, overlays and metadata for pairs")
    _add_common(p)
    _add_data(p)
    _add_method_flags(p)

    p = sub.add_parser("evaluate", help="aggregate metrics over augmented pairs")
    _add_common(p)
    _add_data(p)
    _add_method_flags(p)
    p.add_argument("--metrics", nargs="+", default=None)

    p = sub.add_parser("dissect", help="render the strength-interpolation strip")
    _add_common(p)
    _add_data(p)
    p.add_argument("--transform", default=None, required=False)
    p.add_argument("--rho-step", type=float, default=None)

    p = sub.add_parser("sanity", help="cascading layer-randomization grids")
    _add_common(p)
    _add_data(p)
    _add_method_flags(p)
    p.add_argument("--stride-layers", type=int, default=None)

    p = sub.add_parser("invert", help="feature inversion per backbone stage")
    _add_common(p)
    _add_data(p)
    p.add_argument("--layers", nargs="+", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)

    p = sub.add_parser("bench", help="time methods over warmed-up repeat runs")
    _add_common(p)
    _add_data(p)
    _add_method_flags(p)

    p = sub.add_parser("summarize", help="grouped-score table from report JSONs")
    _add_common(p)
    p.add_argument("--reports", nargs="+", default=None)

    p = sub.add_parser("correlate", help="Pearson correlation between two CSV columns")
    _add_common(p)
    p.add_argument("--csv", default=None)
    p.add_argument("--x-col", default=None)
    p.add_argument("--y-col", default=None)

    return parser


def _merge_config(args: argparse.Namespace) -> dict:
    """Flags override config-file values; unset flags fall back to the file."""
    merged = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        merged.update(json.loads(path.read_text()))
    for key, value in vars(args).items():
        if key == "config" or value is None:
            continue
        merged[key] = value
    return merged


def _get(cfg: dict, key: str, default):
    value = cfg.get(key, default)
    return default if value is None else value


def _load_policy(cfg: dict):
    policy_path = cfg.get("policy")
    if not policy_path:
        return DEFAULT_AUGMENT_POLICY
    return json.loads(Path(policy_path).read_text())


def _load_model(cfg: dict):
    spec = cfg.get("model")
    if not spec:
        raise FileNotFoundError("--model is required (checkpoint path or 'untrained')")
    if spec == "untrained":
        return build_toy_model(seed=_get(cfg, "seed", 0))
    return load_checkpoint(spec)


def _load_image_file(path: Path, side: int) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((side, side))
    return (np.asarray(rgb, dtype=np.float32) / 255.0).transpose(2, 0, 1)


def _source_images(cfg: dict) -> np.ndarray:
    side = _get(cfg, "image_side", 48)
    n = _get(cfg, "n_pairs", 20)
    seed = _get(cfg, "seed", 0)
    source = _get(cfg, "pairs", "toy")
    if n < 1:
        raise EmptyDatasetError("n_pairs must be at least 1")
    if source == "toy":
        return load_or_generate_corpus(n, side, seed)
    path = Path(source)
    if not path.is_dir():
        raise FileNotFoundError(f"pair source is not a directory: {source}")
    files = sorted(
        f for f in path.iterdir() if f.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")
    )
    if not files:
        raise EmptyDatasetError(f"no images found in {source}")
    return np.stack([_load_image_file(f, side) for f in files[:n]])


def _build_pairs(cfg: dict) -> list[ImagePair]:
    source = _get(cfg, "pairs", "toy")
    if isinstance(source, str) and "," in source:
        side = _get(cfg, "image_side", 48)
        first, second = (Path(s.strip()) for s in source.split(",", 1))
        return [ImagePair(_load_image_file(first, side), _load_image_file(second, side))]
    images = _source_images(cfg)
    policy = _load_policy(cfg)
    seed = _get(cfg, "seed", 0)
    return [augment_pair(img, policy, seed=[seed, i]) for i, img in enumerate(images)]


def _corpus_fill(cfg: dict) -> np.ndarray:
    images = _source_images(cfg)
    return images.mean(axis=(0, 2, 3)).astype(np.float32)


def _occlusion_config(cfg: dict) -> OcclusionConfig:
    side = _get(cfg, "image_side", 48)
    mask = _get(cfg, "mask_size", 64 if side >= 224 else max(4, side // 4))
    stride = _get(cfg, "stride", max(1, mask // 8) if side >= 224 else max(1, mask // 4))
    return OcclusionConfig(
        mask_size=mask,
        stride=stride,
        n_masks=_get(cfg, "n_masks", 100),
        seed=_get(cfg, "seed", 0),
    )


def _explain_options(cfg: dict, fill=None) -> ExplainOptions:
    return ExplainOptions(
        transform_kind=_get(cfg, "transform", "color_jitter"),
        occlusion=_occlusion_config(cfg),
        L=cfg.get("L"),
        deletion_fill=fill,
    )


def _method_slug(name: str) -> str:
    return name.replace("/", "-")


def _out_dir(cfg: dict) -> Path:
    out = Path(_get(cfg, "out", "paircam-out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(cfg: dict) -> int:
    config = ToyTrainConfig(
        dataset_size=_get(cfg, "dataset_size", 256),
        image_side=_get(cfg, "image_side", 32),
        batch_size=_get(cfg, "batch_size", 64),
        epochs=_get(cfg, "epochs", 30),
        temperature=_get(cfg, "temperature", 0.1),
        learning_rate=_get(cfg, "lr", 2e-3),
        seed=_get(cfg, "seed", 0),
    )
    out = _out_dir(cfg)
    checkpoint = Path(_get(cfg, "checkpoint", out / "toy.pcam"))
    model, trace = train_toy_contrastive(config, _load_policy(cfg))
    save_checkpoint(model, checkpoint)
    margin = contrastive_margin(model, seed=config.seed, image_side=config.image_side)
    write_json(
        out / "train.json",
        {
            "run_config": _jsonable(cfg),
            "checkpoint": str(checkpoint),
            "initial_loss": trace.initial_loss,
            "epoch_losses": trace.epoch_losses,
            "holdout": margin,
        },
    )
    print(f"checkpoint written to {checkpoint}")
    return EXIT_OK


def cmd_explain(cfg: dict) -> int:
    model = _load_model(cfg)
    cfg.setdefault("n_pairs", 1)
    pairs = _build_pairs(cfg)
    methods = _get(cfg, "methods", ["int-cam/mean/gi"])
    options = _explain_options(cfg)
    out = _out_dir(cfg)
    seed = _get(cfg, "seed", 0)
    for name in methods:
        explainer = make_explainer(name, options)
        slug = _method_slug(name)
        for i, pair in enumerate(pairs):
            expl = explainer(model, pair, seed)
            stem = f"pair{i:03d}_{slug}"
            write_tensor(out / f"{stem}_map1.xai1", expl.map1)
            write_tensor(out / f"{stem}_map2.xai1", expl.map2)
            norm = explainer.eval_norm if expl.normalization == "raw" else "minmax"
            save_overlay_png(out / f"{stem}_overlay1.png", pair.first, expl.map1, norm)
            save_overlay_png(out / f"{stem}_overlay2.png", pair.second, expl.map2, norm)
            write_json(
                out / f"{stem}.json",
                {
                    "run_config": _jsonable(cfg),
                    "method": {"name": expl.method, "options": _jsonable(expl.options)},
                    "similarity": model.pair_similarity(pair),
                    "seed": seed,
                },
            )
    print(f"wrote explanations for {len(pairs)} pair(s) to {out}")
    return EXIT_OK


def cmd_evaluate(cfg: dict) -> int:
    model = _load_model(cfg)
    pairs = _build_pairs(cfg)
    if not pairs:
        raise EmptyDatasetError("no pairs to evaluate")
    methods = _get(cfg, "methods", ["grad-cam-baseline"])
    metric_names = _get(cfg, "metrics", DEFAULT_METRICS)
    source = _get(cfg, "pairs", "toy")
    fill = None if (isinstance(source, str) and "," in source) else _corpus_fill(cfg)
    options = _explain_options(cfg, fill=fill)
    results = evaluate_pairs(model, pairs, methods, metric_names, options, _get(cfg, "seed", 0))
    out = _out_dir(cfg)
    report = {"run_config": _jsonable(cfg), "n_pairs": len(pairs), "results": results}
    write_json(out / "report.json", report)
    write_csv(
        out / "report.csv",
        report_to_csv_rows(report),
        ["method", "metric", "value", "n_pairs", "skipped"],
    )
    print(f"evaluated {len(methods)} method(s) x {len(metric_names)} metric(s) "
          f"over {len(pairs)} pairs -> {out}")
    return EXIT_OK


def cmd_dissect(cfg: dict) -> int:
    model = _load_model(cfg)
    cfg.setdefault("n_pairs", 1)
    pair = _build_pairs(cfg)[0]
    kind = _get(cfg, "transform", "color_jitter")
    rho_step = _get(cfg, "rho_step", 0.1)
    endpoint = apply_transform(pair.second, kind, strength_range(kind)[1])
    schedule = interpolation_schedule(pair.first, endpoint, rho_step)
    scores = [
        float(model.pair_scores(pair.first[None], frame[None])[0]) for frame in schedule.frames
    ]
    expl = averaged_transforms(model, pair, kind, rho_step=rho_step, seed=_get(cfg, "seed", 0))
    out = _out_dir(cfg)
    save_strip_png(out / "dissect_strip.png", schedule.frames, scores)
    save_overlay_png(out / "dissect_map1.png", pair.first, expl.map1, "abs_minmax")
    save_overlay_png(out / "dissect_map2.png", pair.second, expl.map2, "abs_minmax")
    write_tensor(out / "dissect_map1.xai1", expl.map1)
    write_tensor(out / "dissect_map2.xai1", expl.map2)
    write_json(
        out / "dissect.json",
        {
            "run_config": _jsonable(cfg),
            "transform": kind,
            "rhos": schedule.rhos,
            "scores": scores,
        },
    )
    print(f"dissected {kind} over {len(schedule.frames)} frames -> {out}")
    return EXIT_OK


def cmd_sanity(cfg: dict) -> int:
    model = _load_model(cfg)
    cfg.setdefault("n_pairs", 1)
    pair = _build_pairs(cfg)[0]
    methods = _get(cfg, "methods", ["int-cam/mean/gi"])
    options = _explain_options(cfg)
    stride = _get(cfg, "stride_layers", 3)
    seed = _get(cfg, "seed", 0)
    out = _out_dir(cfg)
    payload = {"run_config": _jsonable(cfg), "methods": {}}
    for name in methods:
        explainer = make_explainer(name, options)
        trace = sanity_check(
            model, pair, lambda m, p: explainer(m, p, seed), stride_layers=stride, seed=seed
        )
        save_sanity_grid_png(out / f"sanity_{_method_slug(name)}.png", pair, trace)
        payload["methods"][name] = [
            {
                "layers_randomized": s.layers_randomized,
                "spearman1": s.spearman1,
                "spearman2": s.spearman2,
                "degenerate": s.degenerate,
            }
            for s in trace.steps
        ]
    write_json(out / "sanity.json", payload)
    print(f"sanity traces for {len(methods)} method(s) -> {out}")
    return EXIT_OK


def cmd_invert(cfg: dict) -> int:
    model = _load_model(cfg)
    cfg.setdefault("n_pairs", 1)
    images = _source_images(cfg)
    target = images[0]
    n_stages = len(model.backbone.stages)
    layers = _get(cfg, "layers", list(range(n_stages)))
    out = _out_dir(cfg)
    payload = {"run_config": _jsonable(cfg), "layers": {}}
    for layer in layers:
        if not -n_stages <= layer < n_stages:
            raise InputShapeError(f"layer {layer} out of range for {n_stages} stages")
        config = InversionConfig(
            layer_id=layer,
            iterations=_get(cfg, "iterations", 200),
            seed=_get(cfg, "seed", 0),
        )
        synthesized, trace = invert_features(model, target, config)
        save_image_png(out / f"invert_layer{layer}.png", synthesized)
        payload["layers"][str(layer)] = {
            "total_loss": trace.total_loss,
            "feature_mse": trace.feature_mse,
        }
    save_image_png(out / "invert_target.png", target)
    write_json(out / "invert.json", payload)
    print(f"inverted {len(layers)} layer(s) -> {out}")
    return EXIT_OK


def cmd_bench(cfg: dict) -> int:
    model = _load_model(cfg)
    cfg.setdefault("n_pairs", 1)
    pair = _build_pairs(cfg)[0]
    methods = _get(cfg, "methods", ["grad-cam-baseline", "int-cam/mean/gi"])
    rows = bench_methods(model, pair, methods, _explain_options(cfg), runs=5,
                         seed=_get(cfg, "seed", 0))
    out = _out_dir(cfg)
    write_json(out / "bench.json", {"run_config": _jsonable(cfg), "timings": rows})
    for row in rows:
        print(f"{row['method']}: {row['mean_seconds']:.4f}s over {row['runs']} runs")
    return EXIT_OK


def cmd_summarize(cfg: dict) -> int:
    report_paths = _get(cfg, "reports", [])
    if not report_paths:
        raise EmptyDatasetError("no report files given")
    results = []
    for path in report_paths:
        results.extend(json.loads(Path(path).read_text()).get("results", []))
    rows = summarize(results)
    if not rows:
        raise EmptyDatasetError("reports contained no metric results")
    out = _out_dir(cfg)
    columns = group_names()
    write_csv(out / "summary.csv", rows, ["method"] + columns)
    save_table_png(out / "summary.png", rows, columns)
    print(f"summary of {len(rows)} method(s) -> {out}")
    return EXIT_OK


def cmd_correlate(cfg: dict) -> int:
    import csv as csvmod

    csv_path = cfg.get("csv")
    if not csv_path:
        raise FileNotFoundError("--csv is required")
    with open(csv_path, newline="") as fh:
        reader = csvmod.DictReader(fh)
        rows = list(reader)
        fields = reader.fieldnames or []
    if len(fields) < 2:
        raise EmptyDatasetError("correlate needs a CSV with at least two columns")
    x_col = _get(cfg, "x_col", fields[0])
    y_col = _get(cfg, "y_col", fields[1])
    xs = [float(r[x_col]) for r in rows]
    ys = [float(r[y_col]) for r in rows]
    value = pearson(xs, ys)
    out = _out_dir(cfg)
    write_json(out / "correlation.json",
               {"run_config": _jsonable(cfg), "x": x_col, "y": y_col, "pearson": value})
    print(f"pearson({x_col}, {y_col}) = {value:.4f}")
    return EXIT_OK


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


COMMANDS = {
    "train": cmd_train,
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "dissect": cmd_dissect,
    "sanity": cmd_sanity,
    "invert": cmd_invert,
    "bench": cmd_bench,
    "summarize": cmd_summarize,
    "correlate": cmd_correlate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge_config(args)
        return COMMANDS[args.command](cfg)
    except UnknownMethodError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN_METHOD
    except EmptyDatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (NumericError, DivergenceError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, InputShapeError, FileNotFoundError, OSError, ValueError,
            PaircamError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
