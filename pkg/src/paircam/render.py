"""PNG rendering: map overlays, dissection strips, sanity grids, score tables.

Rendering never feeds evaluation; raw maps are always written alongside as
tensor files so colormap choices cannot affect metrics.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib import cm
from PIL import Image

from .saliency import postprocess_map

OVERLAY_ALPHA = 0.5


def _to_hwc(image: np.ndarray) -> np.ndarray:
    return np.clip(image, 0.0, 1.0).transpose(1, 2, 0)


def overlay_array(image: np.ndarray, map01: np.ndarray, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    """Jet-colormapped map alpha-blended over the image; red marks importance."""
    heat = cm.jet(np.clip(map01, 0.0, 1.0))[..., :3]
    return (1.0 - alpha) * _to_hwc(image) + alpha * heat


def save_png(path, rgb: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = (np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(data).save(tmp, format="PNG")
    tmp.replace(path)


def save_image_png(path, image: np.ndarray) -> None:
    save_png(path, _to_hwc(image))


def save_overlay_png(path, image: np.ndarray, map_values: np.ndarray, norm: str = "minmax") -> None:
    save_png(path, overlay_array(image, postprocess_map(map_values, norm)))


def save_strip_png(path, frames: list[np.ndarray], scores: list[float] | None = None) -> None:
    """Row of frames, optionally titled with their similarity scores."""
    n = len(frames)
    fig, axes = plt.subplots(1, n, figsize=(1.4 * n, 1.8))
    axes = np.atleast_1d(axes)
    for i, ax in enumerate(axes):
        ax.imshow(_to_hwc(frames[i]))
        ax.set_axis_off()
        if scores is not None:
            ax.set_title(f"{scores[i]:.3f}", fontsize=7)
    fig.tight_layout(pad=0.2)
    _save_fig(fig, path)


def save_sanity_grid_png(path, pair, trace) -> None:
    """One column per randomization step, overlay rows for both images."""
    steps = trace.steps
    n = len(steps)
    fig, axes = plt.subplots(2, n, figsize=(1.4 * n, 3.0), squeeze=False)
    for col, step in enumerate(steps):
        for row, (image, map_values) in enumerate(
            ((pair.first, step.explanation.map1), (pair.second, step.explanation.map2))
        ):
            ax = axes[row][col]
            ax.imshow(overlay_array(image, postprocess_map(map_values, "minmax")))
            ax.set_axis_off()
            if row == 0:
                ax.set_title(f"{step.layers_randomized} rand.", fontsize=7)
    fig.tight_layout(pad=0.2)
    _save_fig(fig, path)


def save_table_png(path, rows: list[dict], columns: list[str], row_key: str = "method") -> None:
    """Heatmap table of group scores per method."""
    labels = [row[row_key] for row in rows]
    values = np.array(
        [[np.nan if row.get(c) is None else float(row[c]) for c in columns] for row in rows]
    )
    fig, ax = plt.subplots(figsize=(1.6 * len(columns) + 3.0, 0.45 * len(rows) + 1.6))
    masked = np.ma.masked_invalid(values)
    im = ax.imshow(masked, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(columns)), columns, fontsize=7, rotation=20)
    ax.set_yticks(range(len(labels)), labels, fontsize=7)
    for i in range(values.shape[0]):
        for j in range(values.shape[1]):
            text = "--" if np.isnan(values[i, j]) else f"{values[i, j]:.3f}"
            ax.text(j, i, text, ha="center", va="center", fontsize=7, color="white")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    _save_fig(fig, path)


def _save_fig(fig, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format="png", dpi=120)
    plt.close(fig)
    tmp.replace(path)
