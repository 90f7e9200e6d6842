"""Report artifacts: the XAI1 tensor file format, JSON/CSV reports, the
grouped-score summary and the downstream-correlation helper.

JSON is the canonical report format (it embeds the full run config); CSV is
a lossy export for tables. All writes go through a temp-file-then-rename so
partially written artifacts never appear under the final name.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import UndefinedCorrelationError

TENSOR_MAGIC = b"XAI1"

METRIC_GROUPS = [
    ("insertion (SI, CI)", ("SI", "CI"), False),
    ("deletion (SD, CD)", ("SD", "CD"), True),
    ("average drop (SAD, CAD)", ("SAD", "CAD"), True),
]


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def write_tensor(path, array: np.ndarray) -> None:
    """Serialize an array: magic, u8 ndim, u32 dims, little-endian f32 payload."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim > 255:
        raise ValueError("too many dimensions for the tensor format")
    buf = io.BytesIO()
    buf.write(TENSOR_MAGIC)
    buf.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        buf.write(struct.pack("<I", dim))
    buf.write(arr.tobytes())
    atomic_write_bytes(path, buf.getvalue())


def read_tensor(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != TENSOR_MAGIC:
        raise ValueError(f"bad tensor magic in {path}")
    (ndim,) = struct.unpack("<B", blob[4:5])
    header_end = 5 + 4 * ndim
    if len(blob) < header_end:
        raise ValueError(f"truncated tensor header in {path}")
    dims = struct.unpack(f"<{ndim}I", blob[5:header_end])
    count = int(np.prod(dims)) if dims else 1
    if len(blob) != header_end + count * 4:
        raise ValueError(f"tensor payload size mismatch in {path}")
    return np.frombuffer(blob, dtype="<f4", count=count, offset=header_end).reshape(dims).copy()


def write_json(path, payload: dict) -> None:
    atomic_write_bytes(path, json.dumps(payload, indent=2, sort_keys=True).encode("utf-8"))


def write_csv(path, rows: list[dict], columns: list[str]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns)
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in columns})
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def report_to_csv_rows(report: dict) -> list[dict]:
    rows = []
    for entry in report.get("results", []):
        value = entry.get("auc", entry.get("drop", entry.get("sensitivity")))
        rows.append(
            {
                "method": entry["method"],
                "metric": entry["metric"],
                "value": value,
                "n_pairs": entry.get("n_pairs", ""),
                "skipped": entry.get("skipped", ""),
            }
        )
    return rows


def pearson(xs, ys) -> float:
    """Product-moment correlation; constant inputs are rejected."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("pearson needs at least two points")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelationError("correlation of a constant sequence is undefined")
    xc = x - x.mean()
    yc = y - y.mean()
    return float((xc @ yc) / np.sqrt((xc @ xc) * (yc @ yc)))


def summarize(results: list[dict]) -> list[dict]:
    """Cluster the six metrics into three groups per method.

    The insertion group score is the plain mean; the deletion and average
    drop groups are 1 - mean so that higher is better everywhere. A method
    missing a group's metrics gets ``None`` for that group.
    """
    by_method: dict[str, dict[str, float]] = {}
    for entry in results:
        value = entry.get("auc", entry.get("drop"))
        if value is None:
            continue
        by_method.setdefault(entry["method"], {})[entry["metric"]] = float(value)

    rows = []
    for method, metrics in by_method.items():
        row = {"method": method}
        for group_name, members, invert in METRIC_GROUPS:
            if all(m in metrics for m in members):
                mean = float(np.mean([metrics[m] for m in members]))
                row[group_name] = 1.0 - mean if invert else mean
            else:
                row[group_name] = None
        rows.append(row)
    return rows


def group_names() -> list[str]:
    return [name for name, _, _ in METRIC_GROUPS]
