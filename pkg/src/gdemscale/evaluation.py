"""Depth error metrics, aggregation and report files."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyEvaluation
from .io import write_error_png, write_pfm
from .projection import DEFAULT_RANGE, RangeMask

SCHEMA_VERSION = 1
TABLE_COLUMNS = ("AbsRel", "SqRel", "RMSE", "LogRMSE", "δ1", "δ2", "δ3", "δ̄1", "δ̄2", "δ̄3")


@dataclass(frozen=True)
class _Sums:
    n: int
    abs_rel: float
    sq_rel: float
    sq: float
    log_sq: float
    delta: tuple[int, int, int]
    delta_bar: tuple[int, int, int]

    def __add__(self, other: "_Sums") -> "_Sums":
        return _Sums(
            self.n + other.n,
            self.abs_rel + other.abs_rel,
            self.sq_rel + other.sq_rel,
            self.sq + other.sq,
            self.log_sq + other.log_sq,
            tuple(a + b for a, b in zip(self.delta, other.delta)),
            tuple(a + b for a, b in zip(self.delta_bar, other.delta_bar)),
        )


@dataclass(frozen=True)
class MetricsReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    log_rmse: float
    delta: tuple[float, float, float]
    delta_bar: tuple[float, float, float]
    n_pixels: int
    n_frames: int = 1
    n_failed_frames: int = 0
    n_failed_pixels: int = 0
    sums: _Sums | None = field(default=None, repr=False, compare=False)

    def row(self) -> list[float]:
        return [self.abs_rel, self.sq_rel, self.rmse, self.log_rmse, *self.delta, *self.delta_bar]

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("sums")
        d["delta"] = list(self.delta)
        d["delta_bar"] = list(self.delta_bar)
        return d


def _sums(pred: np.ndarray, ref: np.ndarray) -> _Sums:
    diff = pred - ref
    ratio = np.maximum(ref / pred, pred / ref)
    log_d = np.log(pred) - np.log(ref)
    return _Sums(
        n=int(pred.size),
        abs_rel=float(np.sum(np.abs(diff) / ref)),
        sq_rel=float(np.sum(diff * diff / ref)),
        sq=float(np.sum(diff * diff)),
        log_sq=float(np.sum(log_d * log_d)),
        delta=tuple(int(np.count_nonzero(ratio < 1.25**t)) for t in (1, 2, 3)),
        delta_bar=tuple(int(np.count_nonzero(ratio < 1.025**t)) for t in (1, 2, 3)),
    )


def _from_sums(s: _Sums, n_frames: int, n_failed_frames: int, n_failed_pixels: int) -> MetricsReport:
    n = s.n
    return MetricsReport(
        abs_rel=s.abs_rel / n,
        sq_rel=s.sq_rel / n,
        rmse=math.sqrt(s.sq / n),
        log_rmse=math.sqrt(s.log_sq / n),
        delta=tuple(c / n for c in s.delta),
        delta_bar=tuple(c / n for c in s.delta_bar),
        n_pixels=n,
        n_frames=n_frames,
        n_failed_frames=n_failed_frames,
        n_failed_pixels=n_failed_pixels,
        sums=s,
    )


def evaluation_mask(pred: np.ndarray, ref: np.ndarray, rng: RangeMask | None = DEFAULT_RANGE):
    """``(used, failed)``: reference-valid pixels in range, split by whether
    the prediction is usable there."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"prediction {pred.shape} and reference {ref.shape} differ in shape")
    ref_ok = np.isfinite(ref) & (ref > 0)
    if rng is not None:
        ref_ok &= rng(np.where(ref_ok, ref, 0.0))
    pred_ok = np.isfinite(pred) & (pred > 0)
    return ref_ok & pred_ok, ref_ok & ~pred_ok


def compute_metrics(pred: np.ndarray, ref: np.ndarray, rng: RangeMask | None = DEFAULT_RANGE) -> MetricsReport:
    """Per-frame metrics over reference pixels inside ``rng``.

    Reference pixels where the prediction is missing or non-positive are
    counted in ``n_failed_pixels`` and left out of every mean.
    """
    used, failed = evaluation_mask(pred, ref, rng)
    if not used.any():
        raise EmptyEvaluation("no pixel is valid in both prediction and reference within range")
    pred = np.asarray(pred, dtype=np.float64)[used]
    ref = np.asarray(ref, dtype=np.float64)[used]
    return _from_sums(_sums(pred, ref), 1, 0, int(failed.sum()))


def aggregate(reports, n_failed_frames: int = 0) -> MetricsReport:
    """Pixel-pooled aggregate: every pixel of every frame weighs the same."""
    reports = list(reports)
    if not reports:
        raise EmptyEvaluation("nothing to aggregate")
    total = reports[0].sums
    for r in reports[1:]:
        total = total + r.sums
    return _from_sums(
        total,
        sum(r.n_frames for r in reports),
        n_failed_frames + sum(r.n_failed_frames for r in reports),
        sum(r.n_failed_pixels for r in reports),
    )


def frame_average(reports) -> dict:
    """Unweighted mean of the per-frame metrics."""
    reports = list(reports)
    if not reports:
        raise EmptyEvaluation("nothing to aggregate")
    rows = np.array([r.row() for r in reports])
    mean = rows.mean(axis=0)
    return {
        "abs_rel": float(mean[0]),
        "sq_rel": float(mean[1]),
        "rmse": float(mean[2]),
        "log_rmse": float(mean[3]),
        "delta": [float(v) for v in mean[4:7]],
        "delta_bar": [float(v) for v in mean[7:10]],
    }


def error_map(pred: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Per-pixel ``|D - D*| / D*``; NaN where either side is invalid."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    ok = np.isfinite(pred) & np.isfinite(ref) & (pred > 0) & (ref > 0)
    out = np.full(ref.shape, np.nan)
    out[ok] = np.abs(pred[ok] - ref[ok]) / ref[ok]
    return out


def markdown_table(rows: dict[str, MetricsReport]) -> str:
    lines = [
        "| Scene | " + " | ".join(TABLE_COLUMNS) + " |",
        "|---" * (len(TABLE_COLUMNS) + 1) + "|",
    ]
    for name, rep in rows.items():
        lines.append(f"| {name} | " + " | ".join(f"{v:.3f}" for v in rep.row()) + " |")
    return "\n".join(lines) + "\n"


def emit_report(path, frames: dict[str, MetricsReport], rng: RangeMask | None = DEFAULT_RANGE,
                failed: dict[str, str] | None = None, markdown: bool = False) -> dict:
    """Write the JSON report (and optionally a markdown table next to it)."""
    failed = failed or {}
    doc = {
        "schema": SCHEMA_VERSION,
        "range_m": None if rng is None else [rng.range_min, rng.range_max],
        "aggregation": "pixel-pooled; frame_average gives the unweighted per-frame mean",
        "frames": {k: v.to_dict() for k, v in sorted(frames.items())},
        "failed_frames": dict(sorted(failed.items())),
    }
    if frames:
        pooled = aggregate(frames.values(), n_failed_frames=len(failed))
        doc["pooled"] = pooled.to_dict()
        doc["frame_average"] = frame_average(frames.values())
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        if markdown and frames:
            path.with_suffix(".md").write_text(markdown_table({"pooled": pooled}))
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc}") from exc
    return doc


def emit_plots(out_dir, name: str, pred: np.ndarray, ref: np.ndarray) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    err = error_map(pred, ref)
    write_pfm(out / f"{name}_abs_rel.pfm", np.nan_to_num(err, nan=0.0))
    write_error_png(out / f"{name}_abs_rel.png", err)
    return out
