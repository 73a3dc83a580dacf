"""Gaze labels, the training objective, fixation filtering, and evaluation metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from .errors import ShapeError, UsageError
from .tensor import Tensor

# 17-point sweep over per-pixel heatmap mass, from 0.1% upward
DEFAULT_THRESHOLDS = (
    0.001, 0.002, 0.003, 0.005, 0.0075, 0.01, 0.015, 0.02, 0.03,
    0.05, 0.075, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5,
)


def uniform_label(h: int, w: int) -> np.ndarray:
    return np.full((h, w), 1.0 / (h * w), dtype=np.float64)


def gaussian_label(gaze_xy, h: int, w: int, kernel_size: int = 19, sigma: float = 3.0) -> np.ndarray:
    """Truncated isotropic gaussian centered at the gaze point, renormalized.

    The window is the square kernel of the given (odd) size around the gaze;
    values outside are exactly zero. Border clipping just loses window cells,
    after which the remainder is renormalized to sum 1.
    """
    gx, gy = float(gaze_xy[0]), float(gaze_xy[1])
    if kernel_size % 2 == 0:
        raise UsageError(f"kernel size must be odd, got {kernel_size}")
    if not (0 <= gx <= w - 1 and 0 <= gy <= h - 1):
        raise UsageError(f"gaze ({gx}, {gy}) outside the {h}x{w} grid")
    radius = (kernel_size - 1) / 2
    ys = np.arange(h, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)
    dy2 = (ys - gy)[:, None] ** 2
    dx2 = (xs - gx)[None, :] ** 2
    out = np.exp(-(dy2 + dx2) / (2.0 * sigma * sigma))
    window = (np.abs(ys - gy)[:, None] <= radius) & (np.abs(xs - gx)[None, :] <= radius)
    out = np.where(window, out, 0.0)
    return out / out.sum()


def kl_loss(label, pred: Tensor) -> Tensor:
    """Mean over frames of sum(label * log(label / pred)), with 0*log(0) = 0.

    ``label`` is a constant array of per-frame distributions with the same
    shape as ``pred`` (frames on all leading axes, the grid on the last two).
    """
    lab = label.data if isinstance(label, Tensor) else np.asarray(label)
    if lab.shape != pred.shape:
        raise ShapeError(f"label shape {lab.shape} != prediction shape {pred.shape}")
    lab = lab.astype(pred.dtype, copy=False)
    frame_axes = tuple(range(lab.ndim - 2))
    n_frames = int(np.prod(lab.shape[:-2])) if frame_axes else 1
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(lab > 0, lab * np.log(lab), 0.0).sum() / n_frames
    # keep log() finite where the label is zero; those cells contribute exactly 0
    guard = np.where(lab > 0, 0.0, np.finfo(pred.dtype).tiny).astype(pred.dtype)
    logp = ops.tlog(ops.add(pred, Tensor(guard)))
    cross = ops.tmean(ops.tsum(ops.mul(logp, Tensor(lab)), axis=(-1, -2)))
    return ops.sub(Tensor(np.asarray(ent, dtype=pred.dtype)), cross)


def cross_entropy(logits: Tensor, class_index: int) -> Tensor:
    """Negative log softmax probability of the given class, for 1-D logits."""
    if logits.ndim != 1:
        raise ShapeError(f"expected 1-D logits, got {logits.shape}")
    k = logits.shape[0]
    if not 0 <= class_index < k:
        raise UsageError(f"class index {class_index} out of range for {k} classes")
    m = float(logits.data.max())
    z = ops.sub(logits, m)
    lse = ops.add(ops.tlog(ops.tsum(ops.texp(z))), m)
    picked = ops.reshape(ops.narrow(logits, 0, class_index, class_index + 1), ())
    return ops.sub(lse, picked)


def fixation_filter(track, threshold: float = 40.0) -> list[str]:
    """Label each tracked point 'fixation' or 'saccade'.

    ``track`` is a sequence of (frame, x, y) for tracked frames only. A point
    is a saccade iff the previous frame (frame-1) is also tracked and the
    euclidean distance strictly exceeds the threshold; the first point of
    every tracked run is a fixation.
    """
    out = []
    prev = None
    for frame, x, y in track:
        if prev is not None and prev[0] == frame - 1:
            dist = float(np.hypot(x - prev[1], y - prev[2]))
            out.append("saccade" if dist > threshold else "fixation")
        else:
            out.append("fixation")
        prev = (frame, x, y)
    return out


@dataclass
class EvalReport:
    f1: float
    recall: float
    precision: float
    threshold: float
    frames: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def disk_mask(gaze_xy, radius: float, h: int, w: int) -> np.ndarray:
    gx, gy = float(gaze_xy[0]), float(gaze_xy[1])
    ys = np.arange(h, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)
    return (ys - gy)[:, None] ** 2 + (xs - gx)[None, :] ** 2 <= radius * radius


def prf_metrics(preds, gazes, thresholds=DEFAULT_THRESHOLDS, disk_radius: float = 9.0) -> EvalReport:
    """Micro-averaged precision/recall/F1 of thresholded heatmaps vs gaze disks.

    ``preds``: (F, H, W) per-frame probability maps, fixation frames only.
    ``gazes``: (F, 2) gaze points (x, y) in output-grid coordinates.
    The positive prediction set at threshold t is {p >= t}; ground truth is the
    digital disk of the given radius around the gaze. The report carries the
    sweep threshold that maximizes micro-F1. Empty prediction sets score 0.
    """
    preds = np.asarray(preds, dtype=np.float64)
    gazes = np.asarray(gazes, dtype=np.float64).reshape(-1, 2)
    if preds.ndim != 3 or preds.shape[0] != gazes.shape[0]:
        raise ShapeError(f"got {preds.shape} predictions for {gazes.shape[0]} gaze points")
    n = preds.shape[0]
    if n == 0:
        return EvalReport(f1=0.0, recall=0.0, precision=0.0, threshold=float(thresholds[0]), frames=0)
    h, w = preds.shape[1:]
    gt = np.stack([disk_mask(g, disk_radius, h, w) for g in gazes])
    gt_total = int(gt.sum())
    best = None
    for t in thresholds:
        pos = preds >= t
        tp = int((pos & gt).sum())
        p_total = int(pos.sum())
        precision = tp / p_total if p_total else 0.0
        recall = tp / gt_total if gt_total else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        if best is None or f1 > best.f1:
            best = EvalReport(f1=f1, recall=recall, precision=precision, threshold=float(t), frames=n)
    return best
