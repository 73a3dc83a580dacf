"""Training and evaluation loops shared by the CLI commands."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import ops
from .checkpoint import save_checkpoint
from .config import ModelConfig, RunConfig
from .data import ClipRecord, augment, sample_clip, split_records
from .errors import DatasetError, NumericError
from .network import GazeVideoNet, build_model
from .nn import derive_rng
from .objectives import (
    DEFAULT_THRESHOLDS,
    EvalReport,
    fixation_filter,
    gaussian_label,
    kl_loss,
    prf_metrics,
    uniform_label,
)
from .optim import AdamW, cosine_warmup_lr
from .tensor import Tensor, no_grad


def to_grid_coord(v: float, crop: int, grid: int) -> float:
    """Input-pixel coordinate to output-grid coordinate (align-corners-false)."""
    return (v + 0.5) * (grid / crop) - 0.5


def make_frame_labels(gaze, cfg: ModelConfig) -> np.ndarray:
    """Per-frame target distributions: gaussian at the gaze, uniform when untracked."""
    _, gh, gw = cfg.out_grid
    labels = np.zeros((len(gaze), gh, gw), dtype=np.float64)
    for f, (tracked, x, y) in enumerate(gaze):
        if not tracked:
            labels[f] = uniform_label(gh, gw)
            continue
        gx = float(np.clip(to_grid_coord(x, cfg.clip_w, gw), 0, gw - 1))
        gy = float(np.clip(to_grid_coord(y, cfg.clip_h, gh), 0, gh - 1))
        labels[f] = gaussian_label((gx, gy), gh, gw, cfg.label_kernel_size, cfg.label_sigma)
    return labels


def prepare_batch(train_recs: list[ClipRecord], run: RunConfig, cfg: ModelConfig, step: int):
    """Deterministic batch draw for one step: clips (B,3,T,H,W) and labels (B,T,Hg,Wg)."""
    rng = derive_rng(run.seed, "batch", step)
    idx = rng.integers(0, len(train_recs), size=run.batch_size)
    clips, labels = [], []
    for i in idx:
        rec = train_recs[int(i)]
        frames, gaze, _ = sample_clip(rec, rng, "train")
        frames, gaze = augment(np.asarray(frames), gaze, rng, "train", cfg.clip_h)
        clips.append(frames)
        labels.append(make_frame_labels(gaze, cfg))
    return np.stack(clips), np.stack(labels)


def eval_frames(rec: ClipRecord, cfg: ModelConfig):
    """Test-protocol view of one clip: frames, per-frame gaze, and usable flags.

    A sampled frame is scored iff its raw frame is tracked, the raw-track
    fixation filter calls it a fixation, and the gaze survives the center crop.
    """
    frames, gaze, idx = sample_clip(rec, None, "test")
    frames, gaze = augment(np.asarray(frames), gaze, None, "test", cfg.clip_h)
    track = [(f, x, y) for f, (tr, x, y) in enumerate(rec.gaze) if tr]
    labels = fixation_filter(track, cfg.saccade_threshold)
    fixated = {f for (f, _, _), lab in zip(track, labels) if lab == "fixation"}
    usable = [bool(tr and raw in fixated) for raw, (tr, _, _) in zip(idx, gaze)]
    return frames, gaze, usable


def default_predictor(model: GazeVideoNet):
    def predict(clips: np.ndarray, gazes_grid) -> np.ndarray:
        with no_grad():
            return model.forward_gaze(Tensor(clips.astype(np.float32))).data
    return predict


def evaluate_model(
    model_or_predictor,
    test_recs: list[ClipRecord],
    cfg: ModelConfig,
    thresholds=DEFAULT_THRESHOLDS,
    batch: int = 8,
) -> EvalReport:
    """Precision/recall/F1 over the fixated test frames, center-crop protocol."""
    predict = (
        model_or_predictor
        if callable(model_or_predictor)
        else default_predictor(model_or_predictor)
    )
    _, gh, gw = cfg.out_grid
    pred_frames, gaze_points = [], []
    for lo in range(0, len(test_recs), batch):
        chunk = test_recs[lo : lo + batch]
        views = [eval_frames(rec, cfg) for rec in chunk]
        clips = np.stack([v[0] for v in views])
        gazes_grid = []
        for _, gaze, _ in views:
            gazes_grid.append(
                [
                    (tr, to_grid_coord(x, cfg.clip_w, gw), to_grid_coord(y, cfg.clip_h, gh))
                    for tr, x, y in gaze
                ]
            )
        heatmaps = predict(clips, gazes_grid)
        for ci, (_, gaze, usable) in enumerate(views):
            for f, use in enumerate(usable):
                if not use:
                    continue
                _, gx, gy = gazes_grid[ci][f]
                pred_frames.append(heatmaps[ci, f])
                gaze_points.append((gx, gy))
    if not pred_frames:
        return EvalReport(0.0, 0.0, 0.0, float(thresholds[0]), 0)
    return prf_metrics(
        np.stack(pred_frames), gaze_points, thresholds=thresholds, disk_radius=cfg.eval_disk_radius
    )


@dataclass
class TrainResult:
    csv_path: str
    checkpoint_dir: str
    final_eval: EvalReport
    step0_eval: EvalReport
    losses: list[float]


def load_split_records(run: RunConfig):
    from .data import read_dataset

    records = read_dataset(run.dataset)
    train_recs = split_records(records, "train")
    test_recs = split_records(records, "test")
    if not train_recs:
        raise DatasetError(f"dataset {run.dataset!r} has no train clips")
    return train_recs, test_recs


def fit(run: RunConfig, log_name: str = "train_log.csv") -> TrainResult:
    """Train one variant; writes a CSV log and periodic checkpoints."""
    cfg = run.model_config()
    train_recs, test_recs = load_split_records(run)
    model = build_model(cfg, run.variant, run.seed)
    opt = AdamW(
        list(model.named_parameters()),
        lr=run.lr,
        weight_decay=run.weight_decay,
        beta1=run.beta1,
        beta2=run.beta2,
        eps=run.eps,
    )
    os.makedirs(run.out_dir, exist_ok=True)
    csv_path = os.path.join(run.out_dir, log_name)
    losses: list[float] = []
    step0 = evaluate_model(model, test_recs, cfg, batch=run.n_eval_batch)
    final_eval = step0
    with open(csv_path, "w") as log:
        log.write("step,train_loss,eval_f1\n")
        log.write(f"0,,{step0.f1:.6f}\n")
        for step in range(run.steps):
            clips, labels = prepare_batch(train_recs, run, cfg, step)
            pred = model.forward_gaze(Tensor(clips))
            loss = kl_loss(labels.astype(np.float32), pred)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise NumericError(f"non-finite training loss at step {step + 1}")
            opt.zero_grad()
            loss.backward()
            opt.step(lr=cosine_warmup_lr(step, run.steps, run.lr, run.warmup_frac))
            losses.append(loss_val)
            done = step + 1
            eval_due = run.eval_every > 0 and done % run.eval_every == 0
            if eval_due or done == run.steps:
                final_eval = evaluate_model(model, test_recs, cfg, batch=run.n_eval_batch)
                log.write(f"{done},{loss_val:.6f},{final_eval.f1:.6f}\n")
            else:
                log.write(f"{done},{loss_val:.6f},\n")
            if run.checkpoint_every > 0 and done % run.checkpoint_every == 0 and done != run.steps:
                save_checkpoint(model, os.path.join(run.out_dir, f"step{done:06d}"))
    ckpt_dir = os.path.join(run.out_dir, "checkpoint")
    save_checkpoint(model, ckpt_dir)
    return TrainResult(
        csv_path=csv_path,
        checkpoint_dir=ckpt_dir,
        final_eval=final_eval,
        step0_eval=step0,
        losses=losses,
    )
