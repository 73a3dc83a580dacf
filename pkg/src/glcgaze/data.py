"""Synthetic gaze-video generation, clip sampling, augmentation, and storage.

Clips contain one bright target blob moving on a smooth random walk plus
dimmer distractor blobs; the gaze track follows the target center with small
jitter, with occasional injected saccade jumps and untracked gaps. Everything
is a pure function of (seed, clip id), so generation is reproducible
byte-for-byte and safe to parallelize per clip.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import (
    ConfigError,
    DatasetChecksumError,
    DatasetError,
    DatasetTruncatedError,
    DatasetVersionError,
    UsageError,
)
from .ops import linear_resize_matrix

FORMAT_VERSION = 1

# 8 frames at interval 8: indices [0, 8, ..., 56] need 57 raw frames
SAMPLE_FRAMES = 8
SAMPLE_INTERVAL = 8
SAMPLE_SPAN = SAMPLE_INTERVAL * (SAMPLE_FRAMES - 1) + 1


@dataclass
class GenParams:
    n_clips: int = 20
    n_test: int = 5
    frames: int = 64
    height: int = 76
    width: int = 76
    n_distractors: int = 2
    target_amp: float = 0.9
    distractor_amp: float = 0.4
    blob_sigma: float = 5.0
    step_sigma: float = 1.2
    momentum: float = 0.8
    jitter: float = 0.5
    jump_prob: float = 0.03
    jump_ref_dist: float = 10.0  # saccade threshold at this pixel scale
    gap_prob: float = 0.02
    gap_max: int = 4
    background: float = 0.08

    def validate(self) -> "GenParams":
        if self.n_clips < 1 or not 0 <= self.n_test < self.n_clips + 1:
            raise ConfigError(f"bad clip counts: {self.n_clips} total, {self.n_test} test")
        if self.frames < SAMPLE_SPAN:
            raise ConfigError(f"clips need >= {SAMPLE_SPAN} frames, got {self.frames}")
        if self.height < 8 or self.width < 8:
            raise ConfigError("frames too small")
        if self.n_distractors < 0:
            raise ConfigError("negative distractor count")
        return self


@dataclass
class ClipRecord:
    clip_id: str
    video: np.ndarray  # (3, T, H, W) float32 in [0, 1]
    gaze: list[tuple[bool, float, float]]  # per raw frame: (tracked, x, y) in pixels
    split: str
    jumps: list[int] = field(default_factory=list)  # injected saccade frames

    @property
    def n_frames(self) -> int:
        return self.video.shape[1]


def _smooth_walk(rng, n, h, w, params: GenParams, allow_jumps: bool, tracked=None):
    """Momentum random walk inside a margin, with optional saccade teleports.

    Jumps happen only on frames where this and the previous frame are tracked
    (so the fixation filter can see them) and teleport to a rejection-sampled
    in-bounds point at a distance of 2.5-4x the saccade threshold.
    """
    margin = 3.0 * params.blob_sigma / 2
    lo_x, hi_x = margin, w - 1 - margin
    lo_y, hi_y = margin, h - 1 - margin
    jump_lo, jump_hi = 2.5 * params.jump_ref_dist, 4.0 * params.jump_ref_dist
    pos = np.array([rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)])
    vel = rng.normal(scale=params.step_sigma, size=2)
    path = np.zeros((n, 2))
    jumps = []
    for t in range(n):
        if t > 0:
            vel = params.momentum * vel + rng.normal(scale=params.step_sigma, size=2)
            pos = pos + vel
            can_jump = (
                allow_jumps
                and rng.random() < params.jump_prob
                and (tracked is None or (tracked[t] and tracked[t - 1]))
                and (not jumps or t - jumps[-1] > 2)
            )
            if can_jump:
                for _ in range(200):
                    cand = np.array([rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)])
                    if jump_lo <= float(np.hypot(*(cand - pos))) <= jump_hi:
                        pos = cand
                        vel = rng.normal(scale=params.step_sigma, size=2)
                        jumps.append(t)
                        break
        for axis, (lo, hi) in enumerate([(lo_x, hi_x), (lo_y, hi_y)]):
            if pos[axis] < lo:
                pos[axis] = lo + (lo - pos[axis])
                vel[axis] = abs(vel[axis])
            if pos[axis] > hi:
                pos[axis] = hi - (pos[axis] - hi)
                vel[axis] = -abs(vel[axis])
            pos[axis] = min(max(pos[axis], lo), hi)
        path[t] = pos
    return path, jumps


def _render_blob(frame, cx, cy, sigma, color):
    h, w = frame.shape[1:]
    r = int(np.ceil(3 * sigma))
    x0, x1 = max(0, int(cx) - r), min(w, int(cx) + r + 1)
    y0, y1 = max(0, int(cy) - r), min(h, int(cy) + r + 1)
    if x0 >= x1 or y0 >= y1:
        return
    ys = np.arange(y0, y1, dtype=np.float64)
    xs = np.arange(x0, x1, dtype=np.float64)
    splat = np.exp(-((ys - cy)[:, None] ** 2 + (xs - cx)[None, :] ** 2) / (2 * sigma**2))
    frame[:, y0:y1, x0:x1] += color[:, None, None] * splat[None]


def generate_clip(seed: int, index: int, params: GenParams, split: str) -> ClipRecord:
    rng = np.random.default_rng([seed & 0xFFFFFFFF, index])
    n, h, w = params.frames, params.height, params.width

    tracked = np.ones(n, dtype=bool)
    t = 1
    while t < n:
        if rng.random() < params.gap_prob:
            gap = int(rng.integers(1, params.gap_max + 1))
            tracked[t : t + gap] = False
            t += gap + 2
        else:
            t += 1

    target_path, jumps = _smooth_walk(rng, n, h, w, params, allow_jumps=True, tracked=tracked)
    distractors = [
        _smooth_walk(rng, n, h, w, params, allow_jumps=False)[0]
        for _ in range(params.n_distractors)
    ]
    d_colors = [
        rng.uniform(0.3, 1.0, size=3) * params.distractor_amp for _ in range(params.n_distractors)
    ]
    target_color = np.array([1.0, 0.95, 0.85]) * params.target_amp

    video = np.full((3, n, h, w), params.background, dtype=np.float64)
    for f in range(n):
        frame = video[:, f]
        for path, color in zip(distractors, d_colors):
            _render_blob(frame, path[f, 0], path[f, 1], params.blob_sigma, color)
        _render_blob(frame, target_path[f, 0], target_path[f, 1], params.blob_sigma, target_color)
    np.clip(video, 0.0, 1.0, out=video)

    jit = rng.normal(scale=params.jitter, size=(n, 2)) if params.jitter > 0 else np.zeros((n, 2))
    gaze = []
    for f in range(n):
        gx = float(np.clip(target_path[f, 0] + jit[f, 0], 0, w - 1))
        gy = float(np.clip(target_path[f, 1] + jit[f, 1], 0, h - 1))
        gaze.append((bool(tracked[f]), gx, gy))
    return ClipRecord(
        clip_id=f"clip{index:04d}",
        video=video.astype(np.float32),
        gaze=gaze,
        split=split,
        jumps=jumps,
    )


def generate_dataset(seed: int, params: GenParams) -> list[ClipRecord]:
    params.validate()
    n_train = params.n_clips - params.n_test
    return [
        generate_clip(seed, i, params, "train" if i < n_train else "test")
        for i in range(params.n_clips)
    ]


# ---------------------------------------------------------------------------
# clip sampling and augmentation
# ---------------------------------------------------------------------------


def window_start(n_frames: int, rng, mode: str) -> int:
    """Start of the sampling window: random for train, centered for test."""
    slack = n_frames - SAMPLE_SPAN
    if slack < 0:
        raise DatasetError(f"clip too short: {n_frames} < {SAMPLE_SPAN} frames")
    if mode == "train":
        return int(rng.integers(0, slack + 1))
    return slack // 2


def sample_clip(rec: ClipRecord, rng, mode: str):
    """Pick 8 equally spaced frames; returns (frames (3,8,H,W), per-frame gaze)."""
    start = window_start(rec.n_frames, rng, mode)
    idx = start + SAMPLE_INTERVAL * np.arange(SAMPLE_FRAMES)
    frames = rec.video[:, idx]
    gaze = [rec.gaze[i] for i in idx]
    return frames, gaze, idx


def hflip(frames: np.ndarray, gaze, width: int):
    flipped = frames[..., ::-1].copy()
    return flipped, [(tr, width - 1 - x, y) for tr, x, y in gaze]


def resize_frames(frames: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Bilinear spatial resize of (C, T, H, W) frames (same sampling as the model ops)."""
    c, t, h, w = frames.shape
    mh = linear_resize_matrix(h, new_h).astype(frames.dtype)
    mw = linear_resize_matrix(w, new_w).astype(frames.dtype)
    out = np.einsum("cthw,yh->ctyw", frames, mh, optimize=True)
    return np.einsum("ctyw,xw->ctyx", out, mw, optimize=True)


def resize_coord(x: float, n_old: int, n_new: int) -> float:
    """Map a pixel-center coordinate under align-corners-false resizing."""
    return (x + 0.5) * (n_new / n_old) - 0.5


def crop_frames(frames: np.ndarray, ox: int, oy: int, size: int) -> np.ndarray:
    return frames[..., oy : oy + size, ox : ox + size].copy()


def augment(frames: np.ndarray, gaze, rng, mode: str, crop: int, scale_range: float = 0.125):
    """Flip/resize/crop with the gaze transformed by the same map.

    Train mode: horizontal flip with p=0.5, scale in [1-scale_range,
    1+scale_range], then a random square crop to ``crop``. Test mode: center
    crop only. A gaze point pushed out of frame marks that frame untracked.
    """
    c, t, h, w = frames.shape
    if mode == "train":
        if rng.random() < 0.5:
            frames, gaze = hflip(frames, gaze, w)
        scale = rng.uniform(1 - scale_range, 1 + scale_range)
        new_h, new_w = int(round(h * scale)), int(round(w * scale))
        if new_h < crop or new_w < crop:
            raise ConfigError(
                f"raw frames {h}x{w} too small for crop {crop} at scale {scale:.3f}"
            )
        resized = resize_frames(frames, new_h, new_w)
        gaze = [(tr, resize_coord(x, w, new_w), resize_coord(y, h, new_h)) for tr, x, y in gaze]
        ox = int(rng.integers(0, new_w - crop + 1))
        oy = int(rng.integers(0, new_h - crop + 1))
    else:
        if h < crop or w < crop:
            raise ConfigError(f"raw frames {h}x{w} smaller than crop {crop}")
        resized = frames
        ox, oy = (w - crop) // 2, (h - crop) // 2
    out = crop_frames(resized, ox, oy, crop)
    out_gaze = []
    for tr, x, y in gaze:
        x2, y2 = x - ox, y - oy
        inside = 0 <= x2 <= crop - 1 and 0 <= y2 <= crop - 1
        out_gaze.append((bool(tr and inside), x2, y2))
    return out, out_gaze


# ---------------------------------------------------------------------------
# on-disk container
# ---------------------------------------------------------------------------


def write_dataset(records: list[ClipRecord], directory: str, seed: int | None = None, params: GenParams | None = None) -> None:
    """``manifest.json`` plus ``data.bin`` (little-endian float32, row-major)."""
    os.makedirs(directory, exist_ok=True)
    blobs = []
    clips = []
    offset = 0
    for rec in records:
        raw = np.ascontiguousarray(rec.video, dtype="<f4").tobytes()
        clips.append(
            {
                "id": rec.clip_id,
                "shape": list(rec.video.shape),
                "dtype": "float32",
                "byte_offset": offset,
                "byte_length": len(raw),
                "split": rec.split,
                "gaze": [[int(tr), float(x), float(y)] for tr, x, y in rec.gaze],
                "jumps": [int(j) for j in rec.jumps],
            }
        )
        blobs.append(raw)
        offset += len(raw)
    data = b"".join(blobs)
    manifest = {
        "format_version": FORMAT_VERSION,
        "checksum": hashlib.sha256(data).hexdigest(),
        "generator": {"seed": seed, "params": asdict(params) if params else None},
        "clips": clips,
    }
    with open(os.path.join(directory, "data.bin"), "wb") as f:
        f.write(data)
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, sort_keys=True)
        f.write("\n")


def read_dataset(directory: str, mmap: bool = True) -> list[ClipRecord]:
    """Load and validate a dataset directory; bit-exact inverse of write_dataset."""
    manifest_path = os.path.join(directory, "manifest.json")
    data_path = os.path.join(directory, "data.bin")
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except FileNotFoundError as e:
        raise DatasetError(f"missing manifest: {manifest_path}") from e
    except json.JSONDecodeError as e:
        raise DatasetError(f"manifest is not valid JSON: {e}") from e
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetVersionError(f"dataset format {version!r}, expected {FORMAT_VERSION}")
    clips = manifest.get("clips", [])
    spans = []
    for c in clips:
        n_values = int(np.prod(c["shape"]))
        if c["byte_length"] != 4 * n_values:
            raise DatasetError(
                f"clip {c['id']}: byte length {c['byte_length']} != 4 * {n_values}"
            )
        spans.append((c["byte_offset"], c["byte_offset"] + c["byte_length"], c["id"]))
    for (s0, e0, id0), (s1, e1, id1) in zip(sorted(spans), sorted(spans)[1:]):
        if e0 > s1:
            raise DatasetError(f"overlapping byte ranges for clips {id0!r} and {id1!r}")
    total = max((e for _, e, _ in spans), default=0)
    try:
        size = os.path.getsize(data_path)
    except FileNotFoundError as e:
        raise DatasetError(f"missing data file: {data_path}") from e
    if size < total:
        raise DatasetTruncatedError(f"data.bin holds {size} bytes, manifest needs {total}")
    hasher = hashlib.sha256()
    with open(data_path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 22), b""):
            hasher.update(chunk)
    digest = hasher.hexdigest()
    if digest != manifest.get("checksum"):
        raise DatasetChecksumError("data.bin checksum does not match the manifest")
    buf = np.memmap(data_path, dtype="<f4", mode="r") if mmap else np.fromfile(data_path, dtype="<f4")
    records = []
    for c in clips:
        start = c["byte_offset"] // 4
        count = c["byte_length"] // 4
        video = np.asarray(buf[start : start + count]).reshape(c["shape"])
        records.append(
            ClipRecord(
                clip_id=c["id"],
                video=video,
                gaze=[(bool(tr), float(x), float(y)) for tr, x, y in c["gaze"]],
                split=c["split"],
                jumps=list(c.get("jumps", [])),
            )
        )
    return records


def split_records(records: list[ClipRecord], split: str) -> list[ClipRecord]:
    return [r for r in records if r.split == split]
