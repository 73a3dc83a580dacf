"""Command-line interface.

Grammar: ``glcgaze {train|eval|infer|export-maps|gradcheck|ablate}
--config PATH [--set key=value]... [--threads N] [--seed N]``.

Thread count (``--threads``, falling back to the GLC_THREADS environment
variable, default 1) is pinned into the BLAS environment before any numeric
module loads; single-threaded mode is the deterministic reference. Exit codes:
0 ok, 1 check failure, 2 config error, 3 dataset error, 4 numeric failure,
5 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glcgaze", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, brief in [
        ("train", "train one variant and log loss/F1"),
        ("eval", "evaluate a checkpoint on the test split"),
        ("infer", "write per-frame predicted heatmaps for one clip"),
        ("export-maps", "write per-head correlation maps and predictions"),
        ("gradcheck", "run the finite-difference verification suite"),
        ("ablate", "train several variants and emit a comparison table"),
    ]:
        cmd = sub.add_parser(name, help=brief)
        cmd.add_argument("--config", default=None, help="JSON run config")
        cmd.add_argument(
            "--set",
            action="append",
            default=[],
            dest="sets",
            metavar="KEY=VALUE",
            help="override a config key (overrides.* targets the model config)",
        )
        cmd.add_argument("--threads", type=int, default=None)
        cmd.add_argument("--seed", type=int, default=None)
    return parser


def _pin_threads(n: int) -> None:
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def write_pgm(path: str, image) -> None:
    """Binary PGM (P5, maxval 255), values scaled so the map maximum is 255."""
    import numpy as np

    img = np.asarray(image, dtype=np.float64)
    peak = img.max()
    scaled = np.zeros_like(img) if peak <= 0 else img * (255.0 / peak)
    data = np.rint(scaled).clip(0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())


def _cmd_train(run) -> int:
    from .train import fit

    result = fit(run)
    print(f"trained {run.variant}: final F1 {result.final_eval.f1:.4f} (log: {result.csv_path})")
    return 0


def _cmd_eval(run) -> int:
    from .checkpoint import load_checkpoint
    from .train import evaluate_model, load_split_records

    model = load_checkpoint(run.checkpoint, expected_cfg=run.model_config())
    _, test_recs = load_split_records(run)
    report = evaluate_model(model, test_recs, model.cfg, batch=run.n_eval_batch)
    os.makedirs(run.out_dir, exist_ok=True)
    out_path = os.path.join(run.out_dir, "eval_report.json")
    with open(out_path, "w") as f:
        f.write(report.to_json())
        f.write("\n")
    print(report.to_json())
    return 0


def _pick_clip(run, records):
    from .data import split_records
    from .errors import DatasetError

    pool = split_records(records, "test") or records
    if run.clip_id:
        matches = [r for r in records if r.clip_id == run.clip_id]
        if not matches:
            raise DatasetError(f"clip {run.clip_id!r} not in dataset")
        return matches[0]
    return pool[0]


def _predict_clip(model, rec, cfg):
    import numpy as np

    from .tensor import Tensor, no_grad
    from .train import eval_frames

    frames, gaze, _ = eval_frames(rec, cfg)
    with no_grad():
        heatmaps = model.forward_gaze(Tensor(frames[None].astype(np.float32))).data[0]
    return frames, heatmaps


def _cmd_infer(run) -> int:
    import json

    import numpy as np

    from .checkpoint import load_checkpoint
    from .data import read_dataset

    model = load_checkpoint(run.checkpoint, expected_cfg=run.model_config())
    records = read_dataset(run.dataset)
    rec = _pick_clip(run, records)
    _, heatmaps = _predict_clip(model, rec, model.cfg)
    os.makedirs(run.out_dir, exist_ok=True)
    points = []
    _, gh, gw = model.cfg.out_grid
    sh = model.cfg.clip_h / gh
    for f in range(heatmaps.shape[0]):
        write_pgm(os.path.join(run.out_dir, f"{rec.clip_id}_frame{f}_pred.pgm"), heatmaps[f])
        iy, ix = np.unravel_index(heatmaps[f].argmax(), heatmaps[f].shape)
        # argmax location mapped back to input pixels
        points.append({"frame": f, "x": (ix + 0.5) * sh - 0.5, "y": (iy + 0.5) * sh - 0.5})
    with open(os.path.join(run.out_dir, f"{rec.clip_id}_pred.json"), "w") as f:
        json.dump({"clip": rec.clip_id, "gaze": points}, f, sort_keys=True)
        f.write("\n")
    print(f"wrote {heatmaps.shape[0]} prediction maps for {rec.clip_id} to {run.out_dir}")
    return 0


def _cmd_export_maps(run) -> int:
    import numpy as np

    from .checkpoint import load_checkpoint
    from .data import read_dataset
    from .ops import resize_volume
    from .tensor import Tensor, no_grad
    from .train import eval_frames

    model = load_checkpoint(run.checkpoint, expected_cfg=run.model_config())
    records = read_dataset(run.dataset)
    rec = _pick_clip(run, records)
    cfg = model.cfg
    frames, _, _ = eval_frames(rec, cfg)
    with no_grad():
        maps = model.head_maps(Tensor(frames[None].astype(np.float32)))[0]
        heatmaps = model.forward_gaze(Tensor(frames[None].astype(np.float32))).data[0]
    os.makedirs(run.out_dir, exist_ok=True)
    clip_dims = (cfg.clip_t, cfg.clip_h, cfg.clip_w)
    for h in range(maps.shape[0]):
        upsampled = resize_volume(maps[h], clip_dims)
        write_pgm(os.path.join(run.out_dir, f"{rec.clip_id}_head{h}.pgm"), upsampled.mean(axis=0))
    for f in range(heatmaps.shape[0]):
        write_pgm(os.path.join(run.out_dir, f"{rec.clip_id}_frame{f}_pred.pgm"), heatmaps[f])
    print(f"wrote {maps.shape[0]} head maps and {heatmaps.shape[0]} prediction maps to {run.out_dir}")
    return 0


def _cmd_gradcheck(run) -> int:
    from .checksuite import run_suite
    from .errors import CheckFailure

    report = run_suite(run.checks or None, seed=run.seed)
    for line in report.lines():
        print(line)
    if not report.passed:
        failed = [r.name for r in report.reports if not r.passed]
        raise CheckFailure(f"gradient checks failed: {', '.join(failed)}")
    print(f"all {len(report.reports)} gradient checks passed")
    return 0


def _variant_dir(tag: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in tag)


def _cmd_ablate(run) -> int:
    from dataclasses import replace

    from .config import parse_variant
    from .errors import CheckFailure
    from .network import GazeVideoNet
    from .train import fit

    cfg = run.model_config()
    counts = {}
    rows = []
    for tag in run.variants:
        counts[tag] = GazeVideoNet(cfg, parse_variant(tag)).parameter_count()
    if "mvit+global+sa" in counts and "mvit+global+glc" in counts:
        if counts["mvit+global+sa"] != counts["mvit+global+glc"]:
            raise CheckFailure(
                f"parameter parity violated: +sa has {counts['mvit+global+sa']}, "
                f"+glc has {counts['mvit+global+glc']}"
            )
    for tag in run.variants:
        sub = replace(run, variant=tag, out_dir=os.path.join(run.out_dir, _variant_dir(tag)))
        result = fit(sub)
        rows.append(
            (tag, result.final_eval.f1, result.final_eval.recall, result.final_eval.precision, counts[tag])
        )
        print(
            f"{tag}: F1 {result.final_eval.f1:.4f} recall {result.final_eval.recall:.4f} "
            f"precision {result.final_eval.precision:.4f} params {counts[tag]}"
        )
    os.makedirs(run.out_dir, exist_ok=True)
    table = os.path.join(run.out_dir, "ablation.csv")
    with open(table, "w") as f:
        f.write("variant,f1,recall,precision,param_count\n")
        for tag, f1, rec, prec, n in rows:
            f.write(f"{tag},{f1:.6f},{rec:.6f},{prec:.6f},{n}\n")
    print(f"wrote {table}")
    return 0


COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "export-maps": _cmd_export_maps,
    "gradcheck": _cmd_gradcheck,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("GLC_THREADS", "1"))
    _pin_threads(threads)

    from .config import load_run_config
    from .errors import GlcError

    try:
        run = load_run_config(
            args.config, args.sets, seed=args.seed, threads=args.threads
        )
        return COMMANDS[args.command](run)
    except GlcError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 5


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
