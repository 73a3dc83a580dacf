"""Full model assembly and symbolic shape inference.

The encoder is four blocks of pooled attention layers; its output feeds the
channel-fused tail (global-local correlation, an extra plain attention layer,
or plain duplication, depending on the variant), which the four decoder blocks
upsample back to the output grid. Skip connections add channel-projected,
trilinearly-resized encoder intermediates to each decoder block's output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .attention import AttentionBlock, GlobalLocalBlock, map_locals, pooled_grid
from .config import ModelConfig, Variant, parse_variant
from .embedding import TokenEmbedder, TokenField, global_stack_grid, unflatten_locals
from .errors import ConfigError
from .nn import Conv3dLayer, Linear, Module, ModuleList
from .tensor import Tensor

TAIL_STAGE_NAMES = {
    "glc": "global_local_correlation",
    "sa": "extra_self_attention",
    "none": "duplicate_fuse",
}


@dataclass
class StageShape:
    name: str
    width: int | None
    grid: tuple[int, int, int] | None
    extra: dict = field(default_factory=dict)

    @property
    def tokens(self) -> int | None:
        if self.grid is None:
            return self.extra.get("tokens")
        t, h, w = self.grid
        return self.extra.get("prefix", 1) + t * h * w


def infer_shapes(cfg: ModelConfig, variant: str | Variant = "mvit+global+glc") -> list[StageShape]:
    """Stage-by-stage ledger of channel widths and token grids, no allocation."""
    cfg.validate()
    if isinstance(variant, str):
        variant = parse_variant(variant)
    d = cfg.embed_dim
    prefix = cfg.n_prefix
    stages = [
        StageShape("data", cfg.in_channels, (cfg.clip_t, cfg.clip_h, cfg.clip_w)),
        StageShape(
            "local_token_embedding",
            d,
            cfg.token_grid,
            {"kernel": (3, 7, 7), "stride": cfg.patch_stride, "prefix": 0},
        ),
    ]
    gextra: dict = {"tokens": 1, "strategy": variant.strategy if variant.use_global_embed else "const"}
    if variant.use_global_embed and variant.strategy in ("c", "d"):
        gt, gh, gw = global_stack_grid(cfg.token_grid)
        gextra["flatten_width"] = d * gt * gh * gw
        gextra["stack_convs"] = 3
    stages.append(StageShape("global_token_embedding", d, None, gextra))
    stages.append(StageShape("tokenization", d, cfg.token_grid, {"prefix": prefix}))

    grid = cfg.token_grid
    enc_specs = cfg.encoder_layer_specs()
    for block in range(4):
        layers = [s for s in enc_specs if s["block"] == block]
        for spec in layers:
            if spec["q_stride"] != (1, 1, 1):
                for axis in range(3):
                    if grid[axis] % spec["q_stride"][axis]:
                        raise ConfigError(
                            f"encoder block {block + 1}: grid {grid} not divisible by "
                            f"q stride {spec['q_stride']}"
                        )
                grid = pooled_grid(grid, spec["q_stride"])
        stages.append(
            StageShape(
                f"encoder_block{block + 1}",
                cfg.widths[block],
                grid,
                {
                    "prefix": prefix,
                    "depth": cfg.depths[block],
                    "msa_width": layers[0]["d_in"],
                    "mlp_hidden": layers[0]["mlp_hidden"],
                },
            )
        )

    w4 = cfg.widths[3]
    tail_extra = {"prefix": prefix}
    if variant.tail == "glc":
        tail_extra.update({"glc_width": w4, "mlp_hidden": cfg.mlp_ratio * w4, "heads": w4 // cfg.head_dim})
    elif variant.tail == "sa":
        tail_extra.update({"msa_width": w4, "mlp_hidden": cfg.mlp_ratio * w4})
    stages.append(StageShape(TAIL_STAGE_NAMES[variant.tail], 2 * w4, grid, tail_extra))

    for spec in cfg.decoder_block_specs():
        new_grid = tuple(n * f for n, f in zip(grid, spec["upsample"]))
        stages.append(
            StageShape(
                f"decoder_block{spec['block'] + 1}",
                spec["d_out"],
                new_grid,
                {"prefix": prefix, "msa_width": spec["d_in"], "mlp_hidden": spec["mlp_hidden"]},
            )
        )
        grid = new_grid
    if grid != cfg.out_grid:
        raise ConfigError(f"decoder ladder ends at {grid}, expected {cfg.out_grid}")

    if cfg.head_mode == "gaze":
        stages.append(
            StageShape("head", 1, cfg.out_grid, {"kernel": (1, 1, 1), "tau": cfg.tau, "prefix": 0})
        )
    else:
        stages.append(
            StageShape("head", None, None, {"n_classes": cfg.n_classes, "mode": cfg.head_mode})
        )
    return stages


class GazeVideoNet(Module):
    """The full network for one ablation variant."""

    def __init__(self, cfg: ModelConfig, variant: str | Variant = "mvit+global+glc"):
        cfg.validate()
        if isinstance(variant, str):
            variant = parse_variant(variant)
        if cfg.head_mode == "class-token" and cfg.n_prefix != 2:
            raise ConfigError("class-token head mode requires the inserted class token")
        self.cfg = cfg
        self.variant = variant
        self.embed = TokenEmbedder(cfg, variant.use_global_embed, variant.strategy)

        self.encoder = ModuleList()
        self._block_last_layer = []
        specs = cfg.encoder_layer_specs()
        for spec in specs:
            self.encoder.append(
                AttentionBlock(
                    spec["d_in"],
                    spec["d_out"],
                    cfg.head_dim,
                    spec["mlp_hidden"],
                    q_stride=spec["q_stride"],
                    kv_stride=spec["kv_stride"],
                )
            )
        for block in range(4):
            last = max(i for i, s in enumerate(specs) if s["block"] == block)
            self._block_last_layer.append(last)

        w4 = cfg.widths[3]
        if variant.tail == "glc":
            self.tail = GlobalLocalBlock(w4, cfg.head_dim, cfg.mlp_ratio * w4, cfg.lam)
        elif variant.tail == "sa":
            self.tail = AttentionBlock(w4, w4, cfg.head_dim, cfg.mlp_ratio * w4)
        else:
            self.tail = None

        if cfg.head_mode == "gaze":
            self.decoder = ModuleList()
            for spec in cfg.decoder_block_specs():
                self.decoder.append(
                    AttentionBlock(
                        spec["d_in"],
                        spec["d_out"],
                        cfg.head_dim,
                        spec["mlp_hidden"],
                        q_upsample=spec["upsample"],
                        kv_stride=spec["kv_stride"],
                    )
                )
            # skip sources: encoder block 3, 2, 1 outputs, then the tokenization output
            _, outs = cfg.decoder_widths()
            src_widths = [cfg.widths[2], cfg.widths[1], cfg.widths[0], cfg.embed_dim]
            self.skip_projs = ModuleList(Linear(sw, ow) for sw, ow in zip(src_widths, outs))
            # prediction head starts at exactly uniform output: zero-initialized
            self.head = Conv3dLayer(
                cfg.embed_dim, 1, (1, 1, 1), (1, 1, 1), (0, 0, 0), init="zeros"
            )
        else:
            fused_w = 2 * w4 if self.tail is not None or variant.tail == "none" else w4
            self.class_head = Linear(fused_w, cfg.n_classes)

    # -- forward pieces ------------------------------------------------------

    def encode(self, clip: Tensor, trace: list | None = None):
        """Token embedding and encoder; returns (block outputs, tokenization field)."""
        cfg = self.cfg
        if trace is not None:
            trace.append(StageShape("data", clip.shape[-4], tuple(clip.shape[-3:])))
        tf = self.embed(clip)
        if trace is not None:
            trace.append(
                StageShape("local_token_embedding", tf.x.shape[-1], tf.grid, {"prefix": 0})
            )
            trace.append(
                StageShape("global_token_embedding", tf.x.shape[-1], None, {"tokens": 1})
            )
            trace.append(StageShape("tokenization", tf.x.shape[-1], tf.grid, {"prefix": tf.n_prefix}))
        block_outs = []
        x = tf
        for i, layer in enumerate(self.encoder):
            x = layer(x)
            if i in self._block_last_layer:
                block_outs.append(x)
                if trace is not None:
                    b = len(block_outs)
                    trace.append(
                        StageShape(f"encoder_block{b}", x.width, x.grid, {"prefix": x.n_prefix})
                    )
        return block_outs, tf

    def fuse(self, x_sa: TokenField, trace: list | None = None) -> TokenField:
        """Channel fusion stage: [encoder output | tail output] at twice the width."""
        if self.variant.tail == "glc":
            fused = self.tail(x_sa)
        elif self.variant.tail == "sa":
            extra = self.tail(x_sa)
            fused = TokenField(ops.concat([x_sa.x, extra.x], axis=-1), x_sa.grid, x_sa.n_prefix)
        else:
            fused = TokenField(ops.concat([x_sa.x, x_sa.x], axis=-1), x_sa.grid, x_sa.n_prefix)
        if trace is not None:
            trace.append(
                StageShape(
                    TAIL_STAGE_NAMES[self.variant.tail], fused.width, fused.grid, {"prefix": fused.n_prefix}
                )
            )
        return fused

    def decode(self, fused: TokenField, skips, trace: list | None = None) -> TokenField:
        x = fused
        for k, layer in enumerate(self.decoder):
            x = layer(x)
            src = skips[k]
            proj = self.skip_projs[k](src.x)
            if src.grid != x.grid:
                proj = map_locals(
                    proj,
                    src.grid,
                    src.n_prefix,
                    lambda vol: ops.resize_cl(vol, x.grid),
                    x.grid,
                )
            x = TokenField(ops.add(x.x, proj), x.grid, x.n_prefix)
            if trace is not None:
                trace.append(
                    StageShape(f"decoder_block{k + 1}", x.width, x.grid, {"prefix": x.n_prefix})
                )
        return x

    def gaze_head(self, tokens: TokenField, trace: list | None = None) -> Tensor:
        """Per-frame probability maps from the decoder output's local tokens."""
        vol = unflatten_locals(tokens)
        logits = self.head(vol)
        t, h, w = tokens.grid
        batched = logits.ndim == 5
        if batched:
            b = logits.shape[0]
            flat = ops.reshape(logits, (b, t, h * w))
        else:
            flat = ops.reshape(logits, (t, h * w))
        probs = ops.softmax_t(flat, axis=-1, tau=self.cfg.tau)
        out = ops.reshape(probs, (b, t, h, w) if batched else (t, h, w))
        if trace is not None:
            trace.append(StageShape("head", 1, tokens.grid, {"prefix": 0, "tau": self.cfg.tau}))
        return out

    def forward_gaze(self, clip: Tensor, trace: list | None = None) -> Tensor:
        if self.cfg.head_mode != "gaze":
            raise ConfigError(f"head mode {self.cfg.head_mode!r} has no gaze head")
        block_outs, tokens_tf = self.encode(clip, trace)
        fused = self.fuse(block_outs[3], trace)
        skips = [block_outs[2], block_outs[1], block_outs[0], tokens_tf]
        decoded = self.decode(fused, skips, trace)
        return self.gaze_head(decoded, trace)

    def forward_class(self, clip: Tensor) -> Tensor:
        if self.cfg.head_mode not in ("class-token", "class-pool"):
            raise ConfigError(f"head mode {self.cfg.head_mode!r} has no classification head")
        block_outs, _ = self.encode(clip)
        fused = self.fuse(block_outs[3])
        if self.cfg.head_mode == "class-token":
            if fused.n_prefix < 2:
                raise ConfigError("class-token head requires the inserted class token")
            row = ops.narrow(fused.x, -2, 1, 2)
            row = ops.reshape(row, fused.x.shape[:-2] + (fused.width,))
        else:
            row = ops.tmean(fused.x, axis=-2)
        return self.class_head(row)

    def head_maps(self, clip: Tensor) -> np.ndarray:
        """Per-head correlation maps of the fused stage, at the token grid."""
        if self.variant.tail != "glc":
            raise ConfigError(f"variant {self.variant.tag!r} has no correlation stage")
        block_outs, _ = self.encode(clip)
        return self.tail.head_maps(block_outs[3])


def build_model(cfg: ModelConfig, variant: str | Variant, seed: int, all_random: bool = False) -> GazeVideoNet:
    model = GazeVideoNet(cfg, variant)
    model.init_params(seed, all_random=all_random)
    if cfg.dtype == "float64":
        model.to_dtype(np.float64)
    return model


def runtime_trace_matches(ledger: list[StageShape], trace: list[StageShape]) -> list[str]:
    """Compare a symbolic ledger to a recorded forward trace; returns mismatches."""
    problems = []
    if len(ledger) != len(trace):
        problems.append(f"stage count differs: ledger {len(ledger)} vs trace {len(trace)}")
    for ls, ts in zip(ledger, trace):
        if ls.name != ts.name:
            problems.append(f"stage name {ls.name!r} vs {ts.name!r}")
            continue
        if ls.width != ts.width:
            problems.append(f"{ls.name}: width {ls.width} vs {ts.width}")
        if ls.grid != ts.grid:
            problems.append(f"{ls.name}: grid {ls.grid} vs {ts.grid}")
    return problems
