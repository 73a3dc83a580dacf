"""Model and run configuration.

``ModelConfig`` pins the whole architecture: patch strides, block depths and
widths, pooling/upsampling schedules, attention geometry, and the pixel-unit
constants for labels and evaluation. Two real presets exist. ``desk`` is the
scale every training/verification run uses; ``full`` reproduces the
full-resolution architecture and is only ever shape-inferred, never allocated.
``tiny`` is a miniature used by the gradient-check suite.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import ConfigError

Triple = tuple[int, int, int]


def _triple(x) -> Triple:
    t = tuple(int(v) for v in x)
    if len(t) != 3:
        raise ConfigError(f"expected a length-3 stride/factor, got {x!r}")
    return t


@dataclass(frozen=True)
class Variant:
    """One ablation row: token source for the global slot plus the fused tail."""

    tag: str
    use_global_embed: bool  # False: the global slot is a learned constant token
    strategy: str | None  # a|b|c|d when use_global_embed
    tail: str  # "none" | "sa" | "glc"


VARIANT_TAGS = (
    "mvit",
    "mvit+global(a)",
    "mvit+global(b)",
    "mvit+global(c)",
    "mvit+global(d)",
    "mvit+global+sa",
    "mvit+global+glc",
)


def parse_variant(tag: str) -> Variant:
    if tag == "mvit":
        return Variant(tag, False, None, "none")
    if tag.startswith("mvit+global(") and tag.endswith(")"):
        strategy = tag[len("mvit+global(") : -1]
        if strategy in ("a", "b", "c", "d"):
            return Variant(tag, True, strategy, "none")
    if tag == "mvit+global+sa":
        return Variant(tag, True, "d", "sa")
    if tag == "mvit+global+glc":
        return Variant(tag, True, "d", "glc")
    raise ConfigError(f"unknown variant {tag!r}; expected one of {VARIANT_TAGS}")


@dataclass
class ModelConfig:
    preset: str = "desk"
    in_channels: int = 3
    clip_t: int = 8
    clip_h: int = 64
    clip_w: int = 64
    patch_stride: Triple = (2, 4, 4)
    embed_dim: int = 32
    depths: tuple[int, int, int, int] = (1, 1, 2, 1)
    widths: tuple[int, int, int, int] = (64, 128, 128, 128)
    # applied at the first layer of each encoder block
    q_strides: tuple[Triple, ...] = ((1, 1, 1), (1, 2, 2), (1, 2, 2), (1, 2, 2))
    kv_strides: tuple[Triple, ...] = ((1, 4, 4), (1, 2, 2), (1, 1, 1), (1, 1, 1))
    dec_upsample: tuple[Triple, ...] = ((1, 2, 2), (1, 2, 2), (1, 2, 2), (2, 1, 1))
    dec_kv_strides: tuple[Triple, ...] = ((1, 1, 1), (1, 2, 2), (1, 2, 2), (1, 4, 4))
    head_dim: int = 16
    lam: float = 1e8
    tau: float = 2.0
    strategy: str = "d"
    mlp_ratio: int = 4
    head_mode: str = "gaze"  # gaze | class-token | class-pool
    n_classes: int = 10
    dtype: str = "float32"
    # pixel-unit constants at this scale
    label_kernel_size: int = 5
    label_sigma: float = 0.75
    eval_disk_radius: float = 2.25
    saccade_threshold: float = 10.0

    # -- derived geometry ---------------------------------------------------

    @property
    def token_grid(self) -> Triple:
        st, sh, sw = self.patch_stride
        return (self.clip_t // st, self.clip_h // sh, self.clip_w // sw)

    @property
    def n_local(self) -> int:
        t, h, w = self.token_grid
        return t * h * w

    @property
    def out_grid(self) -> Triple:
        _, sh, sw = self.patch_stride
        return (self.clip_t, self.clip_h // sh, self.clip_w // sw)

    @property
    def n_prefix(self) -> int:
        return 2 if self.head_mode == "class-token" else 1

    def decoder_widths(self) -> tuple[list[int], list[int]]:
        """(input widths, output widths) of the 4 decoder blocks (mirror ladder)."""
        w = self.widths
        outs = [w[2], w[1], w[0], self.embed_dim]
        ins = [2 * w[3], outs[0], outs[1], outs[2]]
        return ins, outs

    def encoder_layer_specs(self):
        """Per-layer attention geometry, flattened over the 4 blocks.

        Width changes at each block's final MLP; Q pooling happens at each
        block's first layer. MLP hidden width is mlp_ratio times the layer's
        input width.
        """
        specs = []
        d_in = self.embed_dim
        for block in range(4):
            for layer in range(self.depths[block]):
                last = layer == self.depths[block] - 1
                specs.append(
                    {
                        "block": block,
                        "d_in": d_in,
                        "d_out": self.widths[block] if last else d_in,
                        "q_stride": self.q_strides[block] if layer == 0 else (1, 1, 1),
                        "kv_stride": self.kv_strides[block],
                        "mlp_hidden": self.mlp_ratio * d_in,
                    }
                )
                d_in = specs[-1]["d_out"]
        return specs

    def decoder_block_specs(self):
        ins, outs = self.decoder_widths()
        specs = []
        for block in range(4):
            specs.append(
                {
                    "block": block,
                    "d_in": ins[block],
                    "d_out": outs[block],
                    "upsample": self.dec_upsample[block],
                    "kv_stride": self.dec_kv_strides[block],
                    # decoder MLP hidden is mlp_ratio times the *output* width
                    "mlp_hidden": self.mlp_ratio * outs[block],
                }
            )
        return specs

    # -- validation -----------------------------------------------------------

    def validate(self) -> "ModelConfig":
        st, sh, sw = self.patch_stride
        if self.clip_t % st or self.clip_h % sh or self.clip_w % sw:
            raise ConfigError(
                f"clip {self.clip_t}x{self.clip_h}x{self.clip_w} not divisible by "
                f"patch stride {self.patch_stride}"
            )
        for name in ("depths", "widths", "q_strides", "kv_strides", "dec_upsample", "dec_kv_strides"):
            if len(getattr(self, name)) != 4:
                raise ConfigError(f"{name} must have 4 entries")
        for w in (self.embed_dim, *self.widths):
            if w % self.head_dim:
                raise ConfigError(f"width {w} not divisible by head_dim {self.head_dim}")
        if self.strategy not in ("a", "b", "c", "d"):
            raise ConfigError(f"unknown global embedding strategy {self.strategy!r}")
        if self.head_mode not in ("gaze", "class-token", "class-pool"):
            raise ConfigError(f"unknown head mode {self.head_mode!r}")
        if self.tau <= 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")
        if self.lam <= 0:
            raise ConfigError(f"suppression constant must be positive, got {self.lam}")
        if self.label_kernel_size % 2 == 0:
            raise ConfigError("label kernel size must be odd")
        grid = list(self.token_grid)
        for block in range(4):
            for axis in range(3):
                s = self.q_strides[block][axis]
                if s > 1 and grid[axis] % s:
                    raise ConfigError(
                        f"encoder block {block + 1}: grid {tuple(grid)} not divisible by "
                        f"q stride {self.q_strides[block]}"
                    )
                grid[axis] = max(1, grid[axis] // s)
        for block in range(4):
            for axis in range(3):
                grid[axis] *= self.dec_upsample[block][axis]
        if tuple(grid) != self.out_grid:
            raise ConfigError(
                f"decoder upsample ladder ends at {tuple(grid)}, expected {self.out_grid}"
            )
        return self

    # -- serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown ModelConfig fields: {sorted(unknown)}")
        kwargs = dict(d)
        for name in ("patch_stride",):
            if name in kwargs:
                kwargs[name] = _triple(kwargs[name])
        for name in ("depths", "widths"):
            if name in kwargs:
                kwargs[name] = tuple(int(v) for v in kwargs[name])
        for name in ("q_strides", "kv_strides", "dec_upsample", "dec_kv_strides"):
            if name in kwargs:
                kwargs[name] = tuple(_triple(v) for v in kwargs[name])
        return cls(**kwargs).validate()


def desk_config(**overrides) -> ModelConfig:
    return replace(ModelConfig(), **overrides).validate()


def full_config(**overrides) -> ModelConfig:
    base = ModelConfig(
        preset="full",
        clip_t=8,
        clip_h=256,
        clip_w=256,
        embed_dim=96,
        depths=(1, 2, 11, 2),
        widths=(192, 384, 768, 768),
        kv_strides=((1, 8, 8), (1, 4, 4), (1, 2, 2), (1, 1, 1)),
        head_dim=96,
        label_kernel_size=19,
        label_sigma=3.0,
        eval_disk_radius=9.0,
        saccade_threshold=40.0,
    )
    return replace(base, **overrides).validate()


def tiny_config(**overrides) -> ModelConfig:
    base = ModelConfig(
        preset="tiny",
        clip_t=4,
        clip_h=8,
        clip_w=8,
        embed_dim=4,
        depths=(1, 1, 1, 1),
        widths=(4, 4, 4, 4),
        q_strides=((1, 1, 1), (1, 2, 2), (1, 1, 1), (1, 1, 1)),
        kv_strides=((1, 1, 1), (1, 1, 1), (1, 1, 1), (1, 1, 1)),
        dec_upsample=((1, 1, 1), (1, 1, 1), (1, 2, 2), (2, 1, 1)),
        dec_kv_strides=((1, 1, 1), (1, 1, 1), (1, 1, 1), (1, 1, 1)),
        head_dim=2,
        label_kernel_size=3,
        label_sigma=0.5,
        eval_disk_radius=1.0,
        saccade_threshold=2.5,
    )
    return replace(base, **overrides).validate()


PRESETS = {"desk": desk_config, "full": full_config, "tiny": tiny_config}


def make_model_config(preset: str = "desk", overrides: dict | None = None) -> ModelConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    cfg = PRESETS[preset]()
    if overrides:
        known = {f.name for f in fields(ModelConfig)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown ModelConfig overrides: {sorted(unknown)}")
        merged = cfg.to_dict()
        merged.update(overrides)
        cfg = ModelConfig.from_dict(merged)
    return cfg.validate()


# ---------------------------------------------------------------------------
# run configuration (CLI-facing)
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    dataset: str = ""
    out_dir: str = "out"
    seed: int = 0
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-4
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_frac: float = 0.05
    eval_every: int = 500
    checkpoint_every: int = 1000
    threads: int = 1
    variant: str = "mvit+global+glc"
    variants: tuple[str, ...] = ("mvit", "mvit+global+sa", "mvit+global+glc")
    preset: str = "desk"
    overrides: dict = field(default_factory=dict)
    checkpoint: str = ""
    clip_id: str = ""
    checks: tuple[str, ...] = ()
    n_eval_batch: int = 8

    def model_config(self) -> ModelConfig:
        return make_model_config(self.preset, self.overrides)

    def parsed_variant(self) -> Variant:
        return parse_variant(self.variant)

    def validate(self) -> "RunConfig":
        parse_variant(self.variant)
        for tag in self.variants:
            parse_variant(tag)
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        self.model_config()
        return self


def _coerce_set_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_run_config(path: str | None, sets: list[str] | None = None, **direct) -> RunConfig:
    """Build a RunConfig from a JSON file plus ``--set key=value`` overrides.

    The file is a flat object mirroring RunConfig fields, with an ``overrides``
    object for ModelConfig fields. ``--set overrides.tau=1.5`` targets that
    object; any other dotted key is rejected.
    """
    data: dict = {}
    if path:
        try:
            with open(path) as f:
                data = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        value = _coerce_set_value(raw)
        if key.startswith("overrides."):
            data.setdefault("overrides", {})[key[len("overrides.") :]] = value
        elif "." in key:
            raise ConfigError(f"unknown dotted --set key {key!r}")
        else:
            data[key] = value
    data.update({k: v for k, v in direct.items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
    if "variants" in data:
        data["variants"] = tuple(data["variants"])
    if "checks" in data:
        data["checks"] = tuple(data["checks"])
    cfg = RunConfig(**data)
    return cfg.validate()
