"""Shape ledger, end-to-end forward contracts, and head semantics."""

import numpy as np
import pytest

from glcgaze import ops
from glcgaze.attention import map_locals
from glcgaze.config import desk_config, full_config, tiny_config
from glcgaze.errors import ConfigError
from glcgaze.network import GazeVideoNet, build_model, infer_shapes, runtime_trace_matches
from glcgaze.tensor import Tensor, no_grad

# (name, width, grid) rows of the full-preset architecture table
FULL_TABLE = [
    ("data", 3, (8, 256, 256)),
    ("local_token_embedding", 96, (4, 64, 64)),
    ("global_token_embedding", 96, None),
    ("tokenization", 96, (4, 64, 64)),
    ("encoder_block1", 192, (4, 64, 64)),
    ("encoder_block2", 384, (4, 32, 32)),
    ("encoder_block3", 768, (4, 16, 16)),
    ("encoder_block4", 768, (4, 8, 8)),
    ("global_local_correlation", 1536, (4, 8, 8)),
    ("decoder_block1", 768, (4, 16, 16)),
    ("decoder_block2", 384, (4, 32, 32)),
    ("decoder_block3", 192, (4, 64, 64)),
    ("decoder_block4", 96, (8, 64, 64)),
    ("head", 1, (8, 64, 64)),
]

FULL_MSA_MLP = {
    "encoder_block1": (96, 384, 1),
    "encoder_block2": (192, 768, 2),
    "encoder_block3": (384, 1536, 11),
    "encoder_block4": (768, 3072, 2),
    "decoder_block1": (1536, 3072, 1),
    "decoder_block2": (768, 1536, 1),
    "decoder_block3": (384, 768, 1),
    "decoder_block4": (192, 384, 1),
}


class TestShapeLedger:
    def test_full_preset_reproduces_architecture_table(self):
        ledger = infer_shapes(full_config(), "mvit+global+glc")
        assert [(s.name, s.width, s.grid) for s in ledger] == FULL_TABLE
        by_name = {s.name: s for s in ledger}
        assert by_name["global_token_embedding"].extra["flatten_width"] == 24576
        assert by_name["global_token_embedding"].extra["stack_convs"] == 3
        assert by_name["tokenization"].tokens == 1 + 4 * 64 * 64 == 16385
        assert by_name["global_local_correlation"].tokens == 1 + 4 * 8 * 8
        assert by_name["global_local_correlation"].extra["heads"] == 8
        assert by_name["decoder_block4"].tokens == 1 + 8 * 64 * 64
        for name, (msa, mlp, depth) in FULL_MSA_MLP.items():
            assert by_name[name].extra["msa_width"] == msa, name
            assert by_name[name].extra["mlp_hidden"] == mlp, name
            if name.startswith("encoder"):
                assert by_name[name].extra["depth"] == depth, name

    def test_desk_ledger_hand_derived_ladder(self):
        ledger = {s.name: s for s in infer_shapes(desk_config(), "mvit+global+glc")}
        assert (ledger["encoder_block1"].width, ledger["encoder_block1"].grid) == (64, (4, 16, 16))
        assert (ledger["encoder_block2"].width, ledger["encoder_block2"].grid) == (128, (4, 8, 8))
        assert (ledger["encoder_block3"].width, ledger["encoder_block3"].grid) == (128, (4, 4, 4))
        assert (ledger["encoder_block4"].width, ledger["encoder_block4"].grid) == (128, (4, 2, 2))
        assert (ledger["global_local_correlation"].width) == 256
        assert (ledger["decoder_block4"].width, ledger["decoder_block4"].grid) == (32, (8, 16, 16))
        assert ledger["decoder_block4"].tokens == 1 + 8 * 16 * 16

    def test_encoder_grid_is_input_grid_over_cumulative_strides(self):
        cfg = desk_config()
        ledger = {s.name: s for s in infer_shapes(cfg)}
        grid = list(cfg.token_grid)
        for block in range(4):
            for axis in range(3):
                grid[axis] //= cfg.q_strides[block][axis]
            assert ledger[f"encoder_block{block + 1}"].grid == tuple(grid)

    def test_desk_ledger_matches_real_forward_trace(self):
        cfg = desk_config()
        model = build_model(cfg, "mvit+global+glc", seed=0)
        clip = Tensor(np.random.default_rng(0).random((3, 8, 64, 64)).astype(np.float32))
        trace = []
        with no_grad():
            out = model.forward_gaze(clip, trace=trace)
        ledger = infer_shapes(cfg, "mvit+global+glc")
        problems = runtime_trace_matches(ledger, trace)
        assert not problems, problems
        assert out.shape == (8, 16, 16)

    def test_inconsistent_config_names_bad_transition(self):
        with pytest.raises(ConfigError, match="block 2"):
            desk_config(q_strides=((1, 1, 1), (1, 3, 3), (1, 1, 1), (1, 1, 1)))


class TestForwardContracts:
    def test_heatmaps_are_distributions_over_many_weight_draws(self):
        cfg = tiny_config()
        model = GazeVideoNet(cfg, "mvit+global+glc")
        clip = Tensor(np.random.default_rng(1).random((3, 4, 8, 8)).astype(np.float32))
        with no_grad():
            for seed in range(1000):
                model.init_params(seed, all_random=True)
                out = model.forward_gaze(clip).data
                assert np.all(out >= 0)
                np.testing.assert_allclose(out.sum(axis=(-1, -2)), 1.0, atol=1e-6)

    def test_gradient_reaches_every_parameter(self):
        cfg = tiny_config()
        model = build_model(cfg, "mvit+global+glc", seed=3, all_random=True)
        clip = Tensor(np.random.default_rng(2).random((3, 4, 8, 8)).astype(np.float32))
        pred = model.forward_gaze(clip)
        loss = ops.tsum(ops.mul(pred, pred))
        loss.backward()
        for name, p in model.named_parameters():
            assert p.grad is not None, f"no grad for {name}"
            assert np.any(p.grad != 0), f"identically zero grad for {name}"

    def test_ablation_switch_keeps_decoder_shapes(self):
        cfg = tiny_config()
        traces = {}
        for tag in ("mvit", "mvit+global+sa", "mvit+global+glc"):
            model = build_model(cfg, tag, seed=0)
            clip = Tensor(np.zeros((3, 4, 8, 8), dtype=np.float32))
            trace = []
            with no_grad():
                model.forward_gaze(clip, trace=trace)
            traces[tag] = [(s.name, s.width, s.grid) for s in trace if "decoder" in s.name or s.name == "head"]
        assert traces["mvit"] == traces["mvit+global+sa"] == traces["mvit+global+glc"]

    def test_global_row_bypasses_resampling(self):
        # the prefix row of a pooled token field is the input prefix row, bit-exact
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(1 + 8, 6)).astype(np.float32))
        out = map_locals(
            x, (2, 2, 2), 1, lambda vol: ops.max_pool_cl(vol, (1, 2, 2)), (2, 1, 1)
        )
        assert out.data[0].tobytes() == x.data[0].tobytes()
        out2 = map_locals(
            x, (2, 2, 2), 1, lambda vol: ops.resize_cl(vol, (4, 2, 2)), (4, 2, 2)
        )
        assert out2.data[0].tobytes() == x.data[0].tobytes()

    def test_constant_field_survives_decoder_resample(self):
        x = Tensor(np.full((1 + 8, 4), 1.5, dtype=np.float32))
        out = map_locals(
            x, (2, 2, 2), 1, lambda vol: ops.resize_cl(vol, (2, 4, 4)), (2, 4, 4)
        )
        np.testing.assert_allclose(out.data[1:], 1.5, atol=1e-6)

    def test_batched_forward_matches_unbatched(self):
        cfg = tiny_config()
        model = build_model(cfg, "mvit+global+glc", seed=1)
        clips = np.random.default_rng(3).random((2, 3, 4, 8, 8)).astype(np.float32)
        with no_grad():
            batched = model.forward_gaze(Tensor(clips)).data
            singles = [model.forward_gaze(Tensor(c)).data for c in clips]
        np.testing.assert_allclose(batched[0], singles[0], atol=1e-5)
        np.testing.assert_allclose(batched[1], singles[1], atol=1e-5)


class TestGazeHead:
    def test_untrained_head_is_exactly_uniform(self):
        # gaze head weights start at zero, so step-0 output is the uniform map
        cfg = tiny_config()
        model = build_model(cfg, "mvit+global+glc", seed=7)
        clip = Tensor(np.random.default_rng(4).random((3, 4, 8, 8)).astype(np.float32))
        with no_grad():
            out = model.forward_gaze(clip).data
        t, h, w = cfg.out_grid
        np.testing.assert_array_equal(out, np.full((t, h, w), 1.0 / (h * w), dtype=np.float32))

    def test_frames_sum_to_one(self):
        cfg = tiny_config()
        model = build_model(cfg, "mvit+global(b)", seed=8, all_random=True)
        clip = Tensor(np.random.default_rng(5).random((3, 4, 8, 8)).astype(np.float32))
        with no_grad():
            out = model.forward_gaze(clip).data
        np.testing.assert_allclose(out.sum(axis=(-1, -2)), 1.0, atol=1e-6)


class TestClassHeads:
    def test_class_pool_of_identical_tokens_is_linear_map(self):
        cfg = tiny_config(head_mode="class-pool")
        model = build_model(cfg, "mvit", seed=0, all_random=True)
        model.to_dtype(np.float64)
        tok = np.random.default_rng(6).normal(size=cfg.widths[3])
        from glcgaze.embedding import TokenField

        x = Tensor(np.tile(tok, (1 + 8, 1)))
        with no_grad():
            fused = model.fuse(TokenField(x, (2, 2, 2)))
            logits = model.class_head(ops.tmean(fused.x, axis=-2)).data
        expected = np.concatenate([tok, tok]) @ model.class_head.w.data + model.class_head.b.data
        np.testing.assert_allclose(logits, expected, atol=1e-9)

    def test_logits_shape_both_modes(self):
        for mode in ("class-token", "class-pool"):
            cfg = tiny_config(head_mode=mode, n_classes=5)
            model = build_model(cfg, "mvit+global+glc", seed=1)
            clip = Tensor(np.zeros((3, 4, 8, 8), dtype=np.float32))
            with no_grad():
                logits = model.forward_class(clip)
            assert logits.shape == (5,)

    def test_class_pool_consumes_fused_width(self):
        cfg = tiny_config(head_mode="class-pool")
        model = GazeVideoNet(cfg, "mvit+global+glc")
        assert model.class_head.w.shape[0] == 2 * cfg.widths[3]

    def test_class_token_mode_without_token_rejected(self):
        cfg = tiny_config(head_mode="class-pool")
        model = build_model(cfg, "mvit", seed=0)
        from glcgaze.embedding import TokenField

        model.cfg.head_mode = "class-token"  # simulate a mismatched config
        with pytest.raises(ConfigError):
            model.forward_class(Tensor(np.zeros((3, 4, 8, 8), dtype=np.float32)))

    def test_gaze_model_rejects_class_forward(self):
        model = build_model(tiny_config(), "mvit", seed=0)
        with pytest.raises(ConfigError):
            model.forward_class(Tensor(np.zeros((3, 4, 8, 8), dtype=np.float32)))


class TestParameterParity:
    def test_sa_and_glc_variants_have_equal_counts(self):
        cfg = desk_config()
        sa = GazeVideoNet(cfg, "mvit+global+sa")
        glc = GazeVideoNet(cfg, "mvit+global+glc")
        assert sa.parameter_count() == glc.parameter_count()

    def test_shared_submodules_share_init(self):
        cfg = tiny_config()
        m1 = build_model(cfg, "mvit+global+sa", seed=42)
        m2 = build_model(cfg, "mvit+global+glc", seed=42)
        p1 = dict(m1.named_parameters())
        p2 = dict(m2.named_parameters())
        shared = set(p1) & set(p2)
        assert any(k.startswith("decoder") for k in shared)
        for k in shared:
            assert p1[k].data.tobytes() == p2[k].data.tobytes(), k


def test_head_maps_require_glc_variant():
    model = build_model(tiny_config(), "mvit+global+sa", seed=0)
    with pytest.raises(ConfigError):
        model.head_maps(Tensor(np.zeros((3, 4, 8, 8), dtype=np.float32)))


def test_head_maps_shape_at_fused_stage():
    cfg = tiny_config()
    model = build_model(cfg, "mvit+global+glc", seed=2)
    clip = Tensor(np.random.default_rng(9).random((3, 4, 8, 8)).astype(np.float32))
    maps = model.head_maps(clip)
    assert maps.shape == (cfg.widths[3] // cfg.head_dim, 2, 1, 1)
    np.testing.assert_allclose(maps.sum(axis=(1, 2, 3)), 1.0, atol=1e-6)
