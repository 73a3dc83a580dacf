"""Token embedding: local patches, the four global strategies, tokenize."""

import numpy as np
import pytest

from glcgaze import ops
from glcgaze.config import desk_config, full_config
from glcgaze.embedding import (
    GlobalTokenEmbed,
    LocalTokenEmbed,
    TokenEmbedder,
    global_stack_grid,
    tokenize,
    unflatten_locals,
)
from glcgaze.errors import ConfigError
from glcgaze.tensor import Tensor


def make_local(cfg, seed=0):
    emb = LocalTokenEmbed(cfg)
    emb.init_params(seed)
    return emb


class TestLocalEmbedding:
    def test_desk_token_count(self):
        cfg = desk_config()
        emb = make_local(cfg)
        clip = Tensor(np.zeros((3, 8, 64, 64), dtype=np.float32))
        tokens, vol = emb(clip)
        assert cfg.n_local == 4 * 16 * 16 == 1024
        assert tokens.shape == (1024, 32)
        assert vol.shape == (32, 4, 16, 16)

    def test_full_scale_token_count(self):
        cfg = full_config()
        emb = make_local(cfg)
        clip = Tensor(np.zeros((3, 8, 256, 256), dtype=np.float32))
        tokens, vol = emb(clip)
        assert tokens.shape == (16384, 96)
        assert vol.shape == (96, 4, 64, 64)

    def test_constant_clip_gives_identical_interior_tokens(self):
        cfg = desk_config()
        emb = make_local(cfg, seed=3)
        clip = Tensor(np.full((3, 8, 64, 64), 0.5, dtype=np.float32))
        tokens, _ = emb(clip, add_positions=False)
        t, h, w = cfg.token_grid
        grid_tokens = tokens.data.reshape(t, h, w, cfg.embed_dim)
        # interior = receptive fields that never touch zero padding
        interior = grid_tokens[1:3, 1:15, 1:15].reshape(-1, cfg.embed_dim)
        assert np.abs(interior - interior[0]).max() < 1e-5

    def test_positions_change_locals_only(self):
        cfg = desk_config()
        emb = make_local(cfg, seed=4)
        clip = Tensor(np.random.default_rng(0).random((3, 8, 64, 64)).astype(np.float32))
        with_pos, _ = emb(clip, add_positions=True)
        without, _ = emb(clip, add_positions=False)
        gtok = Tensor(np.ones((1, 32), dtype=np.float32))
        tf_pos = tokenize(with_pos, gtok, cfg.token_grid)
        tf_raw = tokenize(without, gtok, cfg.token_grid)
        assert tf_pos.x.data[0].tobytes() == tf_raw.x.data[0].tobytes()
        assert not np.array_equal(tf_pos.x.data[1:], tf_raw.x.data[1:])


class TestGlobalEmbedding:
    def test_strategy_a_constant_clip(self):
        cfg = desk_config()
        g = GlobalTokenEmbed(cfg, "a")
        g.init_params(1)
        c = 0.37
        clip = Tensor(np.full((3, 8, 64, 64), c, dtype=np.float32))
        out = g(clip, None)
        expected = np.full(3, c, dtype=np.float32) @ g.lift.w.data + g.lift.b.data
        assert out.shape == (1, 32)
        np.testing.assert_allclose(out.data[0], expected, atol=1e-6)

    def test_strategy_b_spike_selection(self):
        cfg = desk_config()
        g = GlobalTokenEmbed(cfg, "b")
        grid = np.zeros((32, 4, 16, 16), dtype=np.float32)
        spike = np.random.default_rng(2).random(32).astype(np.float32) + 1.0
        grid[:, 2, 5, 7] = spike
        out = g(None, Tensor(grid))
        np.testing.assert_allclose(out.data[0], spike, atol=0)

    def test_strategy_b_flip_invariance(self):
        cfg = desk_config()
        g = GlobalTokenEmbed(cfg, "b")
        vol = np.random.default_rng(3).random((32, 4, 16, 16)).astype(np.float32)
        out = g(None, Tensor(vol)).data
        flipped = g(None, Tensor(vol[:, :, :, ::-1].copy())).data
        np.testing.assert_array_equal(out, flipped)

    def test_strategy_d_full_scale_flatten_width(self):
        cfg = full_config()
        g = GlobalTokenEmbed(cfg, "d")
        g.init_params(5)
        assert global_stack_grid((4, 64, 64)) == (4, 8, 8)
        assert g.flatten_width == 96 * 4 * 8 * 8 == 24576
        vol = Tensor(np.random.default_rng(4).random((96, 4, 64, 64)).astype(np.float32))
        out = g(None, vol)
        assert out.shape == (1, 96)

    def test_strategy_c_consumes_clip(self):
        cfg = desk_config()
        g = GlobalTokenEmbed(cfg, "c")
        g.init_params(6)
        clip = Tensor(np.random.default_rng(5).random((3, 8, 64, 64)).astype(np.float32))
        out = g(clip, None)
        assert out.shape == (1, 32)
        with pytest.raises(ConfigError):
            g(None, Tensor(np.zeros((32, 4, 16, 16), dtype=np.float32)))

    def test_single_row_for_all_strategies(self):
        cfg = desk_config()
        clip = Tensor(np.random.default_rng(6).random((3, 8, 64, 64)).astype(np.float32))
        for strategy in "abcd":
            g = GlobalTokenEmbed(cfg, strategy)
            g.init_params(7)
            vol = Tensor(np.random.default_rng(7).random((32, 4, 16, 16)).astype(np.float32))
            out = g(clip, vol)
            assert out.shape == (1, 32)

    def test_unknown_strategy_rejected(self):
        with pytest.raises(ConfigError):
            GlobalTokenEmbed(desk_config(), "e")

    def test_batched_matches_unbatched(self):
        cfg = desk_config()
        for strategy in "abcd":
            g = GlobalTokenEmbed(cfg, strategy)
            g.init_params(8)
            rng = np.random.default_rng(9)
            clips = rng.random((2, 3, 8, 64, 64)).astype(np.float32)
            vols = rng.random((2, 32, 4, 16, 16)).astype(np.float32)
            batched = g(Tensor(clips), Tensor(vols)).data
            for i in range(2):
                single = g(Tensor(clips[i]), Tensor(vols[i])).data
                np.testing.assert_allclose(batched[i], single, atol=1e-5)


class TestTokenize:
    def test_desk_shape_and_global_row(self):
        local = Tensor(np.random.default_rng(0).random((1024, 32)).astype(np.float32))
        gtok = Tensor(np.random.default_rng(1).random((1, 32)).astype(np.float32))
        tf = tokenize(local, gtok, (4, 16, 16))
        assert tf.x.shape == (1025, 32)
        np.testing.assert_array_equal(tf.x.data[0], gtok.data[0])

    def test_full_scale_token_total(self):
        local = Tensor(np.zeros((16384, 96), dtype=np.float32))
        gtok = Tensor(np.zeros((1, 96), dtype=np.float32))
        tf = tokenize(local, gtok, (4, 64, 64))
        assert tf.x.shape == (16385, 96)

    def test_unflatten_roundtrip(self):
        rng = np.random.default_rng(11)
        vol = rng.random((6, 2, 3, 4)).astype(np.float32)
        local = Tensor(np.ascontiguousarray(vol.transpose(1, 2, 3, 0).reshape(-1, 6)))
        tf = tokenize(local, Tensor(np.zeros((1, 6), dtype=np.float32)), (2, 3, 4))
        back = unflatten_locals(tf)
        np.testing.assert_array_equal(back.data, vol)

    def test_width_mismatch_rejected(self):
        from glcgaze.errors import ShapeError

        with pytest.raises(ShapeError):
            tokenize(
                Tensor(np.zeros((8, 4), dtype=np.float32)),
                Tensor(np.zeros((1, 5), dtype=np.float32)),
                (2, 2, 2),
            )


def test_token_embedder_baseline_uses_constant_token():
    cfg = desk_config()
    emb = TokenEmbedder(cfg, use_global_embed=False, strategy=None)
    emb.init_params(0)
    clips = np.random.default_rng(3).random((2, 3, 8, 64, 64)).astype(np.float32)
    tf = emb(Tensor(clips))
    assert tf.x.shape == (2, 1025, 32)
    np.testing.assert_array_equal(tf.x.data[0, 0], emb.global_const.data[0])
    np.testing.assert_array_equal(tf.x.data[1, 0], emb.global_const.data[0])
