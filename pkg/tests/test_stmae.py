import numpy as np
import pytest

from minihvm import numcore as nc
from minihvm import stmae as sm
from minihvm.stmae.masking import stack_masked, stack_visible
from minihvm.stmae.model import init_params, run_blocks, standardize_patches


def geom(t=8, h=8, w=8, c=3, pt=2, ph=4, pw=4):
    return sm.PatchGeometry(frames=t, height=h, width=w, channels=c, p_t=pt, p_h=ph, p_w=pw)


class TestGeometry:
    def test_paper_token_counts(self):
        g224 = geom(16, 224, 224, 3, 2, 14, 14)
        assert (g224.n_t, g224.n_h, g224.n_w) == (8, 16, 16)
        assert g224.n_tokens == 2048
        g448 = geom(16, 448, 448, 3, 2, 14, 14)
        assert g448.n_tokens == 8192
        assert g224.patch_dim == 2 * 14 * 14 * 3 == 1176

    def test_divisibility_enforced(self):
        with pytest.raises(ValueError):
            geom(t=15)
        with pytest.raises(ValueError):
            geom(h=30, ph=4)

    def test_roundtrip_exact_many_geometries(self):
        rng = np.random.default_rng(0)
        cases = [geom(), geom(16, 32, 32), geom(4, 4, 4, 1, 1, 2, 2),
                 geom(2, 6, 10, 2, 2, 3, 5), geom(16, 28, 28, 3, 2, 14, 14)]
        for g in cases:
            clip = rng.standard_normal((g.frames, g.channels, g.height, g.width))
            back = sm.unpatchify(sm.patchify(clip, g), g)
            np.testing.assert_array_equal(back, clip)
            batch = rng.standard_normal((3, g.frames, g.channels, g.height, g.width))
            np.testing.assert_array_equal(sm.unpatchify(sm.patchify(batch, g), g), batch)

    def test_all_ones_grid(self):
        g = geom()
        clip = sm.unpatchify(np.ones((g.n_tokens, g.patch_dim)), g)
        np.testing.assert_array_equal(clip, np.ones((8, 3, 8, 8)))

    def test_single_patch_row_is_flattened_clip(self):
        g = geom(4, 6, 6, 2, 4, 6, 6)  # one patch covering the whole clip
        rng = np.random.default_rng(1)
        clip = rng.standard_normal((4, 2, 6, 6))
        grid = sm.patchify(clip, g)
        assert grid.shape == (1, clip.size)
        np.testing.assert_array_equal(grid[0], clip.ravel())

    def test_patchify_tensor_path_matches_numpy(self):
        g = geom()
        rng = np.random.default_rng(2)
        clip = rng.standard_normal((2, g.frames, g.channels, g.height, g.width))
        t = nc.Tensor(clip, requires_grad=True)
        np.testing.assert_array_equal(sm.patchify(t, g).data, sm.patchify(clip, g))

    def test_image_clip_patch_temporal_pairs_identical(self):
        # static clip: within every 2-frame patch, both temporal slices agree
        from minihvm.vidpipe import image_to_clip
        rng = np.random.default_rng(3)
        clip = image_to_clip(rng.random((3, 8, 8)), clip_len=8)
        g = geom()
        grid = sm.patchify(clip.frames, g)
        per_patch = grid.reshape(g.n_tokens, g.p_t, g.channels, g.p_h, g.p_w)
        np.testing.assert_array_equal(per_patch[:, 0], per_patch[:, 1])


class TestPosEmbed:
    def test_deterministic(self):
        g = geom()
        np.testing.assert_array_equal(sm.pos_embed(g, 16), sm.pos_embed(g, 16))

    def test_distinct_rows_exhaustive_small_grids(self):
        for g in [geom(), geom(4, 8, 12, 1, 2, 4, 4), geom(2, 4, 4, 1, 1, 2, 2)]:
            for dim in (4, 8, 12):
                table = sm.pos_embed(g, dim)
                uniq = np.unique(table, axis=0)
                assert uniq.shape[0] == g.n_tokens, f"collision at {g} dim={dim}"

    def test_single_position(self):
        g = geom(2, 4, 4, 1, 2, 4, 4)
        table = sm.pos_embed(g, 8)
        assert table.shape == (1, 8)
        assert np.all(np.isfinite(table))

    def test_dim_must_divide_by_four(self):
        with pytest.raises(ValueError):
            sm.pos_embed(geom(), 6)


class TestMasking:
    @pytest.mark.parametrize("n,ratio,expect", [(2048, 0.9, 1843), (8192, 0.95, 7782), (512, 0.9, 460)])
    def test_floor_rule(self, n, ratio, expect):
        plan = sm.sample_mask(n, ratio, 0)
        assert plan.n_masked == expect
        assert plan.n_visible == n - expect

    def test_zero_ratio_all_visible(self):
        plan = sm.sample_mask(10, 0.0, 1)
        assert plan.n_masked == 0 and plan.n_visible == 10

    def test_partition_disjoint_sorted(self):
        plan = sm.sample_mask(100, 0.37, 5)
        assert np.all(np.diff(plan.masked_idx) > 0)
        assert np.all(np.diff(plan.visible_idx) > 0)
        union = np.union1d(plan.masked_idx, plan.visible_idx)
        np.testing.assert_array_equal(union, np.arange(100))
        assert len(np.intersect1d(plan.masked_idx, plan.visible_idx)) == 0

    def test_deterministic_per_seed(self):
        a, b = sm.sample_mask(64, 0.9, 7), sm.sample_mask(64, 0.9, 7)
        np.testing.assert_array_equal(a.masked_idx, b.masked_idx)

    def test_ratio_range_enforced(self):
        with pytest.raises(ValueError):
            sm.sample_mask(10, 1.0, 0)
        with pytest.raises(ValueError):
            sm.sample_mask(10, -0.1, 0)


class TestModelForward:
    def model(self, seed=0, **kw):
        return sm.STMAE(sm.micro_config(**kw), seed=seed)

    def clips(self, m, b=2, seed=1):
        g = m.config.geometry
        rng = np.random.default_rng(seed)
        return rng.random((b, g.frames, g.channels, g.height, g.width))

    def plans(self, m, b=2, seed0=0):
        g = m.config.geometry
        return [sm.sample_mask(g.n_tokens, m.config.mask_ratio, seed0 + i) for i in range(b)]

    def test_encode_token_counts(self):
        m = self.model()
        x = self.clips(m)
        plans = self.plans(m)
        vis = m.encode(x, plans)
        assert vis.shape == (2, plans[0].n_visible, m.config.enc_dim)
        full = m.encode(x, None)
        assert full.shape == (2, m.config.geometry.n_tokens, m.config.enc_dim)

    def test_decode_rows_equal_n_regardless_of_ratio(self):
        m = self.model()
        x = self.clips(m)
        plans = self.plans(m)
        pred = m.decode_predict(m.encode(x, plans), plans)
        g = m.config.geometry
        assert pred.shape == (2, g.n_tokens, g.patch_dim)

    def test_forward_deterministic(self):
        m = self.model()
        x = self.clips(m)
        plans = self.plans(m)
        a = m.forward_loss(x, plans).item()
        b = m.forward_loss(x, plans).item()
        assert a == b

    def test_block_stack_permutation_equivariant(self):
        # attention with no mask treats tokens as a set: permuting inputs
        # (with their positional rows already added) permutes outputs
        cfg = sm.micro_config()
        params = init_params(cfg, seed=3)
        rng = np.random.default_rng(4)
        x = rng.standard_normal((1, 6, cfg.enc_dim))
        perm = rng.permutation(6)
        out = run_blocks(params, "enc", nc.Tensor(x), cfg.enc_depth, cfg.enc_heads)
        out_p = run_blocks(params, "enc", nc.Tensor(x[:, perm]), cfg.enc_depth, cfg.enc_heads)
        np.testing.assert_allclose(out_p.data, out.data[:, perm], atol=1e-10)

    def test_gradient_flows_only_through_visible_tokens(self):
        m = self.model()
        g = m.config.geometry
        rng = np.random.default_rng(5)
        x = nc.Tensor(rng.random((1, g.frames, g.channels, g.height, g.width)),
                      requires_grad=True)
        plans = [sm.sample_mask(g.n_tokens, 0.75, 11)]
        loss = m.forward_loss(x, plans)
        loss.backward()
        grad_grid = sm.patchify(x.grad, g)  # (1, N, patch_dim)
        masked_grad = grad_grid[0][plans[0].masked_idx]
        visible_grad = grad_grid[0][plans[0].visible_idx]
        assert np.all(masked_grad == 0.0)
        assert np.abs(visible_grad).max() > 0.0

    def test_visible_input_gradient_matches_finite_differences(self):
        # the reconstruction target is a constant, so hold it fixed and
        # differentiate only the encoder path
        m = self.model()
        g = m.config.geometry
        rng = np.random.default_rng(6)
        x0 = rng.random((1, g.frames, g.channels, g.height, g.width))
        x = nc.Tensor(x0, requires_grad=True)
        plans = [sm.sample_mask(g.n_tokens, 0.75, 12)]
        target = sm.patchify(x0, g)

        def fn(t):
            pred = m.decode_predict(m.encode(t, plans), plans)
            return sm.recon_loss(pred, target, plans, norm_pix=True)

        err = nc.grad_check(fn, [x], eps=1e-5, max_entries=24,
                            rng=np.random.default_rng(0))
        assert err <= 1e-4

    def test_classify_zero_head_gives_zero_logits(self):
        m = self.model(n_classes=4)
        logits = m.classify(self.clips(m))
        np.testing.assert_array_equal(logits.data, np.zeros((2, 4)))
        p = np.exp(logits.data) / np.exp(logits.data).sum(1, keepdims=True)
        np.testing.assert_allclose(p, 0.25)

    def test_identical_clips_identical_outputs(self):
        m = self.model(n_classes=3)
        x = self.clips(m, b=1)
        pair = np.concatenate([x, x])
        logits = m.classify(pair).data
        np.testing.assert_array_equal(logits[0], logits[1])
        emb = m.embed(pair)
        np.testing.assert_array_equal(emb[0], emb[1])
        assert emb.shape == (2, m.config.enc_dim)

    def test_embedding_changes_under_flip(self):
        from minihvm.vidpipe import hflip
        m = self.model()
        x = self.clips(m, b=1)
        e1 = m.embed(x)
        e2 = m.embed(np.ascontiguousarray(hflip(x[0]))[None])
        assert np.abs(e1 - e2).max() > 1e-8

    def test_classify_invariant_to_mask_seed(self):
        m = self.model(n_classes=4)
        x = self.clips(m)
        a = m.classify(x).data
        _ = sm.sample_mask(m.config.geometry.n_tokens, 0.9, 999)
        b = m.classify(x).data
        np.testing.assert_array_equal(a, b)


class TestReconLoss:
    def setup_case(self, b=2, n=8, d=6, ratio=0.5, seed=0):
        rng = np.random.default_rng(seed)
        target = rng.standard_normal((b, n, d))
        plans = [sm.sample_mask(n, ratio, seed + i) for i in range(b)]
        return target, plans

    def test_zero_when_pred_equals_target_on_masked(self):
        target, plans = self.setup_case()
        pred = target.copy()
        # corrupt visible rows only; loss must stay exactly zero
        for i, p in enumerate(plans):
            pred[i, p.visible_idx] += 100.0
        loss = sm.recon_loss(nc.Tensor(pred), target, plans, norm_pix=False)
        assert loss.item() == 0.0

    def test_single_masked_patch_constant_offset(self):
        n, d = 4, 5
        target = np.zeros((1, n, d))
        plan = sm.MaskPlan(n_tokens=n, ratio=0.25, masked_idx=np.array([2]),
                           visible_idx=np.array([0, 1, 3]))
        delta = 0.37
        pred = target.copy()
        pred[0, 2] += delta
        loss = sm.recon_loss(nc.Tensor(pred), target, [plan], norm_pix=False)
        assert loss.item() == pytest.approx(delta ** 2, rel=1e-12)

    def test_norm_pix_constant_target(self):
        # standardized constant patch ~ 0, so loss = mean of squared predictions
        n, d = 2, 8
        target = np.full((1, n, d), 0.6)
        plan = sm.MaskPlan(n_tokens=n, ratio=0.5, masked_idx=np.array([1]),
                           visible_idx=np.array([0]))
        rng = np.random.default_rng(1)
        pred = rng.standard_normal((1, n, d))
        loss = sm.recon_loss(nc.Tensor(pred), target, [plan], norm_pix=True)
        std_target = standardize_patches(target)
        np.testing.assert_allclose(std_target, 0.0, atol=1e-9)
        assert loss.item() == pytest.approx(np.mean((pred[0, 1] - std_target[0, 1]) ** 2))

    def test_norm_pix_statistics(self):
        rng = np.random.default_rng(2)
        grid = rng.standard_normal((3, 10, 32)) * 5 + 1
        s = standardize_patches(grid)
        np.testing.assert_allclose(s.mean(-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(s.var(-1), 1.0, atol=1e-5)

    def test_empty_masked_set_rejected(self):
        target, _ = self.setup_case()
        plan = sm.sample_mask(8, 0.0, 0)
        with pytest.raises(ValueError, match="empty masked"):
            sm.recon_loss(nc.Tensor(target), target, [plan, plan], norm_pix=False)

    def test_visible_row_gradient_identically_zero(self):
        target, plans = self.setup_case(b=2, n=10, d=4, ratio=0.6, seed=3)
        pred = nc.Tensor(np.random.default_rng(4).standard_normal(target.shape),
                         requires_grad=True)
        sm.recon_loss(pred, target, plans, norm_pix=True).backward()
        vis = stack_visible(plans)
        for i in range(2):
            assert np.all(pred.grad[i, vis[i]] == 0.0)
        msk = stack_masked(plans)
        assert np.abs(pred.grad[0, msk[0]]).max() > 0


class TestParamCount:
    def test_paper_preset_within_3_percent_of_633m(self):
        counts = sm.param_count(sm.paper_config_224())
        assert abs(counts["encoder"] - 633e6) / 633e6 < 0.03

    def test_zero_depth_closed_form(self):
        cfg = sm.ModelConfig(geometry=geom(), enc_dim=16, enc_depth=0, enc_heads=2,
                             dec_dim=8, dec_depth=0, dec_heads=2)
        counts = sm.param_count(cfg)
        g = cfg.geometry
        # patch embed + final LN only
        assert counts["encoder"] == g.patch_dim * 16 + 16 + 2 * 16
        assert counts["decoder"] == (16 * 8 + 8) + 8 + 2 * 8 + (8 * g.patch_dim + g.patch_dim)

    def test_depth_doubling_adds_per_block_count(self):
        base = sm.micro_config()
        import dataclasses
        deeper = dataclasses.replace(base, enc_depth=2 * base.enc_depth)
        c1, c2 = sm.param_count(base), sm.param_count(deeper)
        per_block = (c2["encoder"] - c1["encoder"]) / base.enc_depth
        single = dataclasses.replace(base, enc_depth=base.enc_depth + 1)
        assert sm.param_count(single)["encoder"] - c1["encoder"] == per_block

    def test_counts_match_actual_parameters(self):
        cfg = sm.desk_config(n_classes=5)
        m = sm.STMAE(cfg, seed=0)
        total = sum(p.size for p in m.params.values())
        assert total == sm.param_count(cfg)["total"]


class TestFullLossGradient:
    def test_micro_config_full_loss_grad_check(self):
        m = sm.STMAE(sm.micro_config(), seed=1)
        g = m.config.geometry
        rng = np.random.default_rng(2)
        x = rng.random((1, g.frames, g.channels, g.height, g.width))
        plans = [sm.sample_mask(g.n_tokens, m.config.mask_ratio, 3)]

        names = sorted(m.params)

        def loss_fn(*tensors):
            m.params = dict(zip(names, tensors))
            return m.forward_loss(x, plans)

        inputs = [m.params[n] for n in names]
        err = nc.grad_check(loss_fn, inputs, eps=1e-5, max_entries=2,
                            rng=np.random.default_rng(0))
        assert err <= 1e-4


class TestStateRoundtrip:
    def test_checkpoint_arrays_roundtrip(self, tmp_path):
        m = sm.STMAE(sm.micro_config(), seed=5)
        path = tmp_path / "w.stmae"
        nc.write_arrays(path, m.state_arrays())
        m2 = sm.STMAE(sm.micro_config(), seed=6)
        m2.load_state_arrays(nc.read_arrays(path))
        for k in m.params:
            np.testing.assert_array_equal(m2.params[k].data, m.params[k].data)

    def test_shape_mismatch_rejected(self, tmp_path):
        m = sm.STMAE(sm.micro_config(), seed=5)
        arrays = m.state_arrays()
        arrays["param.enc.embed.w"] = np.zeros((2, 2))
        with pytest.raises(ValueError, match="shape"):
            m.load_state_arrays(arrays)
