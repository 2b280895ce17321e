import dataclasses
import math

import numpy as np
import pytest
import torch

from stylemotion import (
    ConditionBundle,
    DiffusionConfig,
    NoiseSchedule,
    dominance,
    denoising_loss,
    forward_diffuse,
    linear_schedule,
    load_diffusion,
    modulate,
    region_projection_scores,
    sample_motion,
    save_diffusion,
)
from stylemotion.diffusion import DualCrossAttention, ModulationTelemetry, _region_slices


class TestNoiseSchedule:
    def test_alpha_bars_match_iterative_product(self):
        for T in (1, 10, 200, 1000):
            sched = linear_schedule(T)
            acc = 1.0
            expect = []
            for b in sched.betas:
                acc *= 1.0 - b
                expect.append(acc)
            assert np.allclose(sched.alpha_bars, expect, rtol=0, atol=1e-12)

    def test_alpha_bars_strictly_decreasing(self):
        bars = linear_schedule(200).alpha_bars
        assert (np.diff(bars) < 0).all()

    def test_betas_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([0.0, 0.1]))
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([0.5, 1.0]))

    def test_decreasing_betas_rejected(self):
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([0.2, 0.1]))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([]))


class TestForwardDiffuse:
    def test_zero_noise(self, rng):
        sched = linear_schedule(50)
        x0 = torch.as_tensor(rng.normal(size=(4, 3)))
        out = forward_diffuse(x0, 10, torch.zeros_like(x0), sched)
        assert np.allclose(out.numpy(), math.sqrt(sched.alpha_bars[9]) * x0.numpy(), atol=1e-12)

    def test_near_zero_beta_limit(self, rng):
        sched = NoiseSchedule(np.full(5, 1e-12))
        x0 = torch.as_tensor(rng.normal(size=(4, 3)))
        noise = torch.as_tensor(rng.normal(size=(4, 3)))
        out = forward_diffuse(x0, 5, noise, sched)
        assert np.allclose(out.numpy(), x0.numpy(), atol=1e-5)

    def test_marginal_matches_iterated_single_steps(self, rng):
        # The closed-form x_t marginal must match t sequential applications
        # of x_k = sqrt(1-beta_k) x_{k-1} + sqrt(beta_k) eps_k in distribution.
        sched = linear_schedule(20, 0.05, 0.25)
        t = 10
        n = 10_000
        x0 = 1.5
        iterated = np.full(n, x0)
        for k in range(t):
            iterated = (
                math.sqrt(1.0 - sched.betas[k]) * iterated
                + math.sqrt(sched.betas[k]) * rng.standard_normal(n)
            )
        ab = sched.alpha_bars[t - 1]
        closed = forward_diffuse(
            torch.full((n, 1), x0, dtype=torch.float64),
            t,
            torch.as_tensor(rng.standard_normal((n, 1))),
            sched,
        ).numpy()[:, 0]
        assert closed.mean() == pytest.approx(math.sqrt(ab) * x0, rel=0.02)
        assert iterated.mean() == pytest.approx(math.sqrt(ab) * x0, rel=0.02)
        assert closed.var() == pytest.approx(1.0 - ab, rel=0.02)
        assert iterated.var() == pytest.approx(1.0 - ab, rel=0.02)

    def test_timestep_out_of_range(self, rng):
        sched = linear_schedule(10)
        x = torch.zeros((2, 2))
        with pytest.raises(ValueError):
            forward_diffuse(x, 0, x, sched)
        with pytest.raises(ValueError):
            forward_diffuse(x, 11, x, sched)

    def test_shape_mismatch(self):
        sched = linear_schedule(10)
        with pytest.raises(ValueError):
            forward_diffuse(torch.zeros((2, 2)), 1, torch.zeros((2, 3)), sched)


class TestDenoisingLoss:
    def conditions(self, B, T, d):
        return ConditionBundle(
            audio_tokens=torch.zeros((B, T, d)), style_token=torch.zeros((B, 1, d))
        )

    def test_perfect_model_zero_loss(self, rng):
        sched = linear_schedule(20)
        noise = torch.as_tensor(rng.standard_normal((2, 8, 4)).astype(np.float32))

        def oracle(x_t, cond, t, use_hscales=True, telemetry=None):
            return noise

        loss = denoising_loss(
            oracle, torch.zeros((2, 8, 4)), self.conditions(2, 8, 16), sched,
            np.random.default_rng(0), t=5, noise=noise,
        )
        assert float(loss) == pytest.approx(0.0, abs=1e-12)

    def test_zero_model_unit_loss(self):
        sched = linear_schedule(20)
        rng = np.random.default_rng(1)

        def zero_model(x_t, cond, t, use_hscales=True, telemetry=None):
            return torch.zeros_like(x_t)

        losses = [
            float(
                denoising_loss(
                    zero_model, torch.zeros((8, 32, 8)), self.conditions(8, 32, 16),
                    sched, rng,
                )
            )
            for _ in range(20)
        ]
        assert np.mean(losses) == pytest.approx(1.0, abs=0.05)

    def test_bad_shapes_rejected(self):
        sched = linear_schedule(10)
        with pytest.raises(ValueError):
            denoising_loss(
                lambda *a, **k: None, torch.zeros((4, 8)), self.conditions(1, 8, 4),
                sched, np.random.default_rng(0),
            )


def brute_force_region_scores(Z_a, Z_s):
    Z = Z_a + Z_s
    d = Z_a.shape[-1]
    out = {}
    for region, sl in (("upper", slice(0, d // 2)), ("lower", slice(d // 2, d))):
        vals = {}
        z = Z[..., sl].reshape(-1)
        for name, m in (("a", Z_a), ("s", Z_s)):
            f = m[..., sl].reshape(-1)
            denom = np.linalg.norm(f) * np.linalg.norm(z)
            vals[name] = 0.0 if denom == 0 else float(f @ z / denom)
        out[region] = (vals["a"], vals["s"])
    return out


class TestRegionScores:
    def test_zero_style_stream(self, rng):
        Z_a = torch.as_tensor(rng.normal(size=(6, 8)))
        scores = region_projection_scores(Z_a, torch.zeros_like(Z_a))
        for region in ("upper", "lower"):
            P_a, P_s, flag = scores[region]
            assert float(P_a) == pytest.approx(1.0, abs=1e-10)
            assert float(P_s) == 0.0
            assert flag is True

    def test_collinear_streams(self, rng):
        Z = torch.as_tensor(rng.normal(size=(6, 8)))
        scores = region_projection_scores(Z, Z.clone())
        for region in ("upper", "lower"):
            P_a, P_s, flag = scores[region]
            assert float(P_a) == pytest.approx(1.0, abs=1e-10)
            assert float(P_s) == pytest.approx(1.0, abs=1e-10)
            assert flag is False

    def test_matches_brute_force(self, rng):
        for _ in range(20):
            Z_a = torch.as_tensor(rng.normal(size=(5, 12)))
            Z_s = torch.as_tensor(rng.normal(size=(5, 12)))
            scores = region_projection_scores(Z_a, Z_s)
            expect = brute_force_region_scores(Z_a.numpy(), Z_s.numpy())
            for region in ("upper", "lower"):
                P_a, P_s, _ = scores[region]
                assert float(P_a) == pytest.approx(expect[region][0], abs=1e-10)
                assert float(P_s) == pytest.approx(expect[region][1], abs=1e-10)

    def test_batched_matches_per_sample(self, rng):
        Z_a = torch.as_tensor(rng.normal(size=(3, 5, 8)))
        Z_s = torch.as_tensor(rng.normal(size=(3, 5, 8)))
        batched = region_projection_scores(Z_a, Z_s)
        for b in range(3):
            single = region_projection_scores(Z_a[b], Z_s[b])
            for region in ("upper", "lower"):
                assert float(batched[region][0][b]) == pytest.approx(
                    float(single[region][0]), abs=1e-12
                )

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            region_projection_scores(torch.zeros((3, 4)), torch.zeros((4, 4)))


class TestDominance:
    def test_equal_scores(self):
        assert float(dominance(0.3, 0.3)) == pytest.approx(0.5, abs=1e-7)

    def test_extremes(self):
        assert float(dominance(1.0, -1.0)) == pytest.approx(0.88080, abs=5e-6)
        assert float(dominance(-1.0, 1.0)) == pytest.approx(0.11920, abs=5e-6)

    def test_strict_monotonicity_grid(self):
        grid = np.linspace(-1, 1, 21)
        for p_s in (-0.5, 0.0, 0.5):
            vals = [float(dominance(p, p_s)) for p in grid]
            assert all(b > a for a, b in zip(vals, vals[1:]))
        for p_a in (-0.5, 0.0, 0.5):
            vals = [float(dominance(p_a, p)) for p in grid]
            assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_range_on_valid_inputs(self):
        lo, hi = 1 / (1 + math.e**2), 1 / (1 + math.e**-2)
        for p_a in np.linspace(-1, 1, 9):
            for p_s in np.linspace(-1, 1, 9):
                assert lo - 1e-6 <= float(dominance(p_a, p_s)) <= hi + 1e-6


class TestModulate:
    def test_half_dominance_arithmetic(self, rng):
        Z_a = torch.as_tensor(rng.normal(size=(4, 8)))
        Z_s = torch.as_tensor(rng.normal(size=(4, 8)))
        out = modulate(Z_a, Z_s, 0.5, 0.5)
        up, lo = _region_slices(8)["upper"], _region_slices(8)["lower"]
        assert np.allclose(out[:, up].numpy(), (2 * Z_s[:, up] + Z_a[:, up]).numpy(), atol=1e-12)
        assert np.allclose(out[:, lo].numpy(), (0.5 * Z_a[:, lo] + Z_s[:, lo]).numpy(), atol=1e-12)

    def test_unit_dominance_reduces_to_sum(self, rng):
        Z_a = torch.as_tensor(rng.normal(size=(4, 8)))
        Z_s = torch.as_tensor(rng.normal(size=(4, 8)))
        out = modulate(Z_a, Z_s, 1.0, 1.0)
        assert np.allclose(out.numpy(), (Z_a + Z_s).numpy(), atol=1e-12)

    def test_algebraic_inversion(self, rng):
        for _ in range(20):
            Z_a = torch.as_tensor(rng.normal(size=(3, 10)))
            Z_s = torch.as_tensor(rng.normal(size=(3, 10)))
            D_u, D_l = float(rng.uniform(0.2, 0.9)), float(rng.uniform(0.2, 0.9))
            out = modulate(Z_a, Z_s, D_u, D_l)
            up, lo = _region_slices(10)["upper"], _region_slices(10)["lower"]
            rec_s = (out[:, up] - Z_a[:, up]) * D_u
            rec_a = (out[:, lo] - Z_s[:, lo]) / D_l
            assert np.allclose(rec_s.numpy(), Z_s[:, up].numpy(), atol=1e-10)
            assert np.allclose(rec_a.numpy(), Z_a[:, lo].numpy(), atol=1e-10)

    def test_monotone_in_dominance(self, rng):
        Z_a = torch.as_tensor(rng.normal(size=(4, 8)))
        Z_s = torch.as_tensor(rng.normal(size=(4, 8)))
        up, lo = _region_slices(8)["upper"], _region_slices(8)["lower"]
        # Larger D_u shrinks the style term on the upper region.
        small = modulate(Z_a, Z_s, 0.2, 0.5)
        large = modulate(Z_a, Z_s, 0.8, 0.5)
        style_small = (small[:, up] - Z_a[:, up]).norm()
        style_large = (large[:, up] - Z_a[:, up]).norm()
        assert style_small > style_large
        # Larger D_l grows the audio term on the lower region.
        small = modulate(Z_a, Z_s, 0.5, 0.2)
        large = modulate(Z_a, Z_s, 0.5, 0.8)
        audio_small = (small[:, lo] - Z_s[:, lo]).norm()
        audio_large = (large[:, lo] - Z_s[:, lo]).norm()
        assert audio_small < audio_large

    def test_nonpositive_dominance_rejected(self):
        Z = torch.zeros((2, 4))
        with pytest.raises(ValueError):
            modulate(Z, Z, 0.0, 0.5)
        with pytest.raises(ValueError):
            modulate(Z, Z, 0.5, -0.1)


class TestDualCrossAttention:
    def test_single_style_token_rows_identical(self, rng):
        torch.manual_seed(0)
        attn = DualCrossAttention(8, 2).eval()
        hidden = torch.as_tensor(rng.normal(size=(1, 5, 8)).astype(np.float32))
        cond = ConditionBundle(
            audio_tokens=torch.as_tensor(rng.normal(size=(1, 5, 8)).astype(np.float32)),
            style_token=torch.as_tensor(rng.normal(size=(1, 1, 8)).astype(np.float32)),
        )
        with torch.no_grad():
            _, Z_s = attn(hidden, cond)
        assert np.allclose(Z_s[0, 0].numpy(), Z_s[0].numpy(), atol=1e-6)

    def test_attention_weights_sum_to_one(self, rng):
        torch.manual_seed(0)
        attn = DualCrossAttention(8, 2).eval()
        hidden = torch.as_tensor(rng.normal(size=(1, 5, 8)).astype(np.float32))
        audio = torch.as_tensor(rng.normal(size=(1, 5, 8)).astype(np.float32))
        with torch.no_grad():
            _, weights = attn.audio_attn(hidden, audio, audio)
        assert np.allclose(weights.sum(dim=-1).numpy(), 1.0, atol=1e-6)

    def test_token_count_mismatch_rejected(self, rng):
        attn = DualCrossAttention(8, 2)
        hidden = torch.zeros((1, 5, 8))
        cond = ConditionBundle(
            audio_tokens=torch.zeros((1, 4, 8)), style_token=torch.zeros((1, 1, 8))
        )
        with pytest.raises(ValueError):
            attn(hidden, cond)

    def test_multi_token_style_condition_rejected(self):
        with pytest.raises(ValueError):
            ConditionBundle(
                audio_tokens=torch.zeros((1, 4, 8)), style_token=torch.zeros((1, 2, 8))
            )


class TestTrainingAndSampling:
    def test_validation_loss_decreases(self, tiny_diffusion):
        assert tiny_diffusion.val_losses[-1] < tiny_diffusion.val_losses[0]

    def test_telemetry_dominance_in_range(self, tiny_diffusion):
        d = tiny_diffusion.telemetry.d_values()
        assert len(d) > 0
        assert (d > 0.11920).all() and (d < 0.88080).all()

    def test_sampling_deterministic_and_shaped(self, tiny_corpus, tiny_diffusion, tiny_style):
        entry = tiny_corpus.by_split("test")[0]
        audio = tiny_corpus.audio(entry)
        ref = tiny_corpus.sequence(tiny_corpus.by_split("train")[0])
        gen1, tel1 = sample_motion(audio, ref, tiny_diffusion, tiny_style, seed=7)
        gen2, tel2 = sample_motion(audio, ref, tiny_diffusion, tiny_style, seed=7)
        assert np.array_equal(gen1.expression, gen2.expression)
        assert np.array_equal(gen1.pose, gen2.pose)
        assert gen1.num_frames == audio.num_frames
        assert gen1.expression_dim == tiny_corpus.config.expression_dim
        assert gen1.pose_dim == tiny_corpus.config.pose_dim
        d = tel1.d_values()
        assert (d > 0.11920).all() and (d < 0.88080).all()
        gen3, _ = sample_motion(audio, ref, tiny_diffusion, tiny_style, seed=8)
        assert not np.array_equal(gen1.expression, gen3.expression)

    def test_subsampled_chain_rejected(self, tiny_corpus, tiny_diffusion, tiny_style):
        entry = tiny_corpus.by_split("test")[0]
        audio = tiny_corpus.audio(entry)
        ref = tiny_corpus.sequence(tiny_corpus.by_split("train")[0])
        with pytest.raises(ValueError):
            sample_motion(audio, ref, tiny_diffusion, tiny_style, steps=50)
        with pytest.raises(ValueError):
            sample_motion(
                audio, ref, tiny_diffusion, tiny_style,
                steps=tiny_diffusion.config.T_steps + 1,
            )

    def test_no_hscales_variant_records_no_telemetry(self, tiny_corpus, tiny_style):
        from stylemotion import train_diffusion

        from conftest import TINY_DIFFUSION

        cfg = dataclasses.replace(TINY_DIFFUSION, steps=5, use_hscales=False)
        ckpt = train_diffusion(tiny_corpus, tiny_style, cfg)
        assert len(ckpt.telemetry.records) == 0
        entry = tiny_corpus.by_split("test")[0]
        gen, tel = sample_motion(
            tiny_corpus.audio(entry),
            tiny_corpus.sequence(tiny_corpus.by_split("train")[0]),
            ckpt, tiny_style,
        )
        assert len(tel.records) == 0
        assert gen.num_frames == tiny_corpus.config.num_frames

    def test_save_load_roundtrip(self, tiny_diffusion, tiny_corpus, tiny_style, tmp_path):
        save_diffusion(tiny_diffusion, tmp_path / "diff")
        back = load_diffusion(tmp_path / "diff")
        assert back.config == tiny_diffusion.config
        assert np.array_equal(back.channel_mean, tiny_diffusion.channel_mean.astype(np.float32))
        entry = tiny_corpus.by_split("test")[0]
        audio = tiny_corpus.audio(entry)
        ref = tiny_corpus.sequence(tiny_corpus.by_split("train")[0])
        a, _ = sample_motion(audio, ref, tiny_diffusion, tiny_style, seed=3)
        b, _ = sample_motion(audio, ref, back, tiny_style, seed=3)
        assert np.allclose(a.expression, b.expression, atol=1e-5)
