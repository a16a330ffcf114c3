import numpy as np
import pytest

from sdtl import tensor as T
from sdtl.config import tiny_config
from sdtl.data import InMemoryPairs
from sdtl.errors import ConfigError, InputError
from sdtl.optim import Adam
from sdtl.pipeline import (
    ABLATION_GROUPS, SdtlModel, build_condition, compute_losses, diffusion_target, enhance,
    load_model, reconstruct, save_model, subsystem_rngs, to_model_range, train_loop, train_step,
)
from sdtl.wavelet import dwt2_level2

from conftest import make_pairs


def batch(pairs, idx=(0,), size=32):
    lows = np.stack([pairs[i][0].to_chw()[:, :size, :size] for i in idx])
    highs = np.stack([pairs[i][1].to_chw()[:, :size, :size] for i in idx])
    return lows, highs


class TestCondition:
    def test_shapes(self, micro_cfg, rng):
        m = SdtlModel(micro_cfg, rng)
        c = build_condition(T.zeros((2, 3, 32, 32)), m)
        assert c.cond.shape == (2, 3, 8, 8)
        assert c.enh1[0].shape == (2, 4, 16, 16) and c.enh2[0].shape == (2, 4, 8, 8)
        assert c.smaps.s2.shape == (2, 4, 8, 8)

    def test_size_error(self, micro_cfg, rng):
        with pytest.raises(ConfigError):
            build_condition(T.zeros((1, 3, 30, 32)), SdtlModel(micro_cfg, rng))

    def test_deterministic(self, micro_cfg, rng):
        m = SdtlModel(micro_cfg, rng)
        x = T.tensor(rng.uniform(-1, 1, (1, 3, 16, 16)))
        np.testing.assert_array_equal(build_condition(x, m).cond.data, build_condition(x, m).cond.data)


class TestTarget:
    def test_constant(self):
        np.testing.assert_allclose(diffusion_target(np.full((3, 16, 16), 0.3)).data, 0.3, rtol=1e-6)

    def test_shape_paper(self):
        assert diffusion_target(np.zeros((3, 256, 256))).shape == (3, 64, 64)

    def test_round_trip_with_true_highs(self, rng):
        x = rng.uniform(-1, 1, (1, 3, 16, 16))
        with T.precision("float64"):
            l1, l2 = dwt2_level2(T.tensor(x))
            back = reconstruct(diffusion_target(x), l2.highs, l1.highs).data
        assert np.max(np.abs(back - x)) < 1e-6


class TestLosses:
    def test_zero_predictor_baselines(self, micro_cfg, pairs):
        m = SdtlModel(micro_cfg, np.random.default_rng(0))
        for head in list(m.head1) + list(m.head2):
            head.weight.data[...] = 0.0
        lo, hi = batch(pairs, (0, 1, 2, 3))
        eps = np.random.default_rng(1).standard_normal((4, 3, 8, 8)).astype(np.float32)
        l_diff, l_hf = compute_losses(m, to_model_range(lo), to_model_range(hi), np.random.default_rng(1), eps=eps)
        assert l_diff.item() == pytest.approx(float(np.mean(eps.astype(np.float64) ** 2)), rel=1e-5)
        assert abs(l_diff.item() - 1.0) < 0.15
        l1, l2 = dwt2_level2(to_model_range(hi))
        expected = np.mean([np.mean(np.abs(b.data)) for b in l1.highs + l2.highs])
        assert l_hf.item() == pytest.approx(expected, rel=1e-5)

    def test_low_light_ll_never_read(self, micro_cfg, pairs, rng):
        m = SdtlModel(micro_cfg, np.random.default_rng(0))
        lo, hi = batch(pairs)
        x_low = to_model_range(lo)
        l1, l2 = dwt2_level2(x_low)
        t, eps = np.array([57]), rng.standard_normal((1, 3, 8, 8)).astype(np.float32)

        def losses(bands):
            d, h = compute_losses(m, x_low, to_model_range(hi), None, bands=bands, t=t, eps=eps)
            return d.item(), h.item()

        base = losses((l1, l2))
        junk = lambda b: T.tensor(rng.standard_normal(b.shape).astype(np.float32) * 5)
        assert losses((l1.replace(ll=junk(l1.ll)), l2.replace(ll=junk(l2.ll)))) == base
        assert losses((l1, l2.replace(hl=junk(l2.hl)))) != base

    def test_gradients_reach_every_group(self, micro_cfg, pairs):
        m = SdtlModel(micro_cfg, np.random.default_rng(0))
        w = m.denoiser.head.weight
        w.data[...] = 0.1 * np.random.default_rng(1).standard_normal(w.shape)  # leave the zero-init point
        lo, hi = batch(pairs, (0, 1))
        d, h = compute_losses(m, to_model_range(lo), to_model_range(hi), np.random.default_rng(2))
        (d + h).backward()
        for prefix in ("structure.", "sem1.enhance.", "sem2.fusion.", "denoiser.", "head1.", "head2.",
                       "compress.", "stem1."):
            grads = [p.grad for n, p in m.named_parameters() if n.startswith(prefix)]
            assert grads and all(g is not None and np.any(g) for g in grads), prefix

    def test_loss_decreases_on_repeated_pair(self, pairs):
        cfg = tiny_config()
        m = SdtlModel(cfg, np.random.default_rng(0))
        opt = Adam(m.parameters(), lr=cfg.lr)
        lo, hi = batch(pairs, size=64)
        r = np.random.default_rng(3)
        losses = [train_step(m, opt, lo, hi, r)["loss"] for _ in range(50)]
        ma = np.convolve(losses, np.ones(10) / 10, mode="valid")
        assert ma[-1] < ma[0]
        assert np.polyfit(np.arange(len(ma)), ma, 1)[0] < 0


class TestEnhance:
    def test_shape_range_determinism(self, micro_cfg, pairs):
        m = SdtlModel(micro_cfg, np.random.default_rng(0))
        x = pairs[0][0].to_chw()[:, :32, :32]
        a = enhance(m, x, 5, np.random.default_rng(4))
        b = enhance(m, x, 5, np.random.default_rng(4))
        assert a.shape == x.shape
        np.testing.assert_array_equal(a, b)
        assert a.min() >= 0 and a.max() <= 1

    def test_oracle_reconstruction(self, micro_cfg, pairs):
        m = SdtlModel(micro_cfg, np.random.default_rng(0))
        low, high = pairs[1]
        with T.precision("float64"):
            x_high = to_model_range(high.to_chw(np.float64)[None])
            g1, g2 = dwt2_level2(x_high)
            out = enhance(m, low.to_chw(np.float64), sampler=lambda c, s: diffusion_target(x_high).data,
                          highs=lambda level, enh: (g1 if level == 1 else g2).highs)
        assert np.max(np.abs(out - high.to_chw(np.float64))) < 1e-5

    def test_steps_above_T(self, micro_cfg, rng):
        with pytest.raises(ConfigError):
            enhance(SdtlModel(micro_cfg, rng), np.zeros((3, 32, 32)), 300)

    def test_size_not_multiple(self, micro_cfg, rng):
        with pytest.raises(ConfigError):
            enhance(SdtlModel(micro_cfg, rng), np.zeros((3, 40, 32)), 2)


class TestTrainLoop:
    def test_lr_trace_120_epochs(self, micro_cfg):
        cfg = micro_cfg.replace(epochs=120, step_size=50, gamma=0.9, lr=5e-4, T=20, ddim_steps=2)
        m = SdtlModel(cfg, np.random.default_rng(0))
        one = make_pairs(1, size=32)
        lrs = [r["lr"] for r in train_loop(m, one, cfg).history]
        assert lrs[:50] == [5e-4] * 50
        assert lrs[50:100] == pytest.approx([4.5e-4] * 50, rel=1e-12)
        assert lrs[100:] == pytest.approx([4.05e-4] * 20, rel=1e-12)

    def test_one_step_per_epoch_at_batch_8(self, micro_cfg):
        cfg = micro_cfg.replace(batch=8, epochs=1)
        data = make_pairs(8, size=32)
        res = train_loop(SdtlModel(cfg, np.random.default_rng(0)), data, cfg)
        assert res.steps == 1 and res.history[0]["steps"] == 1

    def test_partial_final_batch(self, micro_cfg):
        cfg = micro_cfg.replace(batch=2, epochs=1)
        res = train_loop(SdtlModel(cfg, np.random.default_rng(0)), make_pairs(3, size=32), cfg)
        assert res.steps == 2

    def test_empty_dataset(self, micro_cfg, rng):
        with pytest.raises(InputError):
            train_loop(SdtlModel(micro_cfg, rng), InMemoryPairs(), micro_cfg)

    def test_checkpoints_and_heldout(self, micro_cfg, tmp_path):
        cfg = micro_cfg.replace(epochs=3, ckpt_every=2, ddim_steps=2)
        data = make_pairs(2, size=32)
        res = train_loop(SdtlModel(cfg, np.random.default_rng(0)), data, cfg, out_dir=tmp_path,
                         held_out=data[0])
        assert [p.name for p in res.checkpoints] == ["epoch_0002.sdtl", "epoch_0003.sdtl"]
        assert "psnr" in res.history[1] and "psnr" not in res.history[0]

    def test_reload_reproduces_next_step(self, micro_cfg, tmp_path):
        cfg = micro_cfg.replace(epochs=1)
        data = make_pairs(2, size=32)
        rngs = subsystem_rngs(cfg.seed)
        m = SdtlModel(cfg, rngs[0])
        train_loop(m, data, cfg, rngs=rngs)
        save_model(tmp_path / "m.sdtl", m)
        m2 = load_model(tmp_path / "m.sdtl")
        lo, hi = batch(data, (0, 1))
        step = lambda model: compute_losses(model, to_model_range(lo), to_model_range(hi),
                                            np.random.default_rng(9))
        a, b = step(m), step(m2)
        assert a[0].item() == b[0].item() and a[1].item() == b[1].item()

    def test_seeded_runs_identical(self, micro_cfg):
        cfg = micro_cfg.replace(epochs=2)
        data = make_pairs(2, size=32)
        runs = []
        for _ in range(2):
            rngs = subsystem_rngs(cfg.seed)
            runs.append(train_loop(SdtlModel(cfg, rngs[0]), data, cfg, rngs=rngs).history[-1]["loss"])
        assert runs[0] == runs[1]


@pytest.mark.parametrize("flag", sorted(ABLATION_GROUPS))
def test_ablation_removes_exactly_its_group(micro_cfg, flag):
    full = dict(SdtlModel(micro_cfg, np.random.default_rng(0)).named_parameters())
    abl = dict(SdtlModel(micro_cfg.replace(**{flag: True}), np.random.default_rng(0)).named_parameters())
    group = {n for n in full if ABLATION_GROUPS[flag](n)}
    assert group
    assert set(abl) == set(full) - group
