"""Optimizer, schedule, and training-loop contracts."""

import math

import numpy as np
import pytest

from neuroscale import autodiff as ad
from neuroscale import model as M
from neuroscale import train as T
from neuroscale.autodiff import Parameter
from neuroscale.dsp import PatchedSignal
from neuroscale.montage import build_region_map, diverse_montage


def small_params(rng, shapes=((3, 4), (5,))):
    return [Parameter(rng.standard_normal(s), name=f"p{i}") for i, s in enumerate(shapes)]


class TestAdamW:
    def test_decay_only_update(self):
        p = Parameter(np.array([2.0, -3.0]), name="p0")
        p.grad = np.zeros(2)
        st = T.OptimState.for_params([p], weight_decay=0.01)
        adamw_before = p.data.copy()
        T.adamw_step([p], st, lr=0.1)
        np.testing.assert_allclose(p.data, adamw_before * (1 - 0.001), atol=1e-15)

    def test_first_step_is_signed_unit_step(self):
        p = Parameter(np.array([1.0, 1.0]), name="p0")
        p.grad = np.array([0.3, -0.7])
        st = T.OptimState.for_params([p], weight_decay=0.0)
        T.adamw_step([p], st, lr=0.01)
        np.testing.assert_allclose(p.data, [1.0 - 0.01, 1.0 + 0.01], atol=1e-6)

    def test_matches_reference_loop(self):
        rng = np.random.default_rng(0)
        params = small_params(rng)
        st = T.OptimState.for_params(params, weight_decay=0.02)
        # Independently coded reference update.
        ref = {p.name: p.data.copy() for p in params}
        m = {p.name: np.zeros_like(p.data) for p in params}
        v = {p.name: np.zeros_like(p.data) for p in params}
        lr, b1, b2, eps, wd = 3e-3, 0.9, 0.999, 1e-8, 0.02
        for step in range(1, 11):
            grads = {p.name: rng.standard_normal(p.data.shape) for p in params}
            for p in params:
                p.grad = grads[p.name].copy()
            T.adamw_step(params, st, lr)
            for name in ref:
                g = grads[name]
                m[name] = b1 * m[name] + (1 - b1) * g
                v[name] = b2 * v[name] + (1 - b2) * g * g
                mhat = m[name] / (1 - b1 ** step)
                vhat = v[name] / (1 - b2 ** step)
                ref[name] = ref[name] - lr * (mhat / (np.sqrt(vhat) + eps) + wd * ref[name])
        for p in params:
            assert np.abs(p.data - ref[p.name]).max() < 1e-12

    def test_non_finite_gradient_rejected(self):
        p = Parameter(np.array([1.0]), name="p0")
        p.grad = np.array([np.nan])
        st = T.OptimState.for_params([p])
        with pytest.raises(T.NonFiniteGradient):
            T.adamw_step([p], st, lr=0.1)


class TestClipping:
    def test_norm_bounded_after_clip(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            params = small_params(rng)
            for p in params:
                p.grad = rng.standard_normal(p.data.shape) * 10
            T.clip_gradients(params, 1.0)
            assert ad.global_grad_norm(params) <= 1.0 + 1e-9

    def test_small_gradients_untouched(self):
        p = Parameter(np.zeros(4), name="p0")
        p.grad = np.full(4, 0.01)
        T.clip_gradients([p], 1.0)
        np.testing.assert_array_equal(p.grad, np.full(4, 0.01))


class TestCosine:
    def test_endpoints_and_midpoint(self):
        sch = T.Schedule(max_lr=5e-4, min_lr=1e-5, cycle_steps=40)
        assert T.cosine_lr(0, sch) == pytest.approx(5e-4)
        assert T.cosine_lr(40, sch) == pytest.approx(1e-5)
        assert T.cosine_lr(20, sch) == pytest.approx((5e-4 + 1e-5) / 2)

    def test_monotone_non_increasing(self):
        sch = T.Schedule(max_lr=1e-3, min_lr=1e-6, cycle_steps=100)
        values = [T.cosine_lr(s, sch) for s in range(101)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_out_of_cycle_rejected(self):
        sch = T.Schedule(cycle_steps=10)
        with pytest.raises(ValueError):
            T.cosine_lr(11, sch)


class TestCrossEntropy:
    def test_label_smoothing_target(self):
        rng = np.random.default_rng(2)
        logits = ad.Tensor(rng.standard_normal(4), requires_grad=True)
        loss = T.cross_entropy(logits, 1, 4, smoothing=0.1)
        z = logits.data
        logp = z - (np.log(np.exp(z - z.max()).sum()) + z.max())
        target = np.full(4, 0.1 / 4)
        target[1] += 0.9
        assert abs(loss.item() - (-(target * logp).sum())) < 1e-12

    def test_binary_equals_bce_on_logit_difference(self):
        rng = np.random.default_rng(3)
        logits = ad.Tensor(rng.standard_normal(2))
        loss = T.cross_entropy(logits, 1, 2, smoothing=0.0)
        z0, z1 = logits.data
        sigmoid = 1.0 / (1.0 + math.exp(-(z1 - z0)))
        assert abs(loss.item() + math.log(sigmoid)) < 1e-12

    def test_label_out_of_range(self):
        with pytest.raises(T.LabelMismatch):
            T.cross_entropy(ad.Tensor(np.zeros(3)), 3, 3)

    def test_gradient(self):
        rng = np.random.default_rng(4)
        logits = ad.Tensor(rng.standard_normal(5), requires_grad=True)
        err = ad.finite_diff_check(lambda: T.cross_entropy(logits, 2, 5, 0.1), [logits])
        assert err < 1e-6


def tiny_setup(seed=0, C=3, n=6, t=10, count=3):
    rng = np.random.default_rng(seed)
    rm = build_region_map(list(diverse_montage(C)))
    cfg = M.ModelConfig(layers=1, embed_dim=8, kernels=(1, 3), window=3, heads=2,
                        ffn_dim=16, dropout=0.0, patch_len=t, mask_ratio=0.5,
                        max_channels=C, max_segments=n)
    model = M.build_model(cfg, rm, seed=seed)
    data = [PatchedSignal(rng.standard_normal((C, n, t)) * 0.5, patch_len=t)
            for _ in range(count)]
    return model, data


class TestPretrainLoop:
    def test_trace_length_matches_steps(self):
        model, data = tiny_setup()
        res = T.pretrain(model, data, T.PretrainConfig(steps=7, batch_size=2, seed=0))
        assert len(res.loss_trace) == 7

    def test_zero_lr_freezes_everything(self):
        model, data = tiny_setup(seed=1)
        before = [p.data.copy() for p in model.parameters()]
        cfg = T.PretrainConfig(steps=6, batch_size=len(data), max_lr=0.0, min_lr=0.0,
                               weight_decay=0.0, seed=3, dropout=False)
        res = T.pretrain(model, data, cfg)
        for p, b in zip(model.parameters(), before):
            np.testing.assert_array_equal(p.data, b)
        assert all(x == res.loss_trace[0] for x in res.loss_trace)

    def test_seeded_run_bitwise_reproducible(self):
        model1, data1 = tiny_setup(seed=2)
        r1 = T.pretrain(model1, data1, T.PretrainConfig(steps=5, batch_size=2, seed=9))
        model2, data2 = tiny_setup(seed=2)
        r2 = T.pretrain(model2, data2, T.PretrainConfig(steps=5, batch_size=2, seed=9))
        assert r1.loss_trace == r2.loss_trace
        for p1, p2 in zip(model1.parameters(), model2.parameters()):
            np.testing.assert_array_equal(p1.data, p2.data)

    def test_divergence_detected(self):
        model, data = tiny_setup(seed=3)
        cfg = T.PretrainConfig(steps=50, batch_size=2, max_lr=1e12, min_lr=1e12, seed=0)
        with pytest.raises((T.DivergenceDetected, T.NonFiniteGradient)):
            with np.errstate(over="ignore", invalid="ignore"):
                T.pretrain(model, data, cfg)

    def test_loss_decreases_on_tiny_problem(self):
        model, data = tiny_setup(seed=4)
        res = T.pretrain(model, data, T.PretrainConfig(steps=30, batch_size=3,
                                                       max_lr=1e-2, min_lr=1e-3, seed=0))
        assert res.loss_trace[-1] < res.loss_trace[0]


def labeled_dataset(rng, C=3, n=4, t=10, count=12):
    """Two linearly separable pseudo-classes: sign of a planted channel mean."""
    out = []
    for i in range(count):
        label = i % 2
        base = rng.standard_normal((C, n, t)) * 0.2
        base[0] += 1.5 if label else -1.5
        out.append((PatchedSignal(base, patch_len=t), label))
    return out


class TestFinetuneLoop:
    def test_learns_separable_classes(self):
        rng = np.random.default_rng(5)
        model, _ = tiny_setup(seed=5, C=3, n=4)
        data = labeled_dataset(rng)
        cfg = T.FinetuneConfig(epochs=12, batch_size=4, max_lr=3e-3, min_lr=1e-4,
                               seed=0, dropout=False)
        res = T.finetune(model, data[:8], data[8:10], data[10:], "classification",
                         cfg, num_classes=2)
        assert res.report["balanced_accuracy"] == 1.0
        assert len(res.history) == 12
        assert 0 <= res.best_epoch < 12

    def test_regression_converges_on_noiseless_linear_target(self):
        # Target = amplitude of a fixed carrier planted on channel 0; the
        # spectral branch reads it off linearly.
        rng = np.random.default_rng(6)
        model, _ = tiny_setup(seed=6, C=3, n=4)
        tgrid = np.arange(40) / 10.0
        carrier = np.sin(2 * np.pi * 2.0 * tgrid).reshape(4, 10)
        data = []
        for _ in range(60):
            amp = float(rng.uniform(0.2, 1.5))
            x = rng.standard_normal((3, 4, 10)) * 0.05
            x[0] += amp * carrier
            data.append((PatchedSignal(x, patch_len=10), amp))
        cfg = T.FinetuneConfig(epochs=40, batch_size=8, max_lr=5e-3, min_lr=2e-4,
                               weight_decay=1e-4, seed=0, dropout=False)
        res = T.finetune(model, data[:40], data[40:50], data[50:], "regression", cfg)
        assert res.report["rmse"] < 0.1
        assert res.report["r2"] > 0.9

    def test_label_mismatch(self):
        rng = np.random.default_rng(7)
        model, _ = tiny_setup(seed=7, C=3, n=4)
        data = labeled_dataset(rng)
        bad = [(p, 5) for p, _ in data]
        cfg = T.FinetuneConfig(epochs=1, batch_size=4, seed=0)
        with pytest.raises(T.LabelMismatch):
            T.finetune(model, bad[:8], bad[8:10], bad[10:], "classification",
                       cfg, num_classes=2)

    def test_empty_split_rejected(self):
        model, _ = tiny_setup(seed=8, C=3, n=4)
        with pytest.raises(ValueError):
            T.finetune(model, [], [], [], "classification",
                       T.FinetuneConfig(), num_classes=2)
