"""Optimizer, schedule, loss heads, metrics, and training-loop contracts."""

import numpy as np
import pytest

from vnn import data as vdata
from vnn import tasks
from vnn import train as vt
from vnn.errors import NumericOverflowError
from vnn.model import GreensKernelBank, ReferenceMLP, VNNModel, init_params


def tiny_task(width=2, seed=3):
    cfg = tasks.xor_tape_model(width=width)
    full = vdata.gen_bit_dataset(vdata.BitTaskSpec(op="XOR", bit_width=width), seed)
    train, test = vdata.split_dataset(full, 0.25, seed + 1)
    model = tasks.build_model(cfg, seed=seed, task="xor-tape")
    return model, train, test


class TestLossHeads:
    def test_softmax_uniform(self):
        assert np.isclose(vt.softmax_xent(np.zeros(10), 0), np.log(10), atol=1e-12)

    def test_softmax_saturated(self):
        assert vt.softmax_xent(np.array([30.0, -30.0]), 0) < 1e-12

    def test_softmax_value(self):
        assert np.isclose(
            vt.softmax_xent(np.array([1.0, 2.0, 3.0]), 2), 0.40760596444438, atol=1e-11
        )

    def test_softmax_label_range(self):
        with pytest.raises(ValueError):
            vt.softmax_xent(np.zeros(3), 3)

    def test_bce_zero_outputs(self):
        assert np.isclose(
            vt.bitwise_bce(np.zeros(5), np.array([0, 1, 0, 1, 1.0])), np.log(2),
            atol=1e-12,
        )

    def test_bce_saturated_correct(self):
        assert vt.bitwise_bce(np.array([30.0]), np.array([1.0])) < 1e-12

    def test_bce_value(self):
        assert np.isclose(
            vt.bitwise_bce(np.array([1.0, -1.0]), np.array([1.0, 0.0])),
            0.31326168751822, atol=1e-11,
        )

    def test_bce_length_mismatch(self):
        with pytest.raises(ValueError):
            vt.bitwise_bce(np.zeros(3), np.zeros(4))


class TestCosine:
    def cfg(self, **kw):
        return vt.TrainConfig(**kw)

    def test_start_is_initial_rate(self):
        assert vt.cosine_lr(0, 100, self.cfg()) == 1e-3

    def test_end_hits_floor(self):
        assert np.isclose(vt.cosine_lr(100, 100, self.cfg()), 0.0, atol=1e-19)

    def test_midpoint(self):
        assert np.isclose(vt.cosine_lr(50, 100, self.cfg()), 5e-4, atol=1e-12)

    def test_monotone_nonincreasing(self):
        cfg = self.cfg(lr_floor=1e-5)
        vals = [vt.cosine_lr(t, 200, cfg) for t in range(201)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_zero_total_rejected(self):
        with pytest.raises(ValueError):
            vt.cosine_lr(0, 0, self.cfg())


class TestAdamW:
    def test_first_step_magnitude(self):
        cfg = vt.TrainConfig(weight_decay=0.0)
        params = {"w": np.array([0.0])}
        grads = {"w": np.array([1.0])}
        state = vt.OptimizerState.zeros_like(params)
        vt.adamw_step(params, grads, state, 1e-3, cfg)
        assert np.isclose(params["w"][0], -1e-3 / (1 + 1e-8), atol=1e-12)

    def test_zero_grad_zero_decay_is_identity(self):
        cfg = vt.TrainConfig(weight_decay=0.0)
        params = {"w": np.array([1.5, -2.0])}
        state = vt.OptimizerState.zeros_like(params)
        vt.adamw_step(params, {"w": np.zeros(2)}, state, 1e-3, cfg)
        assert np.array_equal(params["w"], [1.5, -2.0])

    def test_decay_only_step(self):
        cfg = vt.TrainConfig(weight_decay=0.1)
        params = {"w": np.array([2.0])}
        state = vt.OptimizerState.zeros_like(params)
        vt.adamw_step(params, {"w": np.zeros(1)}, state, 1e-3, cfg)
        assert np.isclose(params["w"][0], 2.0 * (1 - 1e-4), atol=1e-15)

    def test_state_logits_never_decay(self):
        cfg = vt.TrainConfig(weight_decay=0.5)
        params = {"S_logits": np.array([3.0]), "W": np.array([3.0])}
        state = vt.OptimizerState.zeros_like(params)
        vt.adamw_step(params, {k: np.zeros(1) for k in params}, state, 1e-2, cfg)
        assert params["S_logits"][0] == 3.0
        assert params["W"][0] < 3.0

    def test_nonfinite_grad_rejected(self):
        cfg = vt.TrainConfig()
        params = {"w": np.zeros(1)}
        state = vt.OptimizerState.zeros_like(params)
        with pytest.raises(NumericOverflowError):
            vt.adamw_step(params, {"w": np.array([np.nan])}, state, 1e-3, cfg)


class TestEvaluate:
    def test_perfect_bit_predictor(self):
        model, train, _ = tiny_task()
        ds = vdata.Dataset(X=train.X[:8], Y=train.Y[:8], kind="bits")
        outs = np.where(ds.Y > 0.5, 10.0, -10.0)

        class Fake:
            pass

        import vnn.train as t

        class _Stub(ReferenceMLP):
            def forward(self, x):
                return outs
        stub = _Stub([np.zeros((1, 1))], [np.zeros(1)])
        m = vt.evaluate(stub, ds)
        assert m.per_bit == 100.0 and m.exact_match == 100.0

    def test_constant_zero_bits_vs_random_targets(self):
        rng = np.random.default_rng(0)
        n = 4096
        ds = vdata.Dataset(
            X=np.zeros((n, 1)), Y=(rng.random((n, 8)) < 0.5).astype(float),
            kind="bits")

        class _Zero(ReferenceMLP):
            def forward(self, x):
                return np.zeros((len(x), 8))
        m = vt.evaluate(_Zero([np.zeros((1, 1))], [np.zeros(1)]), ds)
        assert abs(m.per_bit - 50.0) < 2.5
        assert abs(m.exact_match - 100 / 256) < 0.35

    def test_chance_level_classifier(self):
        rng = np.random.default_rng(1)
        n = 4000
        ds = vdata.Dataset(
            X=rng.normal(size=(n, 4)), Y=rng.integers(0, 10, n), kind="classes")

        class _Rand(ReferenceMLP):
            def forward(self, x):
                return np.random.default_rng(2).normal(size=(len(x), 10))
        m = vt.evaluate(_Rand([np.zeros((1, 1))], [np.zeros(1)]), ds)
        assert abs(m.accuracy - 10.0) < 2.5

    def test_pure(self):
        model, train, _ = tiny_task()
        m1 = vt.evaluate(model, train)
        m2 = vt.evaluate(model, train)
        assert m1 == m2


class TestTrainLoop:
    def test_lr_zero_freezes_parameters(self):
        model, train, _ = tiny_task()
        before = {k: v.copy() for k, v in
                  __import__("vnn.model", fromlist=["params_to_dict"])
                  .params_to_dict(model).items()}
        tc = vt.TrainConfig(epochs=1, batch_size=16, learning_rate_init=0.0,
                            weight_decay=0.0, seed=1)
        model, hist, _ = vt.train_loop(model, train, tc)
        after = __import__("vnn.model", fromlist=["params_to_dict"]).params_to_dict(model)
        for k in before:
            assert np.array_equal(before[k], after[k]), k

    def test_same_seed_bit_identical_history(self):
        tc = vt.TrainConfig(epochs=3, batch_size=16, seed=11)
        runs = []
        for _ in range(2):
            model, train, _ = tiny_task()
            _, hist, _ = vt.train_loop(model, train, tc)
            runs.append([(h.loss, h.per_bit, h.exact_match) for h in hist])
        assert runs[0] == runs[1]

    def test_divergence_aborts_with_last_good(self):
        model, train, _ = tiny_task()
        # absurd learning rate forces overflow within a few steps
        tc = vt.TrainConfig(epochs=50, batch_size=16, learning_rate_init=1e18,
                            weight_decay=0.0, seed=1)
        model, hist, _ = vt.train_loop(model, train, tc)
        from vnn.model import params_to_dict
        for arr in params_to_dict(model).values():
            assert np.all(np.isfinite(arr))

    def test_frozen_cells_never_change(self):
        model, train, _ = tiny_task()
        s = model.params.S
        s.frozen_mask[:5] = True
        s.frozen_values[:5] = 1.0
        tc = vt.TrainConfig(epochs=2, batch_size=16, seed=2)
        model, _, _ = vt.train_loop(model, train, tc)
        gated = model.params.S.gated()
        assert np.array_equal(gated[:5], np.ones(5))

    def test_mlp_trainer_learns_blobs(self):
        rng = np.random.default_rng(4)
        n = 600
        centers = np.array([[2.0, 0.0], [-2.0, 0.0], [0.0, 2.5]])
        labels = rng.integers(0, 3, n)
        X = centers[labels] + rng.normal(size=(n, 2)) * 0.5
        ds = vdata.Dataset(X=X, Y=labels, kind="classes")
        mlp = ReferenceMLP.random([2, 16, 3], rng, final_activation=False)
        tc = vt.TrainConfig(epochs=40, batch_size=32, seed=4,
                            learning_rate_init=5e-3, weight_decay=1e-4)
        mlp, hist = vt.train_mlp(mlp, ds, tc)
        m = vt.evaluate(mlp, ds)
        assert m.accuracy > 90.0
