"""Model tests: gating, steps against scalar oracles, forward, counts."""

import numpy as np
import pytest
from _oracles import step_full_oracle, step_hyperplane_oracle

from vnn import model as M
from vnn.errors import GeometryError, PlacementError, ShapeError


def delta_bank(m, kshape):
    k = np.zeros((m,) + kshape)
    k[(slice(None),) + tuple(e // 2 for e in kshape)] = 1.0
    return M.GreensKernelBank(k)


def frozen_states(shape, value):
    return M.CoddStateField(
        logits=np.zeros(shape),
        frozen_mask=np.ones(shape, bool),
        frozen_values=np.full(shape, float(value)),
    )


def full_cfg(shape, **kw):
    n = int(np.prod(shape))
    d = len(shape)
    coords = np.stack(np.unravel_index(np.arange(n), shape), axis=1)
    args = dict(
        field_shape=shape,
        mode="full",
        M=1,
        k=3,
        steps=1,
        placements=[
            M.Placement("input", coords[:1], "raw-real"),
            M.Placement("output", coords[-1:], "raw-real"),
        ],
    )
    args.update(kw)
    return M.ModelConfig(**args)


class TestGateStates:
    def test_free_logit_zero_is_half(self):
        s = M.CoddStateField.free((3, 3))
        assert np.all(M.gate_states(s) == 0.5)

    def test_frozen_zero_is_exact(self):
        s = frozen_states((2, 2), 0.0)
        out = M.gate_states(s)
        assert np.all(out == 0.0)

    def test_logit_ten(self):
        s = M.CoddStateField.free((1,))
        s.logits[0] = 10.0
        assert np.isclose(M.gate_states(s)[0], 0.9999546021312976, atol=1e-12)

    def test_bounds(self):
        rng = np.random.default_rng(0)
        s = M.CoddStateField(
            logits=rng.normal(size=(5, 5)) * 20,
            frozen_mask=rng.random((5, 5)) < 0.3,
            frozen_values=(rng.random((5, 5)) < 0.5).astype(float),
        )
        g = M.gate_states(s)
        assert np.all(g >= 0.0) and np.all(g <= 1.0)


class TestStepFull:
    def test_pure_passthrough_identity(self):
        rng = np.random.default_rng(1)
        shape = (4, 4)
        c = rng.normal(size=shape)
        params = M.ParameterSet(
            W=np.ones(shape), B=np.zeros(shape), S=frozen_states(shape, 0.0),
            kernels=delta_bank(1, (3, 3)),
        )
        out = M.step_full(c, params, full_cfg(shape))
        assert np.allclose(out, c, atol=1e-15, rtol=0)

    def test_pure_activation_identity_on_nonnegative(self):
        rng = np.random.default_rng(2)
        shape = (3, 5)
        c = np.abs(rng.normal(size=shape))
        params = M.ParameterSet(
            W=np.ones(shape), B=np.zeros(shape), S=frozen_states(shape, 1.0),
            kernels=delta_bank(1, (3, 3)),
        )
        out = M.step_full(c, params, full_cfg(shape, activation="relu"))
        assert np.allclose(out, c, atol=1e-15, rtol=0)

    @pytest.mark.parametrize("padding", ["zero", "circular"])
    @pytest.mark.parametrize("m", [1, 3])
    @pytest.mark.parametrize("kind", ["relu", "tanh", "identity"])
    def test_matches_scalar_oracle(self, padding, m, kind):
        rng = np.random.default_rng(hash((padding, m, kind)) % 2**32)
        shape = (3, 3)
        c = rng.normal(size=shape)
        w = rng.normal(size=shape)
        b = rng.normal(size=shape)
        logits = rng.normal(size=shape)
        s = M.CoddStateField(logits, np.zeros(shape, bool), np.zeros(shape))
        kern = rng.normal(size=(m, 3, 3))
        params = M.ParameterSet(w, b, s, M.GreensKernelBank(kern))
        cfg = full_cfg(shape, M=m, activation=kind, padding=padding)
        out = M.step_full(c, params, cfg)
        gated = 1.0 / (1.0 + np.exp(-logits))
        want = step_full_oracle(c, w, b, gated, kern, kind, padding)
        assert np.allclose(out, want, atol=1e-12, rtol=1e-12)


class TestStepHyperplane:
    def hyper_cfg(self, shape, **kw):
        args = dict(field_shape=shape, mode="hyperplane", M=1, k=3, steps=1,
                    placements=[])
        args.update(kw)
        return M.ModelConfig(**args)

    def test_identity_column(self):
        rng = np.random.default_rng(3)
        h = rng.normal(size=8)
        slab = (8, 1)
        params = M.ParameterSet(
            W=np.ones(slab), B=np.zeros(slab), S=frozen_states(slab, 0.0),
            kernels=delta_bank(1, (3, 1)),
        )
        cfg = self.hyper_cfg((8, 4))
        out = M.step_hyperplane(h, params, cfg)
        assert out.shape == (8,)
        assert np.allclose(out, h, atol=1e-15, rtol=0)

    def test_wide_ones_kernel_spreads_impulse(self):
        # k=17 over an 8-cell column: every window sees the single impulse
        h = np.zeros(8)
        h[2] = 1.0
        slab = (8, 1)
        params = M.ParameterSet(
            W=np.ones(slab), B=np.zeros(slab), S=frozen_states(slab, 0.0),
            kernels=M.GreensKernelBank(np.ones((1, 17, 1))),
        )
        cfg = self.hyper_cfg((8, 4), k=17)
        out = M.step_hyperplane(h, params, cfg)
        assert np.allclose(out, np.ones(8), atol=1e-15, rtol=0)

    @pytest.mark.parametrize("omega", [1, 2])
    @pytest.mark.parametrize("kind", ["relu", "tanh"])
    def test_matches_scalar_oracle(self, omega, kind):
        rng = np.random.default_rng(hash((omega, kind)) % 2**32)
        slab = (8, omega)
        h = rng.normal(size=slab)
        w = rng.normal(size=slab)
        b = rng.normal(size=slab)
        logits = rng.normal(size=slab)
        s = M.CoddStateField(logits, np.zeros(slab, bool), np.zeros(slab))
        kern = rng.normal(size=(2, 3, omega))
        params = M.ParameterSet(w, b, s, M.GreensKernelBank(kern))
        cfg = self.hyper_cfg((8, 6), M=2, omega=omega, activation=kind)
        out = M.step_hyperplane(h, params, cfg)
        gated = 1.0 / (1.0 + np.exp(-logits))
        want = step_hyperplane_oracle(h, w, b, gated, kern, kind)
        assert np.allclose(out, want, atol=1e-12, rtol=1e-12)


class TestRequiredSteps:
    def line_cfg(self, length, k, in_cell, out_cell, **kw):
        args = dict(
            field_shape=(length,), M=1, k=k, steps=max(1, length),
            placements=[
                M.Placement("input", [[in_cell]], "raw-real"),
                M.Placement("output", [[out_cell]], "raw-real"),
            ],
        )
        args.update(kw)
        return M.ModelConfig(**args)

    def test_k3_distance5(self):
        assert M.required_steps(self.line_cfg(6, 3, 0, 5)) == 5

    def test_k13_distance24(self):
        assert M.required_steps(self.line_cfg(25, 13, 0, 24)) == 4

    def test_k1_with_distance_errors(self):
        with pytest.raises(GeometryError):
            M.required_steps(self.line_cfg(6, 1, 0, 5))

    def test_validate_rejects_too_few_steps(self):
        cfg = self.line_cfg(6, 3, 0, 5, steps=2)
        with pytest.raises(GeometryError):
            cfg.validate()

    def test_connectivity_probe_full_layout(self):
        # impulse through all-ones kernels reaches every output in the
        # required number of steps: σ=identity, S=0, W=1
        shape = (9, 9)
        ins = np.stack([np.arange(9), np.zeros(9, int)], axis=1)
        outs = np.stack([np.arange(9), np.full(9, 8)], axis=1)
        cfg = M.ModelConfig(
            field_shape=shape, M=1, k=5, steps=1, activation="identity",
            placements=[
                M.Placement("input", ins, "raw-real"),
                M.Placement("output", outs, "raw-real"),
            ],
        )
        need = M.required_steps(cfg)
        assert need == int(np.ceil(8 / 2))
        cfg.steps = need
        params = M.ParameterSet(
            W=np.ones(shape), B=np.zeros(shape), S=frozen_states(shape, 0.0),
            kernels=M.GreensKernelBank(np.ones((1, 5, 5))),
        )
        m = M.VNNModel(cfg, params)
        for i in range(9):
            x = np.zeros(9)
            x[i] = 1.0
            out = M.forward(m, x)
            assert np.all(out > 0), f"impulse at input {i} missed some output"


class TestForward:
    def test_all_zero_kernels_annihilate(self):
        shape = (6, 6)
        cfg = full_cfg(shape, k=3, steps=3)
        cfg.placements = [
            M.Placement("input", [[0, 0], [1, 0]], "raw-real"),
            M.Placement("output", [[5, 5]], "raw-real"),
        ]
        params = M.ParameterSet(
            W=np.ones(shape), B=np.zeros(shape), S=frozen_states(shape, 0.0),
            kernels=M.GreensKernelBank(np.zeros((1, 3, 3))),
        )
        out = M.forward(M.VNNModel(cfg, params), [3.0, -1.5])
        assert np.array_equal(out, [0.0])

    def test_identity_network(self):
        # delta kernel, S=0, W=1, outputs placed on the input cells
        shape = (5,)
        cells = np.arange(3)[:, None]
        cfg = M.ModelConfig(
            field_shape=shape, M=1, k=3, steps=1, clamp_inputs="once",
            placements=[
                M.Placement("input", cells, "raw-real"),
                M.Placement("output", cells, "raw-real"),
            ],
        )
        params = M.ParameterSet(
            W=np.ones(shape), B=np.zeros(shape), S=frozen_states(shape, 0.0),
            kernels=delta_bank(1, (3,)),
        )
        x = np.array([0.3, -2.0, 1.1])
        out = M.forward(M.VNNModel(cfg, params), x)
        assert np.allclose(out, x, atol=1e-15, rtol=0)

    def test_passthrough_linearity(self):
        rng = np.random.default_rng(5)
        shape = (7, 7)
        cfg = full_cfg(shape, k=5, steps=3)
        cfg.placements = [
            M.Placement("input", [[1, 0], [3, 0], [5, 0]], "raw-real"),
            M.Placement("output", [[3, 6]], "raw-real"),
        ]
        params = M.init_params(cfg, rng)
        params.S = frozen_states(shape, 0.0)
        m = M.VNNModel(cfg, params)
        x, y = rng.normal(size=3), rng.normal(size=3)
        a, b = 1.3, -0.6
        lhs = M.forward(m, a * x + b * y)
        rhs = a * M.forward(m, x) + b * M.forward(m, y)
        assert np.allclose(lhs, rhs, atol=1e-10, rtol=0)

    def test_m_collapse_both_variants(self):
        rng = np.random.default_rng(6)
        shape = (6,)
        cfg = M.ModelConfig(
            field_shape=shape, M=3, k=3, steps=5, activation="tanh",
            placements=[
                M.Placement("input", [[0], [1]], "raw-real"),
                M.Placement("output", [[4], [5]], "raw-real"),
            ],
        )
        base = M.init_params(cfg, rng)
        kern = rng.normal(size=(1, 3))
        base.kernels = M.GreensKernelBank(np.repeat(kern, 3, axis=0))
        single = M.ParameterSet(base.W, base.B, base.S, M.GreensKernelBank(kern))
        cfg1 = M.ModelConfig(**{**cfg.__dict__, "M": 1})
        x = rng.normal(size=(4, 2))
        for avg in (True, False):
            cfg.average_per_step = avg
            cfg1.average_per_step = avg
            got = M.forward_batch(M.VNNModel(cfg, base), x)
            want = M.forward_batch(M.VNNModel(cfg1, single), x)
            assert np.allclose(got, want, atol=1e-15, rtol=0)

    def test_deferred_m1_equals_per_step(self):
        rng = np.random.default_rng(7)
        shape = (6, 6)
        cfg = full_cfg(shape, M=1, k=3, steps=5)
        cfg.placements = [
            M.Placement("input", [[2, 0]], "raw-real"),
            M.Placement("output", [[3, 5]], "raw-real"),
        ]
        params = M.init_params(cfg, rng)
        x = rng.normal(size=(3, 1))
        cfg.average_per_step = True
        a = M.forward_batch(M.VNNModel(cfg, params), x)
        cfg.average_per_step = False
        b = M.forward_batch(M.VNNModel(cfg, params), x)
        assert np.array_equal(a, b)

    def test_deferred_vs_per_step_differ_for_m2(self):
        # sanity: with M>1 and T>1 the two averaging orders are different maps
        rng = np.random.default_rng(8)
        shape = (6,)
        cfg = M.ModelConfig(
            field_shape=shape, M=2, k=3, steps=5, activation="tanh",
            placements=[
                M.Placement("input", [[0]], "raw-real"),
                M.Placement("output", [[5]], "raw-real"),
            ],
        )
        params = M.init_params(cfg, rng)
        params.S = frozen_states(shape, 1.0)
        x = rng.normal(size=(5, 1))
        cfg.average_per_step = True
        a = M.forward_batch(M.VNNModel(cfg, params), x)
        cfg.average_per_step = False
        b = M.forward_batch(M.VNNModel(cfg, params), x)
        assert not np.allclose(a, b, atol=1e-9)

    def test_vector_length_mismatch(self):
        cfg = full_cfg((4, 4), steps=3)
        params = M.init_params(cfg, np.random.default_rng(0))
        with pytest.raises(PlacementError):
            M.forward(M.VNNModel(cfg, params), [1.0, 2.0])


class TestCorrespondence:
    def test_zero_weights_give_activated_biases(self):
        b2 = np.array([0.4, -0.2])
        mlp = M.ReferenceMLP(
            [np.zeros((4, 8)), np.zeros((2, 4))], [np.zeros(4), b2]
        )
        vnn = M.build_correspondence([8, 4, 2], mlp)
        out = M.forward(vnn, np.random.default_rng(9).normal(size=8))
        assert np.allclose(out, np.maximum(b2, 0.0), atol=1e-9)

    def test_random_draws_match_dense_reference(self):
        rng = np.random.default_rng(10)
        worst = 0.0
        for _ in range(10):
            mlp = M.ReferenceMLP.random([8, 4, 2], rng)
            vnn = M.build_correspondence([8, 4, 2], mlp)
            x = rng.normal(size=(10, 8))
            worst = max(worst, np.abs(M.forward_batch(vnn, x) - mlp.forward(x)).max())
        assert worst < 1e-6

    def test_three_layer_chain(self):
        rng = np.random.default_rng(11)
        mlp = M.ReferenceMLP.random([6, 5, 4, 3], rng)
        vnn = M.build_correspondence([6, 5, 4, 3], mlp)
        x = rng.normal(size=(5, 6))
        assert np.abs(M.forward_batch(vnn, x) - mlp.forward(x)).max() < 1e-6

    def test_tanh_activation(self):
        rng = np.random.default_rng(12)
        mlp = M.ReferenceMLP.random([8, 4, 2], rng, activation="tanh")
        vnn = M.build_correspondence([8, 4, 2], mlp)
        x = rng.normal(size=(8, 8))
        assert np.abs(M.forward_batch(vnn, x) - mlp.forward(x)).max() < 1e-6

    def test_field_too_small_rejected(self):
        rng = np.random.default_rng(13)
        mlp = M.ReferenceMLP.random([8, 4, 2], rng)
        with pytest.raises(GeometryError):
            M.build_correspondence([8, 4, 2], mlp, field_shape=(20, 9))

    def test_states_are_fully_frozen(self):
        rng = np.random.default_rng(14)
        mlp = M.ReferenceMLP.random([8, 4, 2], rng)
        vnn = M.build_correspondence([8, 4, 2], mlp)
        assert vnn.params.S.frozen_mask.all()
        gated = M.gate_states(vnn.params.S)
        assert set(np.unique(gated)) <= {0.0, 1.0}


class TestParamCount:
    def test_mnist_scale_mlp(self):
        rng = np.random.default_rng(15)
        mlp = M.ReferenceMLP.random([784, 256, 128, 32, 10], rng)
        assert M.param_count(mlp) == 238314

    def test_tiny_mlp(self):
        rng = np.random.default_rng(16)
        mlp = M.ReferenceMLP.random([8, 4, 2], rng)
        assert M.param_count(mlp) == 46

    def test_single_cell_full_model(self):
        cfg = M.ModelConfig(
            field_shape=(1,), M=1, k=3, steps=1,
            placements=[
                M.Placement("input", [[0]], "raw-real"),
                M.Placement("output", [[0]], "raw-real"),
            ],
        )
        params = M.init_params(cfg, np.random.default_rng(17))
        assert M.param_count(params) == 6  # W + B + S + 3 kernel taps

    def test_frozen_states_excluded(self):
        shape = (4, 4)
        params = M.ParameterSet(
            W=np.ones(shape), B=np.zeros(shape), S=frozen_states(shape, 0.0),
            kernels=delta_bank(2, (3, 3)),
        )
        assert M.param_count(params) == 16 + 16 + 0 + 18
