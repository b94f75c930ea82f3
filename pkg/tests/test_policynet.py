import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from acer_lab.errors import ConfigurationError, InvalidMaskError, NumericError
from acer_lab.policynet import (
    AdamState,
    Architecture,
    NetworkParams,
    adam_step,
    backward,
    forward_batch,
    forward_master,
    forward_summary,
    init_params,
    kl_and_grad,
    masked_softmax,
    soft_update_average,
)

from conftest import central_difference, max_rel_err, random_tiny


def zero_params(arch):
    return NetworkParams(arch, {k: np.zeros(s) for k, s in arch.block_shapes().items()})


class TestMaskedSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(masked_softmax(np.zeros(4), np.ones(4, bool)), [0.25] * 4)

    def test_no_overflow(self):
        p = masked_softmax(np.array([1000.0, 0.0]), np.ones(2, bool))
        assert p[0] == 1.0 and 0.0 <= p[1] < 1e-300 and np.isfinite(p).all()

    def test_renormalised_hand_value(self):
        p = masked_softmax(np.array([1.0, 2.0, 3.0]), np.array([True, False, True]))
        e2 = math.exp(2)
        np.testing.assert_allclose(p, [1 / (1 + e2), 0.0, e2 / (1 + e2)], rtol=1e-14)

    def test_all_masked(self):
        with pytest.raises(InvalidMaskError):
            masked_softmax(np.zeros(3), np.zeros(3, bool))

    def test_nan(self):
        with pytest.raises(NumericError):
            masked_softmax(np.array([np.nan, 0.0]), np.ones(2, bool))

    @given(
        arrays(np.float64, 7, elements=st.floats(-500, 500)),
        arrays(bool, 7).filter(lambda m: m.any()),
    )
    def test_valid_distribution(self, logits, mask):
        p = masked_softmax(logits, mask)
        assert (p[~mask] == 0).all()
        assert (p >= 0).all() and (p <= 1).all()
        assert abs(p.sum() - 1) < 1e-12


class TestForward:
    def test_zero_weights_uniform(self):
        arch = Architecture(input_dim=5, n_summary=15)
        out = forward_summary(zero_params(arch), np.ones(5), np.ones(15, bool))
        np.testing.assert_allclose(out.pi, np.full(15, 1 / 15))

    def test_single_valid_action(self):
        arch = Architecture(input_dim=5, n_summary=15)
        params = zero_params(arch)
        params.blocks["q_b"][:] = np.arange(15.0)
        mask = np.zeros(15, bool)
        mask[6] = True
        out = forward_summary(params, np.ones(5), mask)
        assert out.pi[6] == 1.0 and out.pi.sum() == 1.0
        assert out.v == 6.0

    @pytest.mark.parametrize("seed", range(5))
    def test_value_identity(self, seed):
        rng = np.random.default_rng(seed)
        arch = Architecture(input_dim=12, n_summary=15)
        params = init_params(arch, rng)
        mask = rng.random(15) < 0.6
        mask[0] = True
        out = forward_summary(params, rng.normal(size=12), mask)
        assert abs(out.v - sum(p * q for p, q in zip(out.pi, out.q))) < 1e-12

    def test_dimension_mismatch(self):
        arch = Architecture(input_dim=5, n_summary=15)
        with pytest.raises(ConfigurationError):
            forward_summary(zero_params(arch), np.ones(6), np.ones(15, bool))
        with pytest.raises(InvalidMaskError):
            forward_summary(zero_params(arch), np.ones(5), np.zeros(15, bool))

    def test_deterministic(self):
        arch = Architecture(input_dim=5, n_summary=15)
        params = init_params(arch, np.random.default_rng(0))
        a = forward_summary(params, np.ones(5), np.ones(15, bool))
        b = forward_summary(params, np.ones(5), np.ones(15, bool))
        assert np.array_equal(a.pi, b.pi) and np.array_equal(a.q, b.q)


class TestMasterComposition:
    arch = Architecture(input_dim=10, n_summary=15, n_inform=4, payload_bits=8)

    def test_layout_size(self):
        assert self.arch.n_actions == 1035 == 4 * 256 + 11

    @pytest.mark.parametrize("seed", range(3))
    def test_sums_to_one(self, seed):
        rng = np.random.default_rng(seed)
        out = forward_master(init_params(self.arch, rng), rng.normal(size=10), np.ones(1035, bool))
        assert abs(out.pi.sum() - 1) < 1e-9

    def test_uniform_payload(self):
        rng = np.random.default_rng(1)
        params = init_params(self.arch, rng)
        params.blocks["pp_w"][:] = 0
        params.blocks["pp_b"][:] = 0
        belief = rng.normal(size=10)
        out = forward_master(params, belief, np.ones(1035, bool))
        cache = forward_batch(params, belief, np.ones(1035, bool))
        h2 = cache.h2[0]
        pi_s = masked_softmax(params["pi_w"] @ h2 + params["pi_b"], np.ones(15, bool))
        for kind in range(4):
            block = out.pi[11 + 256 * kind : 11 + 256 * (kind + 1)]
            np.testing.assert_allclose(block, pi_s[11 + kind] / 256, rtol=1e-12)
        np.testing.assert_allclose(out.pi[:11], pi_s[:11], rtol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_q_recomposes(self, seed):
        rng = np.random.default_rng(seed)
        params = init_params(self.arch, rng)
        belief = rng.normal(size=10)
        out = forward_master(params, belief, np.ones(1035, bool))
        # independent recomposition from the raw heads
        h1 = np.maximum(params["w1"] @ belief + params["b1"], 0)
        h2 = np.maximum(params["w2"] @ h1 + params["b2"], 0)
        qs = params["q_w"] @ h2 + params["q_b"]
        qp = params["pq_w"] @ h2 + params["pq_b"]
        for idx in rng.integers(0, 1035, size=50):
            if idx < 11:
                expected = qs[idx]
            else:
                kind, payload = divmod(idx - 11, 256)
                expected = qs[11 + kind] + qp[payload]
            assert abs(out.q[idx] - expected) < 1e-12

    def test_masked_renormalises(self):
        rng = np.random.default_rng(3)
        params = init_params(self.arch, rng)
        mask = np.ones(1035, bool)
        mask[11 + 256 : 11 + 512] = False
        mask[:5] = False
        out = forward_master(params, rng.normal(size=10), mask)
        assert (out.pi[~mask] == 0).all()
        assert abs(out.pi.sum() - 1) < 1e-9


class TestBackward:
    def test_zero_upstream(self, tiny_arch):
        params = random_tiny(tiny_arch, 0)
        g = backward(params, np.ones(4), np.ones(3, bool), np.zeros(3), np.zeros(3))
        assert all((v == 0).all() for v in g.blocks.values())

    @pytest.mark.parametrize("seed", range(4))
    def test_finite_differences_summary(self, tiny_arch, seed):
        rng = np.random.default_rng(seed)
        params = random_tiny(tiny_arch, seed)
        x = rng.normal(size=4)
        mask = np.array([True, rng.random() < 0.5, True])
        u = rng.normal(size=3)
        uq = rng.normal(size=3)

        def objective(p):
            c = forward_batch(p, x, mask)
            lp = np.where(mask, c.logpi[0], 0.0)
            return float(u @ lp + uq @ c.q[0])

        analytic = backward(params, x, mask, u, uq).flat()
        numeric = central_difference(objective, params)
        assert max_rel_err(analytic, numeric) < 1e-4

    @pytest.mark.parametrize("seed", range(4))
    def test_finite_differences_master(self, tiny_master_arch, seed):
        rng = np.random.default_rng(100 + seed)
        params = random_tiny(tiny_master_arch, seed)
        n = tiny_master_arch.n_actions
        x = rng.normal(size=4)
        mask = rng.random(n) < 0.7
        mask[0] = True
        u = rng.normal(size=n)
        uq = rng.normal(size=n)

        def objective(p):
            c = forward_batch(p, x, mask)
            lp = np.where(mask, c.logpi[0], 0.0)
            return float(u @ lp + uq @ c.q[0])

        analytic = backward(params, x, mask, u, uq).flat()
        numeric = central_difference(objective, params)
        assert max_rel_err(analytic, numeric) < 1e-4

    def test_softmax_jacobian(self, tiny_arch):
        # with identity-like trunk, d/dlogits sum_a log pi(a) = 1 - n*pi
        params = random_tiny(tiny_arch, 7)
        x = np.random.default_rng(7).normal(size=4)
        mask = np.ones(3, bool)
        g = backward(params, x, mask, np.ones(3), np.zeros(3))
        out = forward_summary(params, x, mask)
        expected_dlogits = 1.0 - 3 * out.pi
        np.testing.assert_allclose(g["pi_b"], expected_dlogits, atol=1e-14)

    def test_shape_mismatch(self, tiny_arch):
        with pytest.raises(ConfigurationError):
            backward(random_tiny(tiny_arch, 0), np.ones(4), np.ones(3, bool), np.zeros(4), np.zeros(3))


class TestAdam:
    def test_zero_gradient(self, tiny_arch):
        params = random_tiny(tiny_arch, 0)
        new, state = adam_step(params, params.zeros_like(), AdamState.fresh(params), 0.001)
        assert np.array_equal(new.flat(), params.flat())
        assert state.t == 1

    def test_first_step_magnitude(self):
        arch = Architecture(input_dim=1, n_summary=1, n_inform=0, h1=1, h2=1)
        params = zero_params(arch)
        grads = params.zeros_like()
        grads.blocks["w1"][:] = 3.7
        new, _ = adam_step(params, grads, AdamState.fresh(params), 0.001)
        # m_hat / sqrt(v_hat) = g/|g| = 1, so the step is lr * 1/(1 + eps/|g|)
        assert abs(new["w1"][0, 0] + 0.001 / (1 + 1e-8 / 3.7)) < 1e-15

    def test_blockwise_matches_flat(self, tiny_arch):
        # two steps applied blockwise agree with the same recurrence on the flattened vector
        rng = np.random.default_rng(4)
        params = random_tiny(tiny_arch, 4)
        grads = [rng.normal(size=params.flat().size) for _ in range(2)]
        p, s = params, AdamState.fresh(params)
        for g in grads:
            p, s = adam_step(p, params.with_flat(g), s, 0.01)
        x, m, v = params.flat(), 0.0, 0.0
        for t, g in enumerate(grads, start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x = x - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(p.flat(), x, rtol=0, atol=1e-15)
        assert s.t == 2

    def test_non_finite(self, tiny_arch):
        params = random_tiny(tiny_arch, 0)
        g = params.zeros_like()
        g.blocks["b1"][0] = np.inf
        with pytest.raises(NumericError):
            adam_step(params, g, AdamState.fresh(params), 0.01)


class TestAverage:
    def test_extremes(self, tiny_arch):
        a, c = random_tiny(tiny_arch, 1), random_tiny(tiny_arch, 2)
        assert np.array_equal(soft_update_average(a, c, 1.0).flat(), a.flat())
        out = soft_update_average(a, c, 0.0)
        for name in ("w1", "b2", "pi_w", "pi_b"):
            assert np.array_equal(out[name], c[name])
        # critic blocks are not averaged
        assert np.array_equal(out["q_w"], a["q_w"])

    def test_beta_099(self):
        arch = Architecture(input_dim=1, n_summary=1, n_inform=0, h1=1, h2=1)
        avg, cur = zero_params(arch), zero_params(arch)
        avg.blocks["w1"][:] = 1.0
        assert soft_update_average(avg, cur, 0.99)["w1"][0, 0] == pytest.approx(0.99, abs=1e-15)

    def test_out_of_range(self, tiny_arch):
        with pytest.raises(ConfigurationError):
            soft_update_average(random_tiny(tiny_arch, 1), random_tiny(tiny_arch, 1), 1.5)

    @settings(max_examples=30)
    @given(st.floats(0, 1))
    def test_contraction(self, beta):
        arch = Architecture(input_dim=4, n_summary=3, n_inform=1, h1=3, h2=3)
        a, c = random_tiny(arch, 1), random_tiny(arch, 2)
        out = soft_update_average(a, c, beta)
        for name in ("w1", "pi_b"):
            np.testing.assert_allclose(np.abs(out[name] - c[name]), beta * np.abs(a[name] - c[name]), atol=1e-14)


class TestKL:
    def test_identical(self, tiny_arch):
        p = random_tiny(tiny_arch, 3)
        x = np.random.default_rng(0).normal(size=(5, 4))
        kl, g = kl_and_grad(p, p, x, np.ones((5, 3), bool))
        assert abs(kl) < 1e-15
        assert np.abs(g.flat()).max() < 1e-15

    def test_two_action_value(self):
        arch = Architecture(input_dim=1, n_summary=2, n_inform=0, h1=1, h2=1)
        avg, cur = zero_params(arch), zero_params(arch)
        cur.blocks["pi_b"][:] = [math.log(0.9), math.log(0.1)]
        kl, _ = kl_and_grad(avg, cur, np.ones((1, 1)), np.ones((1, 2), bool))
        expected = 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1)
        assert kl == pytest.approx(expected, abs=1e-12)
        assert kl == pytest.approx(0.5108, abs=1e-4)

    @pytest.mark.parametrize("arch_name", ["tiny_arch", "tiny_master_arch"])
    def test_finite_differences(self, arch_name, request):
        arch = request.getfixturevalue(arch_name)
        rng = np.random.default_rng(11)
        avg, cur = random_tiny(arch, 5), random_tiny(arch, 6)
        x = rng.normal(size=(3, 4))
        masks = rng.random((3, arch.n_actions)) < 0.8
        masks[:, 0] = True
        _, g = kl_and_grad(avg, cur, x, masks)
        numeric = central_difference(lambda p: kl_and_grad(avg, p, x, masks)[0], cur)
        assert max_rel_err(g.flat(), numeric) < 1e-4

    def test_support_mismatch(self, tiny_arch):
        p = random_tiny(tiny_arch, 3)
        m = np.ones((1, 3), bool)
        m2 = m.copy()
        m2[0, 1] = False
        with pytest.raises(InvalidMaskError):
            kl_and_grad(p, p, np.ones((1, 4)), m, avg_masks=m2)


class TestSerialization:
    @pytest.mark.parametrize("arch_name", ["tiny_arch", "tiny_master_arch"])
    def test_round_trip(self, arch_name, request):
        p = random_tiny(request.getfixturevalue(arch_name), 9)
        q = NetworkParams.from_bytes(p.to_bytes())
        assert q.arch == p.arch
        assert np.array_equal(q.flat(), p.flat())
        assert np.array_equal(p.with_flat(p.flat()).flat(), p.flat())

    def test_default_dims(self):
        arch = Architecture(input_dim=20, n_summary=15)
        params = init_params(arch, np.random.default_rng(0))
        assert params["w1"].shape == (130, 20) and params["w2"].shape == (50, 130)
        assert params["pi_w"].shape[0] == 15
        m = Architecture(input_dim=20, n_summary=15, payload_bits=8)
        assert init_params(m, np.random.default_rng(0))["pp_w"].shape[0] == 256
