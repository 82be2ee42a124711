import math

import numpy as np
import pytest

from ioglm import kernels


class TestMatvec:
    def test_identity(self):
        v = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(kernels.matvec(np.eye(3), v), v)

    def test_zero_matrix_annihilates(self):
        out = kernels.matvec(np.zeros((2, 3)), np.array([5.0, -1.0, 2.0]))
        assert np.array_equal(out, np.zeros(2))

    def test_hand_multiplication(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = kernels.matvec(m, np.array([1.0, 1.0]))
        assert np.allclose(out, [3.0, 7.0])

    def test_dimension_mismatch_reports_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(2,\)"):
            kernels.matvec(np.zeros((2, 3)), np.zeros(2))

    def test_distributes_over_addition(self):
        # float32 instances, checked at the precision the storage supports
        rng = np.random.default_rng(0)
        for _ in range(5):
            m = rng.standard_normal((64, 64)).astype(np.float32)
            a = rng.standard_normal(64).astype(np.float32)
            b = rng.standard_normal(64).astype(np.float32)
            lhs = kernels.matvec(m, a + b)
            rhs = kernels.matvec(m, a) + kernels.matvec(m, b)
            assert np.max(np.abs(lhs - rhs)) < 1e-5


class TestSoftmax:
    def test_uniform_on_equal_inputs(self):
        assert np.allclose(kernels.softmax_stable(np.zeros(3)), np.full(3, 1 / 3))

    def test_shift_invariance(self):
        s = np.array([0.3, -2.0, 5.0, 1.1])
        a = kernels.softmax_stable(s)
        b = kernels.softmax_stable(s + 1000.0)
        assert np.max(np.abs(a - b)) < 1e-12

    def test_matches_direct_exponentiation_oracle(self):
        s = np.array([1.0, 2.0, 3.0])
        e = np.exp(s.astype(np.float64))
        assert np.max(np.abs(kernels.softmax_stable(s) - e / e.sum())) < 1e-7

    def test_random_vectors_sum_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            s = rng.uniform(-50.0, 50.0, size=rng.integers(2, 40))
            p = kernels.softmax_stable(s)
            assert abs(p.sum() - 1.0) < 1e-9
            assert np.all(p > 0)
            c = rng.uniform(-1000.0, 1000.0)
            assert np.max(np.abs(p - kernels.softmax_stable(s + c))) < 1e-12

    def test_nonfinite_input_rejected(self):
        with pytest.raises(ValueError):
            kernels.softmax_stable(np.array([0.0, np.inf]))
        with pytest.raises(ValueError):
            kernels.log_softmax(np.array([0.0, np.nan]))


class TestSigmoid:
    def test_zero_gives_half(self):
        assert kernels.sigmoid(np.array([0.0]))[0] == 0.5

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-30, 30, size=200)
        total = kernels.sigmoid(x) + kernels.sigmoid(-x)
        assert np.max(np.abs(total - 1.0)) < 1e-12

    def test_direct_evaluation_oracle(self):
        out = kernels.sigmoid(np.array([4.0]))[0]
        assert abs(out - 1.0 / (1.0 + math.exp(-4.0))) < 1e-12
        assert abs(out - 0.9820137900) < 1e-9

    def test_open_interval_for_moderate_inputs(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(-30, 30, size=500)
        out = kernels.sigmoid(x)
        assert np.all(out > 0.0) and np.all(out < 1.0)

    def test_overflow_safe_at_extreme_inputs(self):
        # gradual underflow to 0 is fine; overflow or invalid ops are not
        with np.errstate(over="raise", invalid="raise"):
            out = kernels.sigmoid(np.array([1e3, -1e3, 500.0, -500.0]))
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0)
        assert out[1] == pytest.approx(0.0)


class TestCrossEntropy:
    def test_uniform(self):
        p = np.full(4, 0.25)
        for target in range(4):
            assert kernels.cross_entropy(p, target) == pytest.approx(math.log(4), abs=1e-12)

    def test_certainty(self):
        p = np.array([0.0, 1.0, 0.0])
        assert kernels.cross_entropy(p, 1) == 0.0

    def test_direct_evaluation(self):
        p = np.array([0.1, 0.7, 0.2])
        assert kernels.cross_entropy(p, 1) == pytest.approx(-math.log(0.7), abs=1e-12)

    def test_target_out_of_range(self):
        with pytest.raises(ValueError):
            kernels.cross_entropy(np.full(4, 0.25), 4)

    def test_logit_form_matches_probability_form(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            s = rng.uniform(-5, 5, size=12)
            p = kernels.softmax_stable(s)
            t = int(rng.integers(12))
            assert kernels.cross_entropy_from_logits(s, t) == pytest.approx(
                kernels.cross_entropy(p, t), abs=1e-10
            )


class TestFiniteDifferenceGradient:
    def test_quadratic(self):
        grad = kernels.finite_difference_gradient(lambda t: float(t[0] ** 2), np.array([3.0]))
        assert abs(grad[0] - 6.0) < 1e-6

    def test_constant_loss_gives_zero(self):
        grad = kernels.finite_difference_gradient(lambda t: 7.5, np.arange(5.0))
        assert np.array_equal(grad, np.zeros(5))

    def test_log_sum_exp_closed_form(self):
        theta = np.array([0.1, -0.7, 1.3, 0.4])

        def loss(t):
            return float(np.log(np.exp(t).sum()))

        grad = kernels.finite_difference_gradient(loss, theta)
        assert np.max(np.abs(grad - kernels.softmax_stable(theta))) < 1e-6

    def test_nondeterministic_loss_rejected(self):
        calls = [0.0]

        def noisy(t):
            calls[0] += 1.0
            return calls[0]

        with pytest.raises(ValueError, match="deterministic"):
            kernels.finite_difference_gradient(noisy, np.zeros(2))

    def test_coordinate_sampling(self):
        theta = np.arange(1.0, 7.0)
        grad = kernels.finite_difference_gradient(
            lambda t: float((t ** 2).sum()), theta, coords=[0, 3, 5]
        )
        assert np.allclose(grad, [2.0, 8.0, 12.0], atol=1e-6)

    def test_epsilon_validation(self):
        with pytest.raises(ValueError):
            kernels.finite_difference_gradient(lambda t: 0.0, np.zeros(1), epsilon=0.0)


class TestPackUnpack:
    def test_round_trip(self):
        rng = np.random.default_rng(5)
        named = {
            "a": rng.standard_normal((3, 4)).astype(np.float32),
            "b": rng.standard_normal(7),
        }
        flat, spec = kernels.pack_arrays(named)
        assert flat.shape == (19,)
        back = kernels.unpack_arrays(flat, spec)
        for key in named:
            assert back[key].dtype == named[key].dtype
            assert np.array_equal(back[key], named[key])
