"""Tensor core: forward ops, the scale-aware loss, and backward."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustlab.errors import ContractError, ParameterError, ShapeError
from robustlab.tensor import (
    Gradient,
    Tape,
    Tensor,
    activation,
    backward,
    linear,
    scaled_softmax,
    scaled_softmax_cross_entropy,
    sum_all,
    weighted_mean,
)

from conftest import fd_max_rel_error, random_params

# Frozen oracle values, computed with mpmath at 50 decimal digits.
TANH_HALF = 0.46211715726000976
LN_4 = 1.3862943611198906
LN_1P_EXP_NEG1 = 0.31326168751822283


class TestTensor:
    def test_rejects_nan(self):
        with pytest.raises(ParameterError):
            Tensor([1.0, np.nan])

    def test_rejects_inf(self):
        with pytest.raises(ParameterError):
            Tensor([[np.inf]])

    def test_immutable(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 3.0

    def test_shape_and_item(self):
        assert Tensor([[1.0, 2.0]]).shape == (1, 2)
        assert Tensor(3.5).item() == 3.5
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).item()


class TestLinear:
    def test_identity(self):
        eye = Tensor(np.eye(2))
        out = linear(eye, eye, Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(out.data, np.eye(2))

    def test_sum_plus_bias(self):
        out = linear(Tensor([[1.0, 2.0]]), Tensor([[1.0], [1.0]]), Tensor([3.0]))
        np.testing.assert_array_equal(out.data, [[6.0]])

    def test_matches_triple_loop_oracle(self, rng):
        x = rng.standard_normal((4, 3))
        w = rng.standard_normal((3, 5))
        b = rng.standard_normal(5)
        # independent naive oracle
        expected = np.zeros((4, 5))
        for i in range(4):
            for j in range(5):
                acc = b[j]
                for k in range(3):
                    acc += x[i, k] * w[k, j]
                expected[i, j] = acc
        out = linear(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, expected, rtol=0, atol=1e-14)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 5\)"):
            linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 5))), Tensor(np.zeros(5)))

    def test_batch_independence_is_exact(self, rng):
        x = rng.standard_normal((6, 3))
        w, b = Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal(4))
        full = linear(Tensor(x), w, b).data
        rows = [linear(Tensor(x[i:i + 1]), w, b).data[0] for i in range(6)]
        np.testing.assert_array_equal(full, np.stack(rows))


class TestActivation:
    def test_relu_sign_cases(self):
        out = activation(Tensor([-1.0, 0.0, 2.0]), "relu")
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_tanh_origin(self):
        assert activation(Tensor([0.0]), "tanh").data[0] == 0.0

    def test_tanh_high_precision(self):
        got = activation(Tensor([0.5]), "tanh").data[0]
        assert abs(got - TANH_HALF) < 1e-12

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            activation(Tensor([1.0]), "gelu")


class TestScaledCrossEntropy:
    @pytest.mark.parametrize("alpha", [0.01, 1.0, 10.0, 100.0])
    def test_equal_logits_gives_ln_c(self, alpha):
        logits = Tensor(np.full((3, 4), 1.7))
        losses = scaled_softmax_cross_entropy(logits, np.array([0, 1, 3]), alpha)
        np.testing.assert_allclose(losses.data, LN_4, rtol=0, atol=1e-12)

    def test_two_class_closed_form(self):
        losses = scaled_softmax_cross_entropy(Tensor([[1.0, 0.0]]), np.array([0]), 1.0)
        assert abs(losses.data[0] - LN_1P_EXP_NEG1) < 1e-12

    @pytest.mark.parametrize("alpha", [0.01, 1.0, 10.0, 100.0])
    def test_argmax_scale_invariance(self, alpha):
        probs = scaled_softmax(Tensor([[2.0, 1.0]]), alpha)
        assert np.argmax(probs.data[0]) == 0

    def test_alpha_must_be_positive(self):
        logits = Tensor([[1.0, 2.0]])
        for bad in (0.0, -1.0, np.nan):
            with pytest.raises(ParameterError):
                scaled_softmax_cross_entropy(logits, np.array([0]), bad)

    def test_label_out_of_range(self):
        logits = Tensor([[1.0, 2.0]])
        with pytest.raises(IndexError):
            scaled_softmax_cross_entropy(logits, np.array([2]), 1.0)
        with pytest.raises(IndexError):
            scaled_softmax_cross_entropy(logits, np.array([-1]), 1.0)

    def test_non_integer_labels_rejected(self):
        with pytest.raises(ParameterError):
            scaled_softmax_cross_entropy(Tensor([[1.0, 2.0]]), np.array([0.0]), 1.0)


class TestSoftmaxProperties:
    @given(
        st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=8),
        st.sampled_from([1e-6, 0.01, 1.0, 10.0, 100.0]),
    )
    @settings(max_examples=200, deadline=None)
    def test_sums_to_one(self, logits, alpha):
        probs = scaled_softmax(Tensor([logits]), alpha)
        assert abs(probs.data.sum() - 1.0) < 1e-12

    def test_sums_to_one_extreme_spread(self):
        probs = scaled_softmax(Tensor([[1e300, -1e300, 0.0]]), 100.0)
        assert abs(probs.data.sum() - 1.0) < 1e-12

    def test_max_probability_nondecreasing_in_alpha(self, rng):
        for _ in range(20):
            logits = Tensor([rng.uniform(-3, 3, size=5)])
            alphas = np.logspace(-6, 2, 30)
            maxima = [scaled_softmax(logits, a).data.max() for a in alphas]
            assert all(b >= a - 1e-12 for a, b in zip(maxima, maxima[1:]))

    def test_flattens_to_uniform_at_tiny_alpha(self, rng):
        # O(1) logits: the deviation from 1/C at alpha=1e-6 is O(alpha).
        for c in (2, 3, 5, 8):
            logits = Tensor([rng.uniform(-1, 1, size=c)])
            assert abs(scaled_softmax(logits, 1e-6).data.max() - 1.0 / c) < 1e-6

    def test_argmax_matches_logits_argmax(self, rng):
        for _ in range(50):
            logits = rng.uniform(-1, 1, size=(1, 6))
            for alpha in (1e-6, 0.01, 1.0, 10.0, 100.0):
                probs = scaled_softmax(Tensor(logits), alpha)
                assert np.argmax(probs.data[0]) == np.argmax(logits[0])

    def test_tie_resolution_lowest_index(self):
        probs = scaled_softmax(Tensor([[3.0, 3.0, 1.0]]), 1.0)
        assert np.argmax(probs.data[0]) == 0


class TestBackward:
    def test_sum_gradient_is_ones(self):
        tape = Tape()
        x = tape.watch(Tensor([[1.0, -2.0], [3.0, 4.0]]))
        loss = sum_all(x, tape)
        g = backward(tape, loss).wrt(x)
        np.testing.assert_array_equal(g.data, np.ones((2, 2)))

    def test_dead_relu_unit_gets_zero_gradient(self):
        tape = Tape()
        x = tape.watch(Tensor([[-5.0, 2.0]]))
        out = activation(x, "relu", tape)
        loss = sum_all(out, tape)
        g = backward(tape, loss).wrt(x)
        np.testing.assert_array_equal(g.data, [[0.0, 1.0]])

    def test_relu_gradient_zero_at_exactly_zero(self):
        tape = Tape()
        x = tape.watch(Tensor([[0.0]]))
        loss = sum_all(activation(x, "relu", tape), tape)
        assert backward(tape, loss).wrt(x).data[0, 0] == 0.0

    @pytest.mark.parametrize("alpha", [0.01, 1.0, 10.0])
    def test_finite_differences_two_layer_mlp(self, rng, alpha):
        params = random_params(rng, (3, 6, 3), activation="tanh")
        x = Tensor(rng.uniform(-1, 1, size=(4, 3)))
        y = rng.integers(0, 3, size=4)
        assert fd_max_rel_error(params, x, y, alpha) < 1e-5

    def test_finite_differences_relu(self, rng):
        params = random_params(rng, (2, 5, 2), activation="relu")
        x = Tensor(rng.uniform(-1, 1, size=(3, 2)))
        y = rng.integers(0, 2, size=3)
        assert fd_max_rel_error(params, x, y, 1.0) < 1e-5

    def test_backward_deterministic_bitwise(self, rng):
        params = random_params(rng, (3, 4, 2))
        x = Tensor(rng.uniform(-1, 1, size=(5, 3)))
        y = rng.integers(0, 2, size=5)

        def run():
            tape = Tape()
            for leaf in params.leaves():
                tape.watch(leaf)
            xt = tape.watch(x)
            from robustlab.model import forward_logits

            logits = forward_logits(params, xt, tape)
            loss = sum_all(scaled_softmax_cross_entropy(logits, y, 10.0, tape), tape)
            g = backward(tape, loss)
            return [g.wrt(leaf).data for leaf in params.leaves()] + [g.wrt(xt).data]

        for a, b in zip(run(), run()):
            np.testing.assert_array_equal(a, b)

    def test_non_scalar_loss_rejected(self):
        tape = Tape()
        x = tape.watch(Tensor([1.0, 2.0]))
        with pytest.raises(ContractError):
            backward(tape, x)

    def test_unwatched_leaf_rejected(self):
        tape = Tape()
        x = Tensor([1.0])
        loss = sum_all(x, tape)
        g = backward(tape, loss)
        with pytest.raises(ContractError):
            g.wrt(x)

    def test_unreached_watched_leaf_gets_zeros(self):
        tape = Tape()
        x = tape.watch(Tensor([1.0, 2.0]))
        other = tape.watch(Tensor([[3.0, 4.0]]))
        loss = sum_all(x, tape)
        g = backward(tape, loss).wrt(other)
        assert g.shape == other.shape
        np.testing.assert_array_equal(g.data, np.zeros((1, 2)))

    def test_weighted_mean_gradient_linear_in_weights(self, rng):
        # doubling the weights exactly doubles the gradient (power of two,
        # so float scaling is exact)
        x_arr = rng.standard_normal(6)
        w = rng.uniform(0.1, 2.0, size=6)

        def grad_with(weights):
            tape = Tape()
            x = tape.watch(Tensor(x_arr))
            loss = weighted_mean(x, weights, tape)
            return backward(tape, loss).wrt(x).data

        np.testing.assert_array_equal(grad_with(2.0 * w), 2.0 * grad_with(w))

    def test_gradient_from_pairs_shape_check(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ShapeError):
            Gradient.from_pairs([(t, np.zeros((2, 2)))])


class TestReductions:
    def test_weighted_mean_value(self):
        out = weighted_mean(Tensor([1.0, 2.0, 3.0]), [1.0, 1.0, 1.0])
        assert out.item() == pytest.approx(2.0)

    def test_weighted_mean_shape_check(self):
        with pytest.raises(ShapeError):
            weighted_mean(Tensor([1.0, 2.0]), [1.0])

    def test_sum_all_scalar(self):
        assert sum_all(Tensor([[1.0, 2.0], [3.0, 4.0]])).item() == 10.0
