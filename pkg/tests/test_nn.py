import numpy as np
import pytest
from hypothesis import given, strategies as st

from advbench import (DegenerateLogits, InvalidInput, Layer, LossKind,
                      MlpModel, UnsupportedLoss, forward, gradient_check,
                      input_gradient, loss_value)
from advbench.nn import near_activation_kink


def linear_model(w, b):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    return MlpModel((Layer(w, np.asarray(b, dtype=float), "identity"),))


def random_mlp(rng, dims):
    layers = []
    for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
        act = "relu" if i < len(dims) - 2 else "identity"
        layers.append(Layer(rng.standard_normal((dout, din)),
                            rng.standard_normal(dout), act))
    return MlpModel(tuple(layers))


def naive_forward(model, x):
    # independent straight-line re-evaluation, no shared code path
    a = [float(v) for v in x]
    for layer in model.layers:
        out = []
        for row, bias in zip(layer.weight, layer.bias):
            s = bias
            for wij, aj in zip(row, a):
                s += wij * aj
            if layer.activation == "relu" and s < 0:
                s = 0.0
            out.append(s)
        a = out
    return np.array(a)


class TestForward:
    def test_single_identity_layer(self):
        m = linear_model([[1.0, -1.0]], [0.0])
        assert forward(m, [0.5, 0.25]) == pytest.approx([0.25])

    def test_bias_passthrough(self):
        m = linear_model([[0.0, 0.0], [0.0, 0.0]], [1.0, 2.0])
        np.testing.assert_array_equal(forward(m, [0.3, 0.9]), [1.0, 2.0])

    def test_matches_independent_reevaluation(self):
        rng = np.random.default_rng(7)
        m = random_mlp(rng, [3, 8, 4])
        for _ in range(20):
            x = rng.uniform(0, 1, 3)
            np.testing.assert_allclose(forward(m, x), naive_forward(m, x),
                                       rtol=1e-12, atol=1e-12)

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(3)
        m = random_mlp(rng, [4, 6, 3])
        x = rng.uniform(0, 1, 4)
        a, b = forward(m, x), forward(m, x)
        assert np.array_equal(a, b)

    def test_dimension_mismatch(self):
        m = linear_model([[1.0, 2.0]], [0.0])
        with pytest.raises(InvalidInput):
            forward(m, [1.0, 2.0, 3.0])

    def test_rejects_nonfinite_input(self):
        m = linear_model([[1.0, 2.0]], [0.0])
        with pytest.raises(InvalidInput):
            forward(m, [np.nan, 0.0])

    def test_rejects_mismatched_layers(self):
        with pytest.raises(InvalidInput):
            MlpModel((Layer(np.ones((3, 2)), np.zeros(3), "relu"),
                      Layer(np.ones((2, 4)), np.zeros(2), "identity")))


class TestLossValue:
    def test_difference_of_logits(self):
        assert loss_value([2.0, 5.0, 1.0], 1,
                          LossKind.DIFFERENCE_OF_LOGITS) == 3.0

    def test_dlr(self):
        got = loss_value([4.0, 2.0, 1.0, 0.0], 0,
                         LossKind.DIFFERENCE_OF_LOGITS_RATIO)
        assert got == pytest.approx(2.0 / 3.0)

    def test_neg_cross_entropy_uniform(self):
        got = loss_value([0.0, 0.0], 0, LossKind.NEG_CROSS_ENTROPY)
        assert got == pytest.approx(-np.log(0.5))

    def test_dlr_needs_four_classes(self):
        with pytest.raises(UnsupportedLoss):
            loss_value([1.0, 2.0, 3.0], 0,
                       LossKind.DIFFERENCE_OF_LOGITS_RATIO)

    def test_dlr_degenerate(self):
        with pytest.raises(DegenerateLogits):
            loss_value([1.0, 1.0, 1.0, 1.0], 0,
                       LossKind.DIFFERENCE_OF_LOGITS_RATIO)

    def test_label_range(self):
        with pytest.raises(InvalidInput):
            loss_value([1.0, 2.0], 5, LossKind.DIFFERENCE_OF_LOGITS)

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=6),
           st.floats(-100, 100))
    def test_dl_translation_invariant(self, logits, shift):
        z = np.array(logits)
        a = loss_value(z, 0, LossKind.DIFFERENCE_OF_LOGITS)
        b = loss_value(z + shift, 0, LossKind.DIFFERENCE_OF_LOGITS)
        assert a == pytest.approx(b, abs=1e-9)

    def test_moving_mass_toward_runner_up(self):
        # shifting logit mass from y to the runner-up drives every loss
        # toward misclassification: DL/DLR drop, cross-entropy rises
        rng = np.random.default_rng(11)
        for _ in range(100):
            z = rng.standard_normal(5) * 3
            y = int(np.argmax(z))  # correctly classified regime
            masked = z.copy()
            masked[y] = -np.inf
            m = int(np.argmax(masked))
            z2 = z.copy()
            z2[y] -= 0.25
            z2[m] += 0.25
            for kind in LossKind:
                before = loss_value(z, y, kind)
                after = loss_value(z2, y, kind)
                if kind is LossKind.NEG_CROSS_ENTROPY:
                    assert after > before
                else:
                    assert after < before


class TestInputGradient:
    def test_linear_constant_gradient(self):
        # two-logit linear model: DL gradient is the weight-row difference
        m = linear_model([[3.0, 4.0], [0.0, 0.0]], [0.0, 0.0])
        g1 = input_gradient(m, [0.2, 0.2], 0, LossKind.DIFFERENCE_OF_LOGITS)
        g2 = input_gradient(m, [0.9, 0.1], 0, LossKind.DIFFERENCE_OF_LOGITS)
        np.testing.assert_array_equal(g1, [3.0, 4.0])
        np.testing.assert_array_equal(g1, g2)

    def test_dead_relu_zero_gradient(self):
        m = MlpModel((
            Layer(np.array([[1.0, 1.0]]), np.array([-10.0]), "relu"),
            Layer(np.array([[1.0], [-1.0]]), np.zeros(2), "identity")))
        g = input_gradient(m, [0.5, 0.5], 0, LossKind.DIFFERENCE_OF_LOGITS)
        np.testing.assert_array_equal(g, [0.0, 0.0])

    @pytest.mark.parametrize("kind", list(LossKind))
    def test_matches_finite_differences(self, kind):
        rng = np.random.default_rng(23)
        checked = 0
        while checked < 25:
            m = random_mlp(rng, [4, 10, 5])
            x = rng.uniform(0.05, 0.95, 4)
            if near_activation_kink(m, x):
                continue
            assert gradient_check(m, x, int(rng.integers(5)), kind,
                                  h=1e-4) < 1e-4
            checked += 1


class TestGradientCheck:
    def test_exact_for_linear(self):
        m = linear_model([[3.0, 4.0], [1.0, -2.0]], [0.1, -0.2])
        err = gradient_check(m, [0.4, 0.6], 0,
                             LossKind.DIFFERENCE_OF_LOGITS, h=1e-4)
        assert err < 1e-9

    def test_truncation_error_grows_with_h(self):
        rng = np.random.default_rng(5)
        while True:
            m = random_mlp(rng, [3, 8, 4])
            x = rng.uniform(0.2, 0.8, 3)
            if not near_activation_kink(m, x, tol=1e-2):
                break
        small = gradient_check(m, x, 1, LossKind.NEG_CROSS_ENTROPY, h=1e-5)
        large = gradient_check(m, x, 1, LossKind.NEG_CROSS_ENTROPY, h=0.5)
        assert large > small

    def test_rejects_nonpositive_h(self):
        m = linear_model([[1.0, 1.0]], [0.0])
        with pytest.raises(InvalidInput):
            gradient_check(m, [0.5, 0.5], 0,
                           LossKind.DIFFERENCE_OF_LOGITS, h=0.0)
