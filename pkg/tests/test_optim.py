import numpy as np
import pytest

from ldegen.optim import AE_LEARNING_RATE, LDE_LEARNING_RATE, adam_init, adam_step


class TestAdamStep:
    def test_first_step_moves_by_alpha_against_gradient_sign(self):
        params = {"w": np.array([1.0, -2.0, 0.5])}
        state = adam_init(params, alpha=0.01)
        adam_step(state, params, {"w": np.array([3.0, -0.1, 1e-3])})
        # bias-corrected m/sqrt(v) is sign(g) on the first step
        np.testing.assert_allclose(params["w"], [0.99, -1.99, 0.49], atol=1e-7)

    def test_zero_gradient_leaves_parameters(self):
        params = {"w": np.array([1.0, 2.0])}
        state = adam_init(params, alpha=0.1)
        adam_step(state, params, {"w": np.zeros(2)})
        np.testing.assert_array_equal(params["w"], [1.0, 2.0])

    def test_moments_follow_recurrence(self):
        params = {"w": np.zeros(1)}
        state = adam_init(params, alpha=1e-3)
        g1, g2 = 2.0, -1.0
        adam_step(state, params, {"w": np.array([g1])})
        adam_step(state, params, {"w": np.array([g2])})
        m = 0.5 * (0.5 * g1) + 0.5 * g2
        v = 0.999 * (0.001 * g1 ** 2) + 0.001 * g2 ** 2
        assert state.t == 2
        np.testing.assert_allclose(state.m["w"], [m], rtol=1e-15)
        np.testing.assert_allclose(state.v["w"], [v], rtol=1e-15)

    def test_defaults(self):
        state = adam_init({"w": np.zeros(1)}, alpha=1.0)
        assert (state.beta1, state.beta2, state.epsilon) == (0.5, 0.999, 1e-8)
        assert AE_LEARNING_RATE == 1e-3
        assert LDE_LEARNING_RATE == 2e-4

    def test_converges_on_quadratic(self):
        target = np.array([3.0, -1.5, 0.25])
        params = {"w": np.zeros(3)}
        state = adam_init(params, alpha=1e-2)
        for _ in range(2000):
            adam_step(state, params, {"w": 2.0 * (params["w"] - target)})
        np.testing.assert_allclose(params["w"], target, atol=1e-3)

    def test_deterministic(self):
        def run():
            params = {"w": np.ones(4)}
            state = adam_init(params, alpha=1e-2)
            g = np.random.default_rng(0).normal(size=(50, 4))
            for row in g:
                adam_step(state, params, {"w": row})
            return params["w"]

        np.testing.assert_array_equal(run(), run())

    def test_missing_gradient_leaves_parameter(self):
        params = {"a": np.ones(2), "b": np.ones(2)}
        state = adam_init(params, alpha=0.1)
        adam_step(state, params, {"a": np.ones(2)})
        np.testing.assert_array_equal(params["b"], np.ones(2))


class TestAdamErrors:
    @pytest.mark.parametrize("alpha", [0.0, -1e-3])
    def test_bad_learning_rate(self, alpha):
        with pytest.raises(ValueError):
            adam_init({"w": np.zeros(1)}, alpha=alpha)

    @pytest.mark.parametrize("b1,b2", [(1.0, 0.9), (0.5, 1.0), (-0.1, 0.9)])
    def test_bad_decay(self, b1, b2):
        with pytest.raises(ValueError):
            adam_init({"w": np.zeros(1)}, alpha=1e-3, beta1=b1, beta2=b2)

    def test_shape_mismatch(self):
        params = {"w": np.zeros(3)}
        state = adam_init(params, alpha=1e-3)
        with pytest.raises(ValueError):
            adam_step(state, params, {"w": np.zeros(2)})
