import numpy as np
import pytest

from unbiased_ltr.scorers import (
    ScorerParams,
    ScorerSpec,
    forward,
    forward_batch,
    forward_batch_with_grad,
    forward_with_grad,
    init,
    params_from_dict,
    params_to_dict,
    perturb,
    spec_from_dict,
    spec_to_dict,
    update_toward,
)

LINEAR = ScorerSpec(kind="linear", norm="none")
LINEAR_NORMED = ScorerSpec(kind="linear", norm="layer")


def finite_difference_grad(params, spec, features, upstream, step=1e-5):
    """Central differences of u . scores with respect to theta."""
    theta = params.theta
    grad = np.zeros_like(theta)
    for i in range(len(theta)):
        plus = theta.copy()
        plus[i] += step
        minus = theta.copy()
        minus[i] -= step
        s_plus = forward(ScorerParams(plus, params.layer_dims), spec, features)
        s_minus = forward(ScorerParams(minus, params.layer_dims), spec, features)
        grad[i] = np.dot(upstream, s_plus - s_minus) / (2 * step)
    return grad


class TestInit:
    def test_linear_parameter_count(self):
        params = init(LINEAR, 10, np.random.default_rng(0))
        assert params.theta.shape == (11,)

    def test_dnn_parameter_count(self):
        spec = ScorerSpec(kind="dnn", hidden_layer_sizes=(512, 256, 128))
        expected = (
            700 * 512 + 512 + 512 * 256 + 256 + 256 * 128 + 128 + 128 * 1 + 1
        )
        assert spec.param_count(700) == expected
        params = init(spec, 700, np.random.default_rng(0))
        assert params.theta.shape == (expected,)

    def test_same_seed_same_parameters(self):
        spec = ScorerSpec(kind="dnn", hidden_layer_sizes=(8, 4))
        a = init(spec, 5, np.random.default_rng(123)).theta
        b = init(spec, 5, np.random.default_rng(123)).theta
        np.testing.assert_array_equal(a, b)

    def test_biases_start_at_zero(self):
        params = init(LINEAR, 3, np.random.default_rng(0))
        assert params.theta[-1] == 0.0

    def test_zero_feature_size_rejected(self):
        with pytest.raises(ValueError):
            init(LINEAR, 0, np.random.default_rng(0))

    def test_linear_with_hidden_layers_rejected(self):
        with pytest.raises(ValueError):
            ScorerSpec(kind="linear", hidden_layer_sizes=(8,))


class TestForward:
    def test_elu_values(self):
        spec = ScorerSpec(kind="dnn", hidden_layer_sizes=(1,), activation="elu", norm="none")
        # one input, hidden weight 1 bias 0, output weight 1 bias 0:
        # the score is exactly elu(x)
        params = ScorerParams(np.array([1.0, 0.0, 1.0, 0.0]), (1, 1, 1))
        for x, want in ((0.0, 0.0), (1.0, 1.0), (-1.0, np.exp(-1.0) - 1.0)):
            score = forward(params, spec, np.array([[x]]))[0]
            assert score == pytest.approx(want, abs=1e-12)

    def test_linear_is_dot_product_plus_bias(self):
        params = ScorerParams(np.array([2.0, -1.0, 0.5]), (2, 1))
        scores = forward(params, LINEAR, np.array([[1.0, 1.0], [0.0, 2.0]]))
        np.testing.assert_allclose(scores, [2.0 - 1.0 + 0.5, -2.0 + 0.5])

    def test_singleton_list_normalizes_to_zero(self):
        params = ScorerParams(np.array([3.0, 7.0, 0.25]), (2, 1))
        scores = forward(params, LINEAR_NORMED, np.array([[5.0, -2.0]]))
        assert scores[0] == pytest.approx(0.25)

    def test_forward_is_pure(self):
        rng = np.random.default_rng(0)
        spec = ScorerSpec(kind="dnn", hidden_layer_sizes=(6,))
        params = init(spec, 4, rng)
        features = rng.standard_normal((5, 4))
        a = forward(params, spec, features)
        b = forward(params, spec, features)
        np.testing.assert_array_equal(a, b)

    def test_bias_shift_does_not_change_order(self):
        rng = np.random.default_rng(1)
        params = init(LINEAR, 6, rng)
        features = rng.standard_normal((8, 6))
        base = forward(params, LINEAR, features)
        shifted_params = ScorerParams(params.theta + np.eye(7)[-1] * 5.0, params.layer_dims)
        shifted = forward(shifted_params, LINEAR, features)
        np.testing.assert_array_equal(np.argsort(-base), np.argsort(-shifted))

    def test_zero_weights_score_the_bias(self):
        params = ScorerParams(np.array([0.0, 0.0, 1.5]), (2, 1))
        scores = forward(params, LINEAR, np.random.default_rng(0).standard_normal((4, 2)))
        np.testing.assert_allclose(scores, 1.5)

    def test_non_finite_features_rejected(self):
        params = init(LINEAR, 2, np.random.default_rng(0))
        with pytest.raises(ValueError, match="finite"):
            forward(params, LINEAR, np.array([[1.0, np.nan]]))

    def test_batched_matches_per_list(self):
        rng = np.random.default_rng(5)
        spec = ScorerSpec(kind="dnn", hidden_layer_sizes=(7, 3), norm="layer")
        params = init(spec, 4, rng)
        lists = [rng.standard_normal((n, 4)) for n in (3, 5, 2)]
        batch = np.zeros((3, 5, 4))
        mask = np.zeros((3, 5), dtype=bool)
        for i, lst in enumerate(lists):
            batch[i, : len(lst)] = lst
            mask[i, : len(lst)] = True
        batched = forward_batch(params, spec, batch, mask)
        for i, lst in enumerate(lists):
            np.testing.assert_allclose(
                batched[i, : len(lst)], forward(params, spec, lst), atol=1e-12
            )


class TestGradients:
    @pytest.mark.parametrize("activation", ["elu", "relu", "sigmoid", "tanh"])
    @pytest.mark.parametrize("norm", ["none", "layer"])
    def test_dnn_pullback_matches_finite_differences(self, activation, norm):
        import zlib

        from unbiased_ltr.scorers import _activation as act_fn
        from unbiased_ltr.scorers import _unflatten, normalize_lists

        def near_relu_kink(params, spec, features):
            # central differences straddling relu's kink disagree with the
            # subgradient, so such draws are resampled
            if spec.activation != "relu":
                return False
            h = normalize_lists(features[None, :, :], None, spec.norm)[0]
            for w, b in _unflatten(params)[:-1]:
                z = h @ w + b
                if np.min(np.abs(z)) < 1e-3:
                    return True
                h = act_fn(spec.activation, z)
            return False

        rng = np.random.default_rng(zlib.crc32(f"{activation}-{norm}".encode()))
        spec = ScorerSpec(
            kind="dnn", hidden_layer_sizes=(6, 4), activation=activation, norm=norm
        )
        for _ in range(5):
            while True:
                params = init(spec, 3, rng)
                features = rng.standard_normal((4, 3))
                if not near_relu_kink(params, spec, features):
                    break
            upstream = rng.standard_normal(4)
            sg = forward_with_grad(params, spec, features)
            analytic = sg.pullback(upstream)
            numeric = finite_difference_grad(params, spec, features, upstream)
            denom = np.maximum(np.abs(numeric), 1e-3)
            assert np.max(np.abs(analytic - numeric) / denom) < 1e-4

    def test_linear_gradients_are_inputs(self):
        params = ScorerParams(np.array([0.3, -0.7, 0.1]), (2, 1))
        features = np.array([[1.0, 2.0], [3.0, 4.0]])
        sg = forward_with_grad(params, LINEAR, features)
        # d(score_0)/dtheta = [x_00, x_01, 1]
        np.testing.assert_allclose(sg.pullback(np.array([1.0, 0.0])), [1.0, 2.0, 1.0])
        np.testing.assert_allclose(sg.pullback(np.array([0.0, 1.0])), [3.0, 4.0, 1.0])

    def test_pullback_of_zero_is_zero(self):
        rng = np.random.default_rng(2)
        spec = ScorerSpec(kind="dnn", hidden_layer_sizes=(5,))
        params = init(spec, 3, rng)
        sg = forward_with_grad(params, spec, rng.standard_normal((4, 3)))
        np.testing.assert_array_equal(sg.pullback(np.zeros(4)), np.zeros_like(params.theta))

    def test_scores_match_plain_forward(self):
        rng = np.random.default_rng(3)
        spec = ScorerSpec(kind="dnn", hidden_layer_sizes=(5,), norm="layer")
        params = init(spec, 3, rng)
        features = rng.standard_normal((6, 3))
        np.testing.assert_array_equal(
            forward_with_grad(params, spec, features).scores,
            forward(params, spec, features),
        )

    def test_batch_pullback_sums_list_gradients(self):
        rng = np.random.default_rng(4)
        spec = ScorerSpec(kind="dnn", hidden_layer_sizes=(4,), norm="layer")
        params = init(spec, 3, rng)
        lists = [rng.standard_normal((3, 3)), rng.standard_normal((2, 3))]
        ups = [rng.standard_normal(3), rng.standard_normal(2)]
        batch = np.zeros((2, 3, 3))
        mask = np.zeros((2, 3), dtype=bool)
        upstream = np.zeros((2, 3))
        for i, (lst, u) in enumerate(zip(lists, ups)):
            batch[i, : len(lst)] = lst
            mask[i, : len(lst)] = True
            upstream[i, : len(u)] = u
        total = forward_batch_with_grad(params, spec, batch, mask).pullback(upstream)
        separate = sum(
            forward_with_grad(params, spec, lst).pullback(u)
            for lst, u in zip(lists, ups)
        )
        np.testing.assert_allclose(total, separate, atol=1e-12)


class TestPerturb:
    def test_step_has_exact_magnitude(self):
        rng = np.random.default_rng(0)
        params = init(LINEAR, 10, rng)
        perturbed, direction = perturb(params, 0.5, rng)
        assert np.linalg.norm(perturbed.theta - params.theta) == pytest.approx(0.5)
        assert np.linalg.norm(direction) == pytest.approx(1.0)

    def test_directions_centered_at_origin(self):
        rng = np.random.default_rng(1)
        params = init(LINEAR, 5, rng)
        mean = np.zeros(6)
        n = 10_000
        for _ in range(n):
            _, direction = perturb(params, 1.0, rng)
            mean += direction
        mean /= n
        # each coordinate has std 1/sqrt(dim); the mean of n draws shrinks by sqrt(n)
        limit = 3.0 / np.sqrt(6 * n)
        assert np.all(np.abs(mean) < 3 * limit)

    def test_update_toward_recovers_candidate(self):
        rng = np.random.default_rng(2)
        params = init(LINEAR, 8, rng)
        delta = 0.7
        perturbed, direction = perturb(params, delta, rng)
        stepped = update_toward(params, direction, delta)
        np.testing.assert_allclose(stepped.theta, perturbed.theta, atol=1e-12)

    def test_update_toward_basis_vector(self):
        params = ScorerParams(np.zeros(3), (2, 1))
        moved = update_toward(params, np.array([1.0, 0.0, 0.0]), 0.1)
        np.testing.assert_allclose(moved.theta, [0.1, 0.0, 0.0])

    def test_zero_alpha_is_identity(self):
        params = ScorerParams(np.ones(3), (2, 1))
        moved = update_toward(params, np.array([1.0, 0.0, 0.0]), 0.0)
        np.testing.assert_array_equal(moved.theta, params.theta)

    def test_non_unit_direction_rejected(self):
        params = ScorerParams(np.ones(3), (2, 1))
        with pytest.raises(ValueError, match="unit"):
            update_toward(params, np.array([2.0, 0.0, 0.0]), 0.1)

    def test_dimension_mismatch_rejected(self):
        params = ScorerParams(np.ones(3), (2, 1))
        with pytest.raises(ValueError, match="dimension"):
            update_toward(params, np.array([1.0, 0.0]), 0.1)


class TestSerialization:
    def test_round_trip_exact(self):
        rng = np.random.default_rng(0)
        spec = ScorerSpec(kind="dnn", hidden_layer_sizes=(4, 2), activation="tanh", norm="batch")
        params = init(spec, 3, rng)
        import json

        spec2 = spec_from_dict(json.loads(json.dumps(spec_to_dict(spec))))
        params2 = params_from_dict(json.loads(json.dumps(params_to_dict(params))))
        assert spec2 == spec
        np.testing.assert_array_equal(params2.theta, params.theta)
        assert params2.layer_dims == params.layer_dims
