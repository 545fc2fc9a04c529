import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionseg import numerics
from motionseg.errors import NumericError, ShapeError
from motionseg.numerics import (
    Layer,
    MlpParams,
    adam_step,
    finite_diff_check,
    init_mlp,
    l2_normalize,
    mlp_backward,
    mlp_forward,
    pack_arrays,
    sgd_step,
    unpack_arrays,
)


def test_forward_identity_single_layer():
    params = MlpParams([Layer(np.eye(2), np.zeros(2), "identity")])
    out, _ = mlp_forward(params, np.array([1.0, 2.0]))
    np.testing.assert_allclose(out, [1.0, 2.0])


def test_forward_relu_clamps_negatives():
    params = MlpParams([Layer(np.eye(2), np.zeros(2), "relu")])
    out, _ = mlp_forward(params, np.array([-1.0, 2.0]))
    np.testing.assert_allclose(out, [0.0, 2.0])


def test_forward_two_layer_matches_hand_computation():
    w1 = np.array([[0.5, -0.25], [1.0, 0.75]])
    b1 = np.array([0.1, -0.2])
    w2 = np.array([[2.0, -1.0]])
    b2 = np.array([0.05])
    params = MlpParams([Layer(w1, b1, "tanh"), Layer(w2, b2, "identity")])
    x = np.array([0.3, -0.6])
    h = np.tanh(w1 @ x + b1)
    expected = w2 @ h + b2
    out, _ = mlp_forward(params, x)
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_forward_width_mismatch_raises():
    params = MlpParams([Layer(np.eye(2), np.zeros(2))])
    with pytest.raises(ShapeError):
        mlp_forward(params, np.zeros(3))


def test_backward_linear_layer_weight_grad_is_outer_product():
    params = MlpParams([Layer(np.zeros((3, 2)), np.zeros(3), "identity")])
    x = np.array([0.7, -1.1])
    _, cache = mlp_forward(params, x)
    e1 = np.array([1.0, 0.0, 0.0])
    grads, _ = mlp_backward(params, cache, e1)
    np.testing.assert_allclose(grads[0][0], np.outer(e1, x))
    np.testing.assert_allclose(grads[0][1], e1)


def test_backward_zero_grad_output_gives_zero_grads():
    params = init_mlp([3, 4, 2], rng=0)
    _, cache = mlp_forward(params, np.ones(3))
    grads, gx = mlp_backward(params, cache, np.zeros(2))
    for dw, db in grads:
        assert not dw.any() and not db.any()
    assert not gx.any()


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(7)
    params = init_mlp([4, 5, 3], activations=["tanh", "identity"], rng=rng)
    x = rng.normal(size=4)
    target = rng.normal(size=3)
    arrays = params.param_arrays()
    flat0, shapes = pack_arrays(arrays)

    def loss_fn(flat):
        vals = unpack_arrays(flat, shapes)
        trial = MlpParams(
            [
                Layer(vals[2 * i], vals[2 * i + 1], layer.activation)
                for i, layer in enumerate(params.layers)
            ]
        )
        out, cache = mlp_forward(trial, x)
        diff = out - target
        grads, _ = mlp_backward(trial, cache, diff)
        return 0.5 * float(diff @ diff), pack_arrays(numerics.grads_to_arrays(grads))[0]

    assert finite_diff_check(loss_fn, flat0) < 1e-4


def test_backward_stale_cache_raises():
    params = init_mlp([3, 2], rng=0)
    _, cache = mlp_forward(params, np.ones(3))
    with pytest.raises(ShapeError):
        mlp_backward(params, cache, np.zeros(5))


def test_input_perturbation_matches_grad_input():
    rng = np.random.default_rng(3)
    params = init_mlp([4, 6, 2], activations=["tanh", "identity"], rng=rng)
    x = rng.normal(size=4)
    w = rng.normal(size=2)
    out, cache = mlp_forward(params, x)
    _, gx = mlp_backward(params, cache, w)
    delta = rng.normal(size=4) * 1e-6
    out2, _ = mlp_forward(params, x + delta)
    predicted = float(gx @ delta)
    actual = float(w @ (out2 - out))
    assert abs(predicted - actual) < 1e-10


def test_finite_diff_quadratic_is_exact():
    def fn(p):
        return 0.5 * float(p @ p), p

    assert finite_diff_check(fn, np.array([0.3, -1.2, 2.0])) < 1e-6


def test_finite_diff_flags_wrong_gradient():
    def fn(p):
        return 0.5 * float(p @ p), 2.0 * p

    err = finite_diff_check(fn, np.array([0.5, 1.5]))
    assert abs(err - 0.5) < 1e-4


def test_finite_diff_nonfinite_loss_raises():
    def fn(p):
        return float("nan"), p

    with pytest.raises(NumericError):
        finite_diff_check(fn, np.ones(2))


def test_adam_zero_gradient_leaves_params_unchanged():
    p = [np.array([1.0, -2.0])]
    state = numerics.make_optimizer(p, "adam", lr=0.1)
    adam_step(p, [np.zeros(2)], state)
    np.testing.assert_allclose(p[0], [1.0, -2.0])
    assert state.step == 1


def test_adam_first_step_magnitude_is_learning_rate():
    p = [np.zeros(3)]
    state = numerics.make_optimizer(p, "adam", lr=0.05)
    adam_step(p, [np.full(3, 7.3)], state)
    np.testing.assert_allclose(np.abs(p[0]), 0.05, rtol=1e-6)


def test_adam_descends_on_quadratic():
    p = [np.array([1.0, 1.0])]
    state = numerics.make_optimizer(p, "adam", lr=0.01)
    norms = []
    for _ in range(100):
        adam_step(p, [p[0].copy()], state)
        norms.append(np.linalg.norm(p[0]))
    # monotone decrease once past the first few warmup steps
    tail = norms[5:]
    assert all(b < a + 1e-12 for a, b in zip(tail, tail[1:]))
    assert norms[-1] < 0.5


def test_adam_rejects_nonfinite_grads():
    p = [np.ones(2)]
    state = numerics.make_optimizer(p, "adam")
    with pytest.raises(NumericError):
        adam_step(p, [np.array([1.0, np.inf])], state)


def test_optimizers_are_deterministic():
    for algo, step in (("adam", adam_step), ("sgd", sgd_step)):
        results = []
        for _ in range(2):
            p = [np.array([0.5, -0.5])]
            state = numerics.make_optimizer(p, algo, lr=0.01)
            for k in range(5):
                step(p, [np.array([0.1 * k, -0.2])], state)
            results.append(p[0].copy())
        np.testing.assert_array_equal(results[0], results[1])


def test_l2_normalize_three_four_five():
    np.testing.assert_allclose(l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8])


def test_l2_normalize_unit_vector_unchanged():
    v = np.array([0.0, 1.0, 0.0])
    np.testing.assert_allclose(l2_normalize(v), v)


def test_l2_normalize_degenerate_maps_to_e1():
    out = l2_normalize(np.zeros(4))
    np.testing.assert_array_equal(out, [1.0, 0.0, 0.0, 0.0])
    out = l2_normalize(np.full(3, 1e-15))
    np.testing.assert_array_equal(out, [1.0, 0.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.floats(min_value=-1e6, max_value=1e6, allow_nan=False), min_size=1, max_size=8
    )
)
def test_l2_normalize_norm_property(values):
    v = np.asarray(values)
    out = l2_normalize(v)
    assert abs(np.linalg.norm(out) - 1.0) < 1e-9


def test_pack_unpack_roundtrip():
    arrays = [np.arange(6.0).reshape(2, 3), np.array([1.5])]
    flat, shapes = pack_arrays(arrays)
    back = unpack_arrays(flat, shapes)
    for a, b in zip(arrays, back):
        np.testing.assert_array_equal(a, b)
