import math

import numpy as np
import pytest

from tensor_core import (
    ATTENTION_PARAMS,
    BN_EPS,
    AdamState,
    NumericError,
    RngStream,
    Tensor,
    adam_step,
    adaptive_avg_pool,
    batchnorm1d,
    conv1d,
    derive_seed,
    dropout,
    gradient_check,
    l1_penalty,
    layer_norm,
    linear,
    load_tensors,
    maxpool1d,
    multi_head_attention,
    positional_encoding,
    relu,
    save_tensors,
    softmax,
    weighted_cross_entropy,
)

GRAD_TOL = 1e-4


def f64(array):
    return Tensor(np.asarray(array, dtype=np.float64))


def weighted_sum(out: Tensor, seed: int = 99) -> Tensor:
    """Scalar readout with fixed random weights so no gradient is trivially zero."""
    w = np.random.default_rng(seed).normal(size=out.shape)
    return (out * Tensor(w)).sum()


def attention_weights(dim: int, rng: np.random.Generator, scale: float = 0.5):
    weights = {}
    for name in ATTENTION_PARAMS:
        shape = (dim, dim) if name.endswith("weight") else (dim,)
        weights[name] = f64(rng.normal(scale=scale, size=shape))
    return weights


def identity_attention(dim: int):
    weights = {}
    for name in ATTENTION_PARAMS:
        weights[name] = f64(np.eye(dim) if name.endswith("weight") else np.zeros(dim))
    return weights


def test_tensor_keeps_array_dtype_and_defaults_to_float32():
    assert Tensor(np.zeros(3, dtype=np.float64)).dtype == np.float64
    assert Tensor([1, 2, 3]).dtype == np.float32


def test_backward_accumulates_shared_parents():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    (x * x + x).sum().backward()
    assert np.allclose(x.grad, 2 * x.data + 1)


def test_backward_needs_scalar_without_seed():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (x * 2.0).backward()


def test_untracked_ops_build_no_graph():
    y = Tensor(np.ones(3)) * 2.0
    assert y.ctx is None


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError, match="matmul"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_linear_shape_mismatch():
    with pytest.raises(ValueError, match="linear"):
        linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_conv1d_identity_kernel(rng):
    x = Tensor(rng.normal(size=(2, 3, 7)))
    weight = np.zeros((3, 3, 3))
    for c in range(3):
        weight[c, c, 1] = 1.0
    out = conv1d(x, Tensor(weight), Tensor(np.zeros(3)))
    assert np.allclose(out.data, x.data)


def test_conv1d_box_kernel_zero_pads():
    x = Tensor(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
    out = conv1d(x, Tensor(np.ones((1, 1, 3))), Tensor(np.zeros(1)))
    assert out.data.tolist() == [[[3.0, 6.0, 9.0, 7.0]]]


def test_conv1d_rejects_mismatched_weight():
    with pytest.raises(ValueError):
        conv1d(Tensor(np.ones((1, 2, 5))), Tensor(np.ones((1, 3, 3))), Tensor(np.zeros(1)))
    with pytest.raises(ValueError, match="kernel"):
        conv1d(Tensor(np.ones((1, 2, 5))), Tensor(np.ones((1, 2, 5))), Tensor(np.zeros(1)))


def test_batchnorm_train_mode_standardizes_and_updates_buffers(rng):
    x = Tensor(rng.normal(loc=3.0, scale=2.0, size=(8, 4, 10)))
    running_mean, running_var = np.zeros(4), np.ones(4)
    out = batchnorm1d(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), running_mean, running_var, training=True)
    assert np.allclose(out.data.mean(axis=(0, 2)), 0.0, atol=1e-10)
    assert np.allclose(out.data.var(axis=(0, 2)), 1.0, atol=1e-4)
    assert np.allclose(running_mean, 0.1 * x.data.mean(axis=(0, 2)))
    unbiased = x.data.var(axis=(0, 2)) * 80 / 79
    assert np.allclose(running_var, 0.9 + 0.1 * unbiased)


def test_batchnorm_eval_uses_initial_running_stats(rng):
    x = Tensor(rng.normal(size=(2, 3, 5)))
    out = batchnorm1d(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), np.zeros(3), np.ones(3), training=False)
    assert np.allclose(out.data, x.data / math.sqrt(1.0 + BN_EPS))


def test_batchnorm_train_mode_needs_two_values():
    with pytest.raises(ValueError, match="at least 2"):
        batchnorm1d(Tensor(np.ones((1, 2, 1))), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                    np.zeros(2), np.ones(2), training=True)


def test_relu_and_maxpool_and_pool():
    x = Tensor(np.array([[[1.0, -3.0, 2.0, 5.0, 4.0]]]))
    assert relu(x).data.tolist() == [[[1.0, 0.0, 2.0, 5.0, 4.0]]]
    assert maxpool1d(x).data.tolist() == [[[1.0, 5.0]]]
    assert adaptive_avg_pool(x).data.tolist() == [[1.8]]


def test_maxpool_routes_gradient_to_window_max():
    x = Tensor(np.array([[[1.0, 3.0, 2.0, 0.5, 9.0]]]), requires_grad=True)
    maxpool1d(x).sum().backward()
    assert x.grad.tolist() == [[[0.0, 1.0, 1.0, 0.0, 0.0]]]


def test_softmax_rows_sum_to_one_and_stay_finite():
    x = Tensor(np.array([[1000.0, 1000.0, -1000.0], [0.0, 1.0, 2.0]]))
    out = softmax(x, axis=-1).data
    assert np.allclose(out.sum(axis=-1), 1.0)
    assert np.allclose(out[0], [0.5, 0.5, 0.0])


def test_dropout_modes(rng):
    x = Tensor(np.ones((200, 50)))
    assert dropout(x, 0.5, training=False) is x
    assert dropout(x, 0.0, training=True) is x
    with pytest.raises(ValueError):
        dropout(x, 1.0, training=True, rng=rng)
    with pytest.raises(ValueError, match="rng"):
        dropout(x, 0.1, training=True)
    out = dropout(x, 0.1, training=True, rng=rng).data
    assert np.all((out == 0) | np.isclose(out, 1.0 / 0.9))
    assert abs(out.mean() - 1.0) < 0.02


def test_attention_uniform_over_identical_keys(rng):
    weights = attention_weights(8, rng)
    query = f64(rng.normal(size=(2, 3, 8)))
    row = rng.normal(size=(1, 1, 8))
    keys = f64(np.repeat(np.repeat(row, 5, axis=1), 2, axis=0))
    _, attn = multi_head_attention(query, keys, keys, weights, heads=4)
    assert attn.shape == (2, 4, 3, 5)
    assert np.allclose(attn.data, 0.2)


def test_attention_follows_dominant_score():
    query = f64([[[10.0, 0.0]]])
    keys = f64([[[10.0, 0.0], [0.0, 10.0], [-10.0, 0.0]]])
    out, attn = multi_head_attention(query, keys, keys, identity_attention(2), heads=1)
    assert attn.data[0, 0, 0, 0] > 1 - 1e-12
    assert np.allclose(out.data[0, 0], [10.0, 0.0])


def test_attention_rows_sum_to_one(rng):
    weights = attention_weights(6, rng)
    x = f64(rng.normal(size=(3, 4, 6)))
    _, attn = multi_head_attention(x, x, x, weights, heads=3)
    assert np.allclose(attn.data.sum(axis=-1), 1.0)


def test_attention_rejects_indivisible_heads(rng):
    weights = attention_weights(6, rng)
    x = f64(rng.normal(size=(1, 2, 6)))
    with pytest.raises(ValueError, match="divisible"):
        multi_head_attention(x, x, x, weights, heads=4)


def test_positional_encoding_values():
    table = positional_encoding(10, 8, dtype=np.float64)
    assert np.array_equal(table[0, 0::2], np.zeros(4))
    assert np.array_equal(table[0, 1::2], np.ones(4))
    assert table[1, 0] == pytest.approx(math.sin(1.0))
    assert table[1, 1] == pytest.approx(math.cos(1.0))
    with pytest.raises(ValueError):
        positional_encoding(4, 7)


def test_cross_entropy_uniform_logits():
    loss = weighted_cross_entropy(f64(np.zeros((4, 3))), np.array([0, 1, 2, 1]), np.ones(3))
    assert float(loss.data) == pytest.approx(math.log(3.0))


def test_cross_entropy_confident_margin():
    loss = weighted_cross_entropy(f64([[20.0, 0.0, 0.0]]), np.array([0]), np.ones(3))
    assert 0 <= float(loss.data) < 1e-8


def test_cross_entropy_weights_scale_per_sample_terms():
    logits = f64(np.zeros((2, 3)))
    loss = weighted_cross_entropy(logits, np.array([0, 1]), np.array([10.0, 0.5, 1.0]))
    assert float(loss.data) == pytest.approx((10.0 + 0.5) / 2 * math.log(3.0))


def test_cross_entropy_validation():
    logits = f64(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        weighted_cross_entropy(logits, np.array([0, 3]), np.ones(3))
    with pytest.raises(ValueError):
        weighted_cross_entropy(logits, np.array([0, 1]), np.array([1.0, 0.0, 1.0]))


def test_l1_penalty_value_and_gradient():
    x = Tensor(np.array([-1.0, 2.0, -3.0]), requires_grad=True)
    out = l1_penalty(x, 0.5)
    assert float(out.data) == pytest.approx(3.0)
    out.backward()
    assert x.grad.tolist() == [-0.5, 0.5, -0.5]
    with pytest.raises(ValueError):
        l1_penalty(x, -1.0)


def test_adam_first_step_moves_by_learning_rate(rng):
    param = f64(rng.normal(size=(4, 3)))
    before = param.data.copy()
    grad = rng.normal(size=(4, 3))
    state = adam_step({"w": param}, {"w": grad}, AdamState(), lr=1e-3)
    assert state.step == 1
    assert np.allclose(before - param.data, 1e-3 * np.sign(grad), rtol=1e-4)


def test_adam_skips_missing_gradients():
    a, b = f64(np.ones(2)), f64(np.ones(2))
    adam_step({"a": a, "b": b}, {"a": np.ones(2), "b": None}, AdamState(), lr=0.1)
    assert np.all(a.data < 1.0)
    assert np.array_equal(b.data, np.ones(2))


def test_adam_rejects_non_finite_gradient():
    param = f64(np.ones(3))
    state = AdamState()
    with pytest.raises(NumericError, match="'w'"):
        adam_step({"w": param}, {"w": np.array([0.1, np.nan, 0.2])}, state, lr=0.1)
    assert state.step == 0
    assert np.array_equal(param.data, np.ones(3))


def test_gradient_check_requires_float64():
    t = Tensor(np.ones(3, dtype=np.float32))
    with pytest.raises(ValueError, match="float64"):
        gradient_check(lambda: t.sum(), {"t": t})


def test_gradient_check_conv1d(rng):
    x, w, b = f64(rng.normal(size=(2, 3, 6))), f64(rng.normal(size=(4, 3, 3))), f64(rng.normal(size=4))
    err = gradient_check(lambda: weighted_sum(conv1d(x, w, b)), {"x": x, "w": w, "b": b})
    assert err < GRAD_TOL


def test_gradient_check_batchnorm_train_mode(rng):
    x = f64(rng.normal(size=(4, 3, 5)))
    gamma, beta = f64(rng.uniform(0.5, 1.5, size=3)), f64(rng.normal(size=3))

    def fn():
        return weighted_sum(batchnorm1d(x, gamma, beta, np.zeros(3), np.ones(3), training=True))

    assert gradient_check(fn, {"x": x, "gamma": gamma, "beta": beta}) < GRAD_TOL


def test_gradient_check_layer_norm(rng):
    x = f64(rng.normal(size=(3, 4, 6)))
    gamma, beta = f64(rng.uniform(0.5, 1.5, size=6)), f64(rng.normal(size=6))
    err = gradient_check(lambda: weighted_sum(layer_norm(x, gamma, beta)), {"x": x, "gamma": gamma, "beta": beta})
    assert err < GRAD_TOL


def test_gradient_check_relu_and_maxpool(rng):
    x = f64(rng.normal(size=(2, 3, 8)))

    def away_from_kinks(name, data):
        return np.abs(data) > 1e-3

    err = gradient_check(lambda: weighted_sum(maxpool1d(relu(x))), {"x": x}, probe_filter=away_from_kinks)
    assert err < GRAD_TOL


def test_gradient_check_softmax_and_cross_entropy(rng):
    logits = f64(rng.normal(size=(5, 3)))
    targets = np.array([0, 1, 2, 1, 0])
    weights = np.array([10.0, 0.48, 1.25])
    assert gradient_check(lambda: weighted_sum(softmax(logits)), {"logits": logits}) < GRAD_TOL
    assert gradient_check(lambda: weighted_cross_entropy(logits, targets, weights), {"logits": logits}) < GRAD_TOL


def test_gradient_check_attention(rng):
    weights = attention_weights(8, rng)
    query, memory = f64(rng.normal(size=(2, 3, 8))), f64(rng.normal(size=(2, 5, 8)))

    def fn():
        out, attn = multi_head_attention(query, memory, memory, weights, heads=2)
        return weighted_sum(out) + weighted_sum(attn, seed=7)

    tensors = {"query": query, "memory": memory, **weights}
    assert gradient_check(fn, tensors, probes=5) < GRAD_TOL


def test_derive_seed_is_stable_and_key_sensitive():
    assert derive_seed(0, "folds", 1) == derive_seed(0, "folds", 1)
    assert derive_seed(0, "folds", 1) != derive_seed(0, "folds", 2)
    assert derive_seed(0, "smote") != derive_seed(0, "augment")
    assert 0 <= derive_seed(7) < 2 ** 32


def test_rng_stream_draws_depend_only_on_counter():
    stream = RngStream(seed=5)
    draws = [stream.next().random() for _ in range(3)]
    assert stream.counter == 3
    assert RngStream(seed=5).at(2).random() == draws[2]
    assert RngStream(seed=6).at(2).random() != draws[2]


def test_save_and_load_tensors(tmp_path, rng):
    tensors = {
        "conv.weight": rng.normal(size=(4, 3, 3)).astype(np.float32),
        "steps": np.arange(5, dtype=np.int64),
        "bias": rng.normal(size=7),
    }
    save_tensors(tmp_path / "ckpt", tensors, metadata={"epoch": 3})
    loaded, metadata = load_tensors(tmp_path / "ckpt")
    assert metadata == {"epoch": 3}
    assert sorted(loaded) == sorted(tensors)
    for name, array in tensors.items():
        assert loaded[name].dtype == array.dtype
        assert np.array_equal(loaded[name], array)


def test_load_tensors_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_tensors(tmp_path / "missing")
    save_tensors(tmp_path / "ckpt", {"a": np.ones(10)})
    weights = tmp_path / "ckpt" / "weights.bin"
    weights.write_bytes(weights.read_bytes()[:40])
    with pytest.raises(ValueError, match="truncated"):
        load_tensors(tmp_path / "ckpt")


def test_load_tensors_detects_flipped_byte(tmp_path):
    save_tensors(tmp_path / "ckpt", {"a": np.arange(6, dtype=np.float64), "b": np.ones(3)})
    weights = tmp_path / "ckpt" / "weights.bin"
    payload = bytearray(weights.read_bytes())
    payload[9] ^= 0x01
    weights.write_bytes(bytes(payload))
    with pytest.raises(ValueError, match="CRC-32"):
        load_tensors(tmp_path / "ckpt")
