import numpy as np
import pytest

import deepcut as dc
from conftest import random_cc_affinity, random_field, random_ncut_affinity


def params_to_vector(params: dc.ModelParams) -> np.ndarray:
    return np.concatenate([t.ravel() for t in params.tensors()])


def vector_to_params(vec: np.ndarray, like: dc.ModelParams) -> dc.ModelParams:
    out, pos = [], 0
    for t in like.tensors():
        out.append(vec[pos : pos + t.size].reshape(t.shape).copy())
        pos += t.size
    return dc.ModelParams(*out)


def model_loss(params, w, feats, loss_name):
    assignment, cache = forward_no_dropout(params, w, feats)
    if loss_name == "ncut":
        return dc.ncut_loss(assignment.S, w), cache
    return dc.cc_loss(assignment.S, w), cache


def forward_no_dropout(params, w, feats):
    return dc.forward(params, w, feats, mode="train", dropout_rate=0.0)


def gradient_check(loss_name, w, feats, params, eps=1e-4):
    loss, cache = model_loss(params, w, feats, loss_name)
    grads = dc.backward(params, cache, loss.dL_dS)
    analytic = params_to_vector(grads)
    vec = params_to_vector(params)
    numeric = np.zeros_like(vec)
    for i in range(vec.size):
        for sign, slot in ((+1, 0), (-1, 1)):
            bumped = vec.copy()
            bumped[i] += sign * eps
            value, _ = model_loss(
                vector_to_params(bumped, params), w, feats, loss_name
            )
            numeric[i] += sign * value.value / (2 * eps)
    return analytic, numeric


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


def test_init_param_count_example():
    params = dc.init_params(384, 64, 4, seed=0)
    assert params.param_count() == 384 * 64 + 64 * 32 + 32 + 32 * 4 + 4 == 26_788


def test_init_deterministic_and_bounded():
    a = dc.init_params(12, 8, 3, seed=5)
    b = dc.init_params(12, 8, 3, seed=5)
    for ta, tb in zip(a.tensors(), b.tensors()):
        assert np.array_equal(ta, tb)
    c = dc.init_params(12, 8, 3, seed=6)
    assert not np.array_equal(a.gcn_weight, c.gcn_weight)
    bound = np.sqrt(6.0 / (12 + 8))
    assert np.abs(a.gcn_weight).max() <= bound


def test_init_biases_zero():
    params = dc.init_params(10, 6, 2, seed=1)
    assert not params.mlp1_bias.any()
    assert not params.mlp2_bias.any()


def test_init_odd_hidden_rejected():
    with pytest.raises(dc.ArgumentError):
        dc.init_params(10, 7, 2, seed=0)


def test_gcn_propagate_identity_graph():
    w = dc.AffinityMatrix.from_weights(np.eye(4), dc.NCUT)
    rng = np.random.default_rng(0)
    n_feats = rng.normal(size=(4, 5))
    theta = rng.normal(size=(5, 3))
    out = dc.gcn_propagate(w, n_feats, theta)
    assert np.allclose(out, n_feats @ theta, atol=1e-12)


def test_gcn_propagate_uniform_mean():
    w = dc.AffinityMatrix.from_weights(np.ones((2, 2)), dc.NCUT)
    rng = np.random.default_rng(1)
    n_feats = rng.normal(size=(2, 4))
    theta = rng.normal(size=(4, 3))
    out = dc.gcn_propagate(w, n_feats, theta)
    mean_row = (n_feats[0] + n_feats[1]) / 2 @ theta
    assert np.allclose(out[0], mean_row) and np.allclose(out[1], mean_row)


def test_gcn_propagate_matches_per_node_loop():
    w = random_ncut_affinity(8, seed=2)
    rng = np.random.default_rng(3)
    n_feats = rng.normal(size=(8, 6))
    theta = rng.normal(size=(6, 4))
    out = dc.gcn_propagate(w, n_feats, theta)
    for v in range(8):
        acc = np.zeros(6)
        for u in range(8):
            acc += w.weights[v, u] * n_feats[u]
        acc /= w.weights[v].sum()
        assert np.abs(out[v] - acc @ theta).max() < 1e-10


def test_gcn_propagate_signed_graph_uses_absolute_row_sum():
    w = random_cc_affinity(6, seed=4)
    p = dc.propagation_matrix(w)
    assert np.allclose(
        p, w.weights / np.abs(w.weights).sum(axis=1, keepdims=True)
    )
    # the operator stays bounded: each row is a signed convex-ish combination
    assert (np.abs(p).sum(axis=1) <= 1 + 1e-12).all()


def test_forward_rows_sum_to_one():
    field = random_field(4, 4, 6, seed=5)
    w = dc.build_ncut_affinity(field, dc.AffinityConfig())
    params = dc.init_params(6, 8, 3, seed=0)
    assignment, _ = dc.forward(params, w, field.feature_matrix())
    assert np.abs(assignment.S.sum(axis=1) - 1).max() < 1e-5
    assert assignment.S.min() >= 0 and assignment.S.max() <= 1


def test_forward_eval_deterministic():
    field = random_field(3, 5, 4, seed=6)
    w = dc.build_ncut_affinity(field, dc.AffinityConfig())
    params = dc.init_params(4, 6, 2, seed=1)
    a, _ = dc.forward(params, w, field.feature_matrix(), mode="eval")
    b, _ = dc.forward(params, w, field.feature_matrix(), mode="eval")
    assert np.array_equal(a.S, b.S)


def test_forward_train_same_seed_same_mask():
    field = random_field(3, 5, 4, seed=6)
    w = dc.build_ncut_affinity(field, dc.AffinityConfig())
    params = dc.init_params(4, 6, 2, seed=1)
    a, ca = dc.forward(params, w, field.feature_matrix(), "train", dropout_seed=9)
    b, cb = dc.forward(params, w, field.feature_matrix(), "train", dropout_seed=9)
    assert np.array_equal(a.S, b.S)
    assert np.array_equal(ca.dropout_scale, cb.dropout_scale)


def test_forward_train_requires_seed():
    field = random_field(2, 2, 3, seed=0)
    w = dc.build_ncut_affinity(field, dc.AffinityConfig())
    params = dc.init_params(3, 4, 2, seed=0)
    with pytest.raises(dc.ArgumentError):
        dc.forward(params, w, field.feature_matrix(), mode="train")


def test_dropout_keep_fraction():
    field = random_field(50, 50, 4, seed=7)  # 2500 nodes x 4 hidden/2 units
    w = dc.AffinityMatrix.from_weights(np.eye(2500), dc.NCUT)
    params = dc.init_params(4, 8, 2, seed=2)
    _, cache = dc.forward(
        params, w, field.feature_matrix(), mode="train", dropout_seed=3
    )
    kept = (cache.dropout_scale > 0).mean()
    assert cache.dropout_scale.size == 10_000
    assert abs(kept - 0.75) < 0.02
    # inverted scaling: surviving units are multiplied by 1/0.75
    assert np.allclose(np.unique(cache.dropout_scale), [0.0, 1 / 0.75])


def test_backward_zero_upstream_gives_zero_grads():
    field = random_field(3, 4, 5, seed=8)
    w = dc.build_ncut_affinity(field, dc.AffinityConfig())
    params = dc.init_params(5, 6, 3, seed=3)
    _, cache = dc.forward(
        params, w, field.feature_matrix(), mode="train", dropout_seed=1
    )
    grads = dc.backward(params, cache, np.zeros((12, 3)))
    for t in grads.tensors():
        assert not t.any()


def test_backward_rejects_eval_cache():
    field = random_field(2, 3, 4, seed=9)
    w = dc.build_ncut_affinity(field, dc.AffinityConfig())
    params = dc.init_params(4, 4, 2, seed=4)
    _, cache = dc.forward(params, w, field.feature_matrix(), mode="eval")
    with pytest.raises(dc.ContractError):
        dc.backward(params, cache, np.zeros((6, 2)))


@pytest.mark.parametrize("loss_name", ["ncut", "cc"])
def test_gradients_match_finite_differences(loss_name):
    field = random_field(3, 4, 8, seed=10)  # n=12, c=8
    if loss_name == "ncut":
        w = dc.build_ncut_affinity(field, dc.AffinityConfig())
    else:
        w = dc.build_cc_affinity(field, dc.AffinityConfig(alpha=3.0))
    params = dc.init_params(8, 8, 3, seed=11)
    analytic, numeric = gradient_check(loss_name, w, field.feature_matrix(), params)
    assert relative_error(analytic, numeric) <= 1e-4
    # coordinate-wise agreement with an absolute guard for near-zero entries
    assert (np.abs(analytic - numeric) <= 1e-4 * np.abs(numeric) + 1e-7).all()


def test_elu_consistent_at_zero():
    field = random_field(2, 2, 3, seed=12)
    w = dc.build_ncut_affinity(field, dc.AffinityConfig())
    params = dc.init_params(3, 4, 2, seed=5)
    _, cache = dc.forward(params, w, field.feature_matrix(), "train", dropout_rate=0.0)
    # derivative reconstructed from the cached output: 1 on both branches at 0
    a = np.array([-1e-12, 0.0, 1e-12])
    elu = np.where(a > 0, a, np.expm1(a))
    grad = np.where(elu > 0, 1.0, elu + 1.0)
    assert np.allclose(grad, 1.0, atol=1e-12)


def test_adam_zero_gradient_keeps_params():
    params = dc.init_params(4, 4, 2, seed=6)
    opt = dc.OptState.for_params(params)
    grads = dc.ModelParams.zeros_like(params)
    new_params, new_opt = dc.adam_step(params, grads, opt)
    for a, b in zip(params.tensors(), new_params.tensors()):
        assert np.array_equal(a, b)
    assert new_opt.step == 1


def test_adam_first_step_is_signed_lr():
    params = dc.init_params(4, 4, 2, seed=7)
    opt = dc.OptState.for_params(params, lr=0.05)
    rng = np.random.default_rng(8)
    grads = params.map(lambda t: rng.normal(size=t.shape) + 2.0)  # nonzero
    new_params, _ = dc.adam_step(params, grads, opt)
    for p, g, q in zip(params.tensors(), grads.tensors(), new_params.tensors()):
        assert np.abs((p - q) - 0.05 * np.sign(g)).max() <= 0.05 * 1e-6


def test_adam_converges_on_quadratic_bowl():
    # f(x) = x^2 from x=1 with lr=0.1; scalar carried in a 1x1 tensor
    zeros = dc.ModelParams(
        gcn_weight=np.array([[1.0]]),
        mlp1_weight=np.zeros((1, 1)),
        mlp1_bias=np.zeros(1),
        mlp2_weight=np.zeros((1, 1)),
        mlp2_bias=np.zeros(1),
    )
    params = zeros
    opt = dc.OptState.for_params(params, lr=0.1)
    for _ in range(100):
        grads = dc.ModelParams.zeros_like(params)
        grads = dc.ModelParams(
            gcn_weight=2.0 * params.gcn_weight,
            mlp1_weight=grads.mlp1_weight,
            mlp1_bias=grads.mlp1_bias,
            mlp2_weight=grads.mlp2_weight,
            mlp2_bias=grads.mlp2_bias,
        )
        params, opt = dc.adam_step(params, grads, opt)
    assert abs(params.gcn_weight[0, 0]) < 0.05


def test_forward_nan_features_named_layer():
    w = dc.AffinityMatrix.from_weights(np.eye(2), dc.NCUT)
    params = dc.init_params(2, 4, 2, seed=9)
    poisoned = np.array([[1.0, np.nan], [0.0, 1.0]])
    with pytest.raises(dc.NumericError, match="gcn"):
        dc.forward(params, w, poisoned)


def test_param_checkpoint_roundtrip():
    import io

    params = dc.init_params(12, 8, 3, seed=42)
    buf = io.BytesIO()
    count = dc.save_params(params, buf)
    assert count == len(buf.getvalue())
    buf.seek(0)
    back = dc.load_params(buf)
    for a, b in zip(params.tensors(), back.tensors()):
        assert np.array_equal(a, b) and a.dtype == b.dtype


def test_param_checkpoint_rejects_truncation_and_bad_magic():
    import io

    params = dc.init_params(4, 4, 2, seed=0)
    buf = io.BytesIO()
    dc.save_params(params, buf)
    raw = buf.getvalue()
    with pytest.raises(dc.FormatError, match="truncated"):
        dc.load_params(io.BytesIO(raw[:-5]))
    with pytest.raises(dc.FormatError, match="magic"):
        dc.load_params(io.BytesIO(b"XXXX" + raw[4:]))
