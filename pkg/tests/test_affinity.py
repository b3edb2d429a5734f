import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import deepcut as dc
from conftest import make_field, random_field


def test_ncut_orthonormal_basis_gives_identity():
    field = make_field(np.eye(2, dtype=np.float32), 1, 2)
    w = dc.build_ncut_affinity(field, dc.AffinityConfig())
    assert np.array_equal(w.weights, np.eye(2))


def test_ncut_thresholds_negative_correlation():
    field = make_field(np.array([[1, 0], [-1, 0]], np.float32), 1, 2)
    w = dc.build_ncut_affinity(field, dc.AffinityConfig())
    assert np.array_equal(w.weights, np.eye(2))


def test_ncut_matches_double_loop_oracle():
    field = random_field(6, 8, 5, seed=3)
    w = dc.build_ncut_affinity(field, dc.AffinityConfig())
    f = field.feature_matrix()
    for i in range(48):
        for j in range(48):
            expected = max(0.0, float(np.dot(f[i], f[j])))
            assert abs(w.weights[i, j] - expected) < 1e-6


def test_ncut_zero_feature_row_is_isolated_node():
    feats = np.ones((4, 3), np.float32)
    feats[1] = 0
    with pytest.raises(dc.DegenerateGraphError, match="node 1"):
        dc.build_ncut_affinity(make_field(feats, 2, 2), dc.AffinityConfig())


def test_cc_shift_arithmetic():
    # max correlation is 10 (row norm^2), alpha=2 shifts everything by 5
    feats = np.zeros((3, 2), np.float32)
    feats[0, 0] = np.sqrt(10, dtype=np.float32)
    feats[1, 1] = 1
    feats[2, 1] = 1
    field = make_field(feats, 1, 3)
    raw = dc.build_cc_affinity(field, dc.AffinityConfig(alpha=None)).weights
    shifted = dc.build_cc_affinity(field, dc.AffinityConfig(alpha=2.0)).weights
    assert abs(raw.max() - 10.0) < 1e-5
    assert np.allclose(raw - shifted, raw.max() / 2.0)


def test_cc_alpha_inf_is_raw_correlation():
    field = random_field(4, 4, 6, seed=5)
    f = field.feature_matrix()
    for cfg in (dc.AffinityConfig(alpha=None), dc.AffinityConfig(alpha=np.inf)):
        w = dc.build_cc_affinity(field, cfg)
        assert np.allclose(w.weights, f @ f.T, atol=1e-12)


def test_cc_sign_census_on_planted_blocks():
    pf = dc.synth_planted_features(9, 9, 3, 0.02, 11)
    w = dc.build_cc_affinity(pf.field, dc.AffinityConfig(alpha=3.0))
    truth = pf.truth.flat()
    same = truth[:, None] == truth[None, :]
    cross = w.weights[~same]
    within_diag_blocks = w.weights[same]
    assert (cross < 0).all()
    assert (within_diag_blocks > 0).mean() > 0.9


def test_alpha_below_one_rejected():
    with pytest.raises(dc.ArgumentError):
        dc.AffinityConfig(alpha=0.5)


def test_degree_vector_hand_sum():
    w = dc.AffinityMatrix.from_weights(np.array([[1.0, 2.0], [2.0, 3.0]]), dc.CC)
    assert np.array_equal(dc.degree_vector(w), [3.0, 5.0])


def test_degree_vector_identity():
    w = dc.AffinityMatrix.from_weights(np.eye(7), dc.NCUT)
    assert np.array_equal(dc.degree_vector(w), np.ones(7))


def test_degree_vector_matches_naive_sum():
    rng = np.random.default_rng(8)
    m = rng.normal(size=(10, 10))
    m = (m + m.T) / 2
    w = dc.AffinityMatrix.from_weights(m, dc.CC)
    naive = np.array([sum(m[i, j] for j in range(10)) for i in range(10)])
    assert np.abs(dc.degree_vector(w) - naive).max() < 1e-12


def test_degree_cache_validated():
    with pytest.raises(dc.ArgumentError, match="degree"):
        dc.AffinityMatrix(
            n=2,
            weights=np.array([[1.0, 2.0], [2.0, 3.0]]),
            degree=np.array([3.0, 6.0]),
            kind=dc.CC,
        )


def test_asymmetry_rejected():
    with pytest.raises(dc.ArgumentError, match="symmetric"):
        dc.AffinityMatrix.from_weights(np.array([[1.0, 2.0], [0.0, 1.0]]), dc.CC)


def test_induced_subfield_identity():
    field = random_field(3, 4, 5, seed=2)
    sub, keep = dc.induced_subfield(field, np.arange(12))
    assert np.array_equal(sub.features, field.features)
    assert np.array_equal(keep, np.arange(12))
    assert (sub.grid_h, sub.grid_w) == (12, 1)


def test_induced_subfield_single_node():
    field = random_field(3, 4, 5, seed=2)
    sub, keep = dc.induced_subfield(field, [7])
    assert sub.n_patches == 1
    assert np.array_equal(sub.features[0], field.features[7])


def test_induced_subfield_empty_rejected():
    field = random_field(2, 2, 3, seed=0)
    with pytest.raises(dc.ArgumentError):
        dc.induced_subfield(field, [])


def test_rebuilt_subgraph_shift_uses_local_maximum():
    # keep a block whose internal max correlation is below the global max;
    # the rebuilt graph shifts less, so its entries sit above the sliced ones
    rng = np.random.default_rng(4)
    feats = rng.normal(size=(9, 6))
    feats[0] *= 10  # global max lives outside the kept block
    field = make_field(feats, 3, 3)
    keep = np.arange(4, 9)
    alpha = 3.0
    sliced = dc.build_cc_affinity(field, dc.AffinityConfig(alpha=alpha)).weights[
        np.ix_(keep, keep)
    ]
    sub, _ = dc.induced_subfield(field, keep)
    rebuilt = dc.build_cc_affinity(sub, dc.AffinityConfig(alpha=alpha)).weights
    f = field.feature_matrix()
    global_max = (f @ f.T).max()
    local_max = (f[keep] @ f[keep].T).max()
    assert local_max < global_max
    expected_gap = (global_max - local_max) / alpha
    assert np.allclose(rebuilt - sliced, expected_gap)
    assert (rebuilt > sliced).all()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), alpha=st.floats(1.0, 10.0))
def test_shift_invariants(seed, alpha):
    field = random_field(3, 4, 4, seed=seed)
    raw = dc.build_cc_affinity(field, dc.AffinityConfig(alpha=None)).weights
    shifted = dc.build_cc_affinity(field, dc.AffinityConfig(alpha=alpha)).weights
    diff = raw - shifted
    assert np.allclose(diff, raw.max() / alpha, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_alpha_monotone_entrywise(seed):
    field = random_field(3, 3, 4, seed=seed)
    w1 = dc.build_cc_affinity(field, dc.AffinityConfig(alpha=1.5)).weights
    w2 = dc.build_cc_affinity(field, dc.AffinityConfig(alpha=4.0)).weights
    assert (w1 <= w2 + 1e-12).all()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_ncut_nonnegative_symmetric_and_diagonal(seed):
    field = random_field(4, 3, 5, seed=seed)
    w = dc.build_ncut_affinity(field, dc.AffinityConfig())
    assert (w.weights >= 0).all()
    assert np.array_equal(w.weights, w.weights.T)
    f = field.feature_matrix()
    assert np.abs(np.diagonal(w.weights) - (f * f).sum(axis=1)).max() < 1e-6


def test_dump_weights_roundtrips_as_debug_field():
    import io

    w = dc.AffinityMatrix.from_weights(np.eye(3), dc.NCUT)
    buf = io.BytesIO()
    dc.dump_weights(w, buf)
    buf.seek(0)
    back = dc.read_feature_field(buf)
    assert (back.grid_h, back.grid_w, back.embed_dim) == (3, 3, 1)
    assert np.array_equal(back.features.reshape(3, 3), np.eye(3))
