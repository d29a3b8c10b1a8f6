"""HUT アダプタのテスト"""

import numpy as np
import pytest

from src.core.adapter import forward_merged
from src.core.errors import RankError, ShapeError
from src.core.gradcheck import check_layer_gradients
from src.core.hut import (
    HutLayer,
    compute_w_new,
    hut_backward,
    hut_forward,
    hut_forward_reduced,
    hut_init,
    hut_merge,
)
from src.core.models import HutAdapterState
from src.core.tensor import DenseMatrix, matmul, relative_error


def make_state(random_matrix, d, k, r, spread=0.5):
    W0 = random_matrix(d, k)
    return HutAdapterState(
        W0=W0,
        MA=DenseMatrix(1.0 + spread * random_matrix(d, r).data),
        MB=DenseMatrix(1.0 + spread * random_matrix(r, k).data),
        gamma=DenseMatrix(1.0 + spread * random_matrix(1, k).data),
        beta=random_matrix(1, k),
        rank=r,
    )


def test_zero_noise_init_reproduces_base_weight(random_matrix):
    W0 = random_matrix(5, 3)
    state = hut_init(W0, 2, noise_std=0.0)
    assert compute_w_new(state) == W0
    x = random_matrix(4, 5)
    assert hut_forward(state, x) == matmul(x, W0)
    merged = hut_merge(state)
    assert merged.W == W0
    assert merged.bias == DenseMatrix.zeros(1, 3)


def test_init_is_deterministic(random_matrix):
    W0 = random_matrix(6, 4)
    a = hut_init(W0, 3, noise_std=0.1, seed=11)
    b = hut_init(W0, 3, noise_std=0.1, seed=11)
    assert a == b
    assert hut_init(W0, 3, noise_std=0.1, seed=12) != a


@pytest.mark.parametrize("rank", [0, 4])
def test_init_rejects_bad_rank(random_matrix, rank):
    with pytest.raises(RankError):
        hut_init(random_matrix(3, 5), rank)


def test_w_new_hand_example():
    state = HutAdapterState(
        W0=DenseMatrix.ones(2, 2),
        MA=DenseMatrix([[2.0], [4.0]]),
        MB=DenseMatrix([[3.0, 5.0]]),
        gamma=DenseMatrix.ones(1, 2),
        beta=DenseMatrix.zeros(1, 2),
        rank=1,
    )
    assert compute_w_new(state) == DenseMatrix([[6.0, 10.0], [12.0, 20.0]])
    assert hut_forward(state, DenseMatrix([[1.0, 1.0]])) == DenseMatrix([[18.0, 30.0]])


def test_w_new_annihilated_by_zero_base(random_matrix):
    state = make_state(random_matrix, 4, 3, 2)
    state = HutAdapterState(
        W0=DenseMatrix.zeros(4, 3), MA=state.MA, MB=state.MB,
        gamma=state.gamma, beta=state.beta, rank=2,
    )
    assert compute_w_new(state) == DenseMatrix.zeros(4, 3)


def test_shift_only_outputs(random_matrix):
    state = make_state(random_matrix, 4, 3, 2)
    out = hut_forward(state, DenseMatrix.zeros(5, 4))
    assert np.array_equal(out.data, np.repeat(state.beta.data, 5, axis=0))

    zero_gamma = HutAdapterState(
        W0=state.W0, MA=state.MA, MB=state.MB,
        gamma=DenseMatrix.zeros(1, 3), beta=state.beta, rank=2,
    )
    out = hut_forward_reduced(zero_gamma, random_matrix(5, 4))
    assert np.array_equal(out.data, np.repeat(state.beta.data, 5, axis=0))


def test_forward_rejects_wrong_input_width(random_matrix):
    state = make_state(random_matrix, 4, 3, 2)
    with pytest.raises(ShapeError):
        hut_forward(state, random_matrix(2, 5))


def test_merge_equivalence_on_random_states(rng):
    for _ in range(100):
        d, k = int(rng.integers(3, 17)), int(rng.integers(3, 17))
        r = int(rng.integers(1, min(4, d, k) + 1))
        state = HutAdapterState(
            W0=DenseMatrix(rng.normal(size=(d, k))),
            MA=DenseMatrix(rng.normal(1.0, 0.5, size=(d, r))),
            MB=DenseMatrix(rng.normal(1.0, 0.5, size=(r, k))),
            gamma=DenseMatrix(rng.normal(1.0, 0.5, size=(1, k))),
            beta=DenseMatrix(rng.normal(size=(1, k))),
            rank=r,
        )
        x = DenseMatrix(rng.normal(size=(int(rng.integers(1, 9)), d)))
        expected = hut_forward(state, x)
        assert relative_error(hut_forward_reduced(state, x), expected) <= 1e-10
        assert relative_error(forward_merged(hut_merge(state), x), expected) <= 1e-10


def test_num_trainable_matches_enumerated_state(random_matrix):
    state = make_state(random_matrix, 7, 5, 3)
    enumerated = sum(m.rows * m.cols for m in state.trainable().values())
    assert state.num_trainable == enumerated == 7 * 3 + 3 * 5 + 2 * 5
    assert HutLayer(state).num_trainable == enumerated


def test_backward_zero_upstream(random_matrix):
    state = make_state(random_matrix, 4, 3, 2)
    grads = hut_backward(state, random_matrix(2, 4), DenseMatrix.zeros(2, 3)).as_dict()
    for name, g in grads.items():
        assert g == DenseMatrix.zeros(*g.shape), name


def test_backward_zero_input(random_matrix):
    state = make_state(random_matrix, 4, 3, 2)
    upstream = random_matrix(2, 3)
    grads = hut_backward(state, DenseMatrix.zeros(2, 4), upstream)
    assert grads.dMA == DenseMatrix.zeros(4, 2)
    assert grads.dMB == DenseMatrix.zeros(2, 3)
    assert grads.dGamma == DenseMatrix.zeros(1, 3)
    np.testing.assert_allclose(grads.dBeta.data, upstream.data.sum(axis=0, keepdims=True))


def test_backward_matches_finite_differences(rng):
    for _ in range(20):
        state = HutAdapterState(
            W0=DenseMatrix(rng.normal(size=(4, 3))),
            MA=DenseMatrix(rng.normal(1.0, 0.5, size=(4, 2))),
            MB=DenseMatrix(rng.normal(1.0, 0.5, size=(2, 3))),
            gamma=DenseMatrix(rng.normal(1.0, 0.5, size=(1, 3))),
            beta=DenseMatrix(rng.normal(size=(1, 3))),
            rank=2,
        )
        x = DenseMatrix(rng.normal(size=(2, 4)))
        upstream = DenseMatrix(rng.normal(size=(2, 3)))
        errors = check_layer_gradients(HutLayer(state), x, upstream)
        assert set(errors) == {"MA", "MB", "gamma", "beta"}
        assert max(errors.values()) <= 1e-5


def test_backward_rejects_bad_upstream(random_matrix):
    state = make_state(random_matrix, 4, 3, 2)
    with pytest.raises(ShapeError):
        hut_backward(state, random_matrix(2, 4), random_matrix(3, 3))


def test_layer_delta_weight(random_matrix):
    state = make_state(random_matrix, 4, 3, 2)
    layer = HutLayer(state)
    np.testing.assert_allclose(
        layer.delta_weight().data + state.W0.data, compute_w_new(state).data, rtol=0, atol=1e-12
    )
    identity = HutLayer.create(state.W0, 2)
    assert identity.delta_weight() == DenseMatrix.zeros(4, 3)


def test_with_parameters_keeps_base(random_matrix):
    layer = HutLayer.create(random_matrix(4, 3), 2)
    new_gamma = DenseMatrix.zeros(1, 3)
    updated = layer.with_parameters({"gamma": new_gamma})
    assert updated.base_weight is layer.base_weight
    assert updated.parameters()["gamma"] == new_gamma
    assert layer.parameters()["gamma"] == DenseMatrix.ones(1, 3)


def test_partial_zero_base_stays_zero(rng):
    for _ in range(10):
        base = rng.normal(size=(6, 5))
        base[rng.random(size=base.shape) < 0.3] = 0.0
        state = HutAdapterState(
            W0=DenseMatrix(base),
            MA=DenseMatrix(rng.normal(1.0, 0.5, size=(6, 3))),
            MB=DenseMatrix(rng.normal(1.0, 0.5, size=(3, 5))),
            gamma=DenseMatrix.ones(1, 5),
            beta=DenseMatrix.zeros(1, 5),
            rank=3,
        )
        w_new = compute_w_new(state).data
        assert np.all(w_new[base == 0.0] == 0.0)


def test_modulation_is_rank_one(rng):
    for _ in range(10):
        state = HutAdapterState(
            W0=DenseMatrix(rng.normal(size=(5, 4))),
            MA=DenseMatrix(rng.normal(1.0, 0.5, size=(5, 3))),
            MB=DenseMatrix(rng.normal(1.0, 0.5, size=(3, 4))),
            gamma=DenseMatrix.ones(1, 4),
            beta=DenseMatrix.zeros(1, 4),
            rank=3,
        )
        ratio = compute_w_new(state).data / state.W0.data
        # すべての 2×2 小行列式が 0
        for i in range(5):
            for k in range(i + 1, 5):
                for j in range(4):
                    for l in range(j + 1, 4):
                        minor = ratio[i, j] * ratio[k, l] - ratio[i, l] * ratio[k, j]
                        assert abs(minor) <= 1e-9


def test_rank_one_equals_constant_higher_rank(rng):
    d, k, r = 5, 4, 3
    W0 = DenseMatrix(rng.normal(size=(d, k)))
    a = rng.normal(1.0, 0.5, size=(d, 1))
    b = rng.normal(1.0, 0.5, size=(1, k))
    gamma = DenseMatrix(rng.normal(1.0, 0.5, size=(1, k)))
    beta = DenseMatrix(rng.normal(size=(1, k)))
    one = HutAdapterState(W0=W0, MA=DenseMatrix(a), MB=DenseMatrix(b), gamma=gamma, beta=beta, rank=1)
    wide = HutAdapterState(
        W0=W0,
        MA=DenseMatrix(np.repeat(a, r, axis=1)),
        MB=DenseMatrix(np.repeat(b, r, axis=0)),
        gamma=gamma,
        beta=beta,
        rank=r,
    )
    x = DenseMatrix(rng.normal(size=(3, d)))
    np.testing.assert_allclose(hut_forward(wide, x).data, hut_forward(one, x).data, rtol=1e-12, atol=1e-12)
