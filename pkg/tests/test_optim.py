"""AdamW と学習率スケジュールのテスト"""

import numpy as np
import pytest

from src.core.errors import ShapeError
from src.core.tensor import DenseMatrix
from src.training.optim import AdamWState, adamw_step, lr_factor


def test_first_step_hand_example():
    params = {"w": DenseMatrix([[0.5]])}
    grads = {"w": DenseMatrix([[1.0]])}
    opt = AdamWState(lr=0.1, beta1=0.0, beta2=0.0, eps=0.0)
    params, opt = adamw_step(params, grads, opt)
    assert params["w"].data[0, 0] == pytest.approx(0.4, abs=1e-15)
    assert opt.step == 1


def test_zero_gradient_leaves_parameters():
    params = {"w": DenseMatrix([[1.0, -2.0]])}
    opt = AdamWState(lr=0.1)
    for _ in range(3):
        params, opt = adamw_step(params, {"w": DenseMatrix.zeros(1, 2)}, opt)
    assert params["w"] == DenseMatrix([[1.0, -2.0]])
    assert opt.step == 3


def test_zero_gradient_with_zero_eps_is_finite():
    params = {"w": DenseMatrix([[1.0]])}
    opt = AdamWState(lr=0.1, eps=0.0)
    params, _ = adamw_step(params, {"w": DenseMatrix.zeros(1, 1)}, opt)
    assert params["w"] == DenseMatrix([[1.0]])


def test_weight_decay_is_decoupled():
    params = {"w": DenseMatrix([[2.0]])}
    opt = AdamWState(lr=0.1, weight_decay=0.5)
    for _ in range(4):
        params, opt = adamw_step(params, {}, opt)
    assert params["w"].data[0, 0] == pytest.approx(2.0 * (1 - 0.05) ** 4)


def test_lr_scale_zero_freezes():
    params = {"w": DenseMatrix([[0.3, 0.7]])}
    params2, _ = adamw_step(params, {"w": DenseMatrix([[1.0, -1.0]])}, AdamWState(lr=0.1), lr_scale=0.0)
    assert params2["w"] == params["w"]


def test_gradient_shape_mismatch():
    with pytest.raises(ShapeError):
        adamw_step({"w": DenseMatrix.ones(2, 2)}, {"w": DenseMatrix.ones(1, 2)}, AdamWState(lr=0.1))


def test_lr_factor_linear_schedule():
    total = 100
    factors = [lr_factor(s, total, 0.06) for s in range(total)]
    assert factors[0] == pytest.approx(1 / 6)
    assert factors[5] == pytest.approx(1.0)
    assert factors[6] == pytest.approx(1.0)
    assert factors[-1] == pytest.approx(1 / 94)
    assert all(b <= a for a, b in zip(factors[5:], factors[6:]))
    assert np.all(np.array(factors) > 0)


def test_lr_factor_constant_and_unknown():
    assert lr_factor(3, 10, schedule="constant") == 1.0
    with pytest.raises(ValueError):
        lr_factor(3, 10, schedule="cosine")
