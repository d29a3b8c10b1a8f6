"""
中心差分による勾配検証
"""

import logging
from typing import Callable, Dict

import numpy as np

from .adapter import AdapterLayer
from .tensor import DenseMatrix, max_entry_error

logger = logging.getLogger(__name__)

FD_STEP = 1e-6

# 数値勾配の最大絶対値に対する分母の下限比
GRAD_SCALE_FLOOR = 1e-2

LossFn = Callable[[Dict[str, DenseMatrix]], float]


def finite_diff(loss_fn: LossFn, params: Dict[str, DenseMatrix], h: float = FD_STEP) -> Dict[str, np.ndarray]:
    """
    パラメータ各要素について中心差分 (f(p+h) - f(p-h)) / 2h を計算

    Args:
        loss_fn: パラメータ辞書 → スカラー損失
        params: 評価点
        h: 刻み幅

    Returns:
        名前 → 数値勾配
    """
    grads: Dict[str, np.ndarray] = {}
    for name, value in params.items():
        base = value.data
        g = np.zeros(base.shape)
        for idx in np.ndindex(*base.shape):
            bumped = base.copy()
            bumped[idx] = base[idx] + h
            f_plus = loss_fn({**params, name: DenseMatrix._wrap(bumped)})
            bumped[idx] = base[idx] - h
            f_minus = loss_fn({**params, name: DenseMatrix._wrap(bumped)})
            g[idx] = 0.5 * (f_plus - f_minus) / h
        grads[name] = g
    return grads


def gradient_errors(
    analytic: Dict[str, DenseMatrix],
    loss_fn: LossFn,
    params: Dict[str, DenseMatrix],
    h: float = FD_STEP,
) -> Dict[str, float]:
    """
    解析勾配と数値勾配の要素ごと最大相対誤差

    分母は max(|解析値|, |数値|, GRAD_SCALE_FLOOR × 数値勾配の最大絶対値)。

    Returns:
        名前 → max_entry_error
    """
    numeric = finite_diff(loss_fn, params, h)
    errors = {}
    for name in params:
        if name not in analytic:
            raise KeyError(f"analytic gradient is missing {name}")
        errors[name] = max_entry_error(analytic[name].data, numeric[name], scale_floor=GRAD_SCALE_FLOOR)
    logger.debug(f"Gradient check errors: {errors}")
    return errors


def check_layer_gradients(layer: AdapterLayer, x: DenseMatrix, upstream: DenseMatrix, h: float = FD_STEP) -> Dict[str, float]:
    """
    L = Σ(upstream ⊙ layer(x)) について backward を中心差分と比較
    """
    g = upstream.data

    def loss_fn(params: Dict[str, DenseMatrix]) -> float:
        return float(np.sum(g * layer.with_parameters(params).forward(x).data))

    return gradient_errors(layer.backward(x, upstream), loss_fn, layer.parameters(), h)
