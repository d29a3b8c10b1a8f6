"""
AdamW（重み減衰を勾配から分離した Adam）と学習率スケジュール
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from ..core.errors import ShapeError
from ..core.tensor import DenseMatrix

logger = logging.getLogger(__name__)


@dataclass
class AdamWState:
    """AdamW の状態（テンソルごとの 1 次・2 次モーメント）"""

    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: Dict[str, DenseMatrix],
    grads: Dict[str, DenseMatrix],
    opt: AdamWState,
    lr_scale: float = 1.0,
) -> Tuple[Dict[str, DenseMatrix], AdamWState]:
    """
    AdamW の 1 ステップ

        m = β1 m + (1-β1) g,   v = β2 v + (1-β2) g²
        p ← p (1 - lr·wd) - lr · m̂ / (√v̂ + ε)

    Args:
        params: 名前 → パラメータ
        grads: 名前 → 勾配（欠けている名前は勾配 0 として扱う）
        opt: オプティマイザ状態（in-place 更新）
        lr_scale: スケジュールによる学習率の倍率

    Returns:
        (更新後のパラメータ, オプティマイザ状態)
    """
    opt.step += 1
    lr = opt.lr * lr_scale
    bias1 = 1.0 - opt.beta1 ** opt.step
    bias2 = 1.0 - opt.beta2 ** opt.step

    updated = {}
    for name, p in params.items():
        g = grads[name].data if name in grads else np.zeros(p.shape)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter is {p.shape}")

        m = opt.m.get(name)
        v = opt.v.get(name)
        m = (1.0 - opt.beta1) * g if m is None else opt.beta1 * m + (1.0 - opt.beta1) * g
        v = (1.0 - opt.beta2) * g * g if v is None else opt.beta2 * v + (1.0 - opt.beta2) * g * g
        opt.m[name] = m
        opt.v[name] = v

        m_hat = m / bias1
        denom = np.sqrt(v / bias2) + opt.eps
        # m̂ = v̂ = 0 かつ ε = 0 のときは更新量 0
        direction = np.divide(m_hat, denom, out=np.zeros_like(m_hat), where=denom > 0)

        value = p.data * (1.0 - lr * opt.weight_decay) - lr * direction
        updated[name] = DenseMatrix._wrap(value)

    return updated, opt


def lr_factor(step: int, total_steps: int, warmup_ratio: float = 0.06, schedule: str = "linear") -> float:
    """
    学習率の倍率（線形ウォームアップ後に線形減衰）

    Args:
        step: 0 始まりのステップ番号
        total_steps: 総ステップ数
        warmup_ratio: ウォームアップの割合
        schedule: "linear" または "constant"

    Returns:
        0.0-1.0
    """
    if schedule == "constant" or total_steps <= 0:
        return 1.0
    if schedule != "linear":
        raise ValueError(f"unknown lr schedule: {schedule!r}")
    warmup = int(math.ceil(warmup_ratio * total_steps))
    if step < warmup:
        return (step + 1) / warmup
    remaining = total_steps - warmup
    return max(0.0, (total_steps - step) / remaining) if remaining > 0 else 1.0
