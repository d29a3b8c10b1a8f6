"""
LoRA ベースライン
h = x W0 + s · (x W_A) W_B
"""

import logging
from dataclasses import replace
from typing import Dict

from .adapter import AdapterLayer, check_input, check_upstream
from .models import LoraAdapterState, LoraGradients, MergedLayer, Method, check_rank
from .tensor import (
    DenseMatrix,
    Gaussian,
    SeedLike,
    add,
    derive_seed,
    matmul,
    scale,
    seeded_fill,
    transpose,
)

logger = logging.getLogger(__name__)

# A はガウス初期化、B はゼロ初期化（ΔW = 0 から開始）
INIT_STD = 0.02


def lora_init(W0: DenseMatrix, r: int, s: float = 1.0, seed: SeedLike = 0) -> LoraAdapterState:
    """
    LoRA アダプタの初期化

    Args:
        W0: 凍結する元の重み d×k
        r: ランク
        s: スケール（>= 1）
        seed: 乱数シード

    Returns:
        WA ~ N(0, 0.02)、WB = 0 の状態
    """
    d, k = W0.shape
    check_rank(r, d, k)
    return LoraAdapterState(
        W0=W0,
        WA=seeded_fill((d, r), Gaussian(0.0, INIT_STD), derive_seed(seed, 0)),
        WB=DenseMatrix.zeros(r, k),
        scale=float(s),
        rank=r,
    )


def lora_forward(state: LoraAdapterState, x: DenseMatrix, weight_side: bool = False) -> DenseMatrix:
    """
    LoRA の順伝播

    Args:
        state: アダプタ状態
        x: 入力 N×d
        weight_side: True なら x (W0 + s W_A W_B) の順で評価する

    Returns:
        N×k
    """
    check_input(x, state.d, "lora_forward")
    if weight_side:
        # (2d-1)Nk + (2r+1)dk
        return matmul(x, lora_merge(state).W)
    base = matmul(x, state.W0)
    low = matmul(matmul(x, state.WA), state.WB)
    return add(base, scale(low, state.scale))


def lora_merge(state: LoraAdapterState) -> MergedLayer:
    """W = W0 + s W_A W_B、bias = 0"""
    delta = scale(matmul(state.WA, state.WB), state.scale)
    return MergedLayer(W=add(state.W0, delta), bias=DenseMatrix.zeros(1, state.k))


def lora_backward(state: LoraAdapterState, x: DenseMatrix, upstream: DenseMatrix) -> LoraGradients:
    """
    dWB = s (x W_A)ᵀ G、dWA = s xᵀ (G W_Bᵀ)

    Args:
        state: アダプタ状態
        x: 入力 N×d
        upstream: dL/dh N×k

    Returns:
        dWA, dWB
    """
    check_input(x, state.d, "lora_backward")
    check_upstream(upstream, x.rows, state.k, "lora_backward")
    d_wb = scale(matmul(transpose(matmul(x, state.WA)), upstream), state.scale)
    d_wa = scale(matmul(transpose(x), matmul(upstream, transpose(state.WB))), state.scale)
    return LoraGradients(dWA=d_wa, dWB=d_wb)


def lora_input_grad(state: LoraAdapterState, x: DenseMatrix, upstream: DenseMatrix) -> DenseMatrix:
    """dL/dx = G W0ᵀ + s (G W_Bᵀ) W_Aᵀ"""
    check_upstream(upstream, x.rows, state.k, "lora_input_grad")
    base = matmul(upstream, transpose(state.W0))
    low = matmul(matmul(upstream, transpose(state.WB)), transpose(state.WA))
    return add(base, scale(low, state.scale))


class LoraLayer(AdapterLayer):
    """LoRA を適用した線形層"""

    method = Method.LORA

    def __init__(self, state: LoraAdapterState):
        self.state = state

    @classmethod
    def create(cls, W0: DenseMatrix, r: int, s: float = 1.0, seed: SeedLike = 0) -> "LoraLayer":
        return cls(lora_init(W0, r, s, seed))

    @property
    def base_weight(self) -> DenseMatrix:
        return self.state.W0

    def forward(self, x: DenseMatrix) -> DenseMatrix:
        return lora_forward(self.state, x)

    def backward(self, x: DenseMatrix, upstream: DenseMatrix) -> Dict[str, DenseMatrix]:
        return lora_backward(self.state, x, upstream).as_dict()

    def input_grad(self, x: DenseMatrix, upstream: DenseMatrix) -> DenseMatrix:
        return lora_input_grad(self.state, x, upstream)

    def merge(self) -> MergedLayer:
        return lora_merge(self.state)

    def parameters(self) -> Dict[str, DenseMatrix]:
        return self.state.trainable()

    def with_parameters(self, params: Dict[str, DenseMatrix]) -> "LoraLayer":
        return LoraLayer(replace(self.state, **params))

    @property
    def num_trainable(self) -> int:
        return self.state.num_trainable
