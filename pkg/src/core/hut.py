"""
HUT (Hadamard Updated Transformation) アダプタ

    W_new = (M_A 1_A / r) ⊙ W0 ⊙ (1_B M_B / r) = outer(m_A, m_B) ⊙ W0
    h     = gamma ⊙ (x W_new) + beta

1_A, 1_B は全要素 1 の行列として扱い、実体化せず row_mean / col_mean で置き換える。
"""

import logging
from dataclasses import replace
from typing import Dict

from .adapter import AdapterLayer, check_input, check_upstream
from .models import HutAdapterState, HutGradients, MergedLayer, Method, check_rank
from .tensor import (
    Constant,
    DenseMatrix,
    Gaussian,
    SeedLike,
    add,
    add_row,
    broadcast_rows,
    col_mean,
    col_sum,
    derive_seed,
    hadamard,
    matmul,
    outer,
    row_mean,
    scale,
    scale_shift,
    seeded_fill,
    subtract,
    transpose,
)

logger = logging.getLogger(__name__)


def hut_init(W0: DenseMatrix, r: int, noise_std: float = 0.0, seed: SeedLike = 0) -> HutAdapterState:
    """
    HUT アダプタの初期化

    MA, MB = 1 + N(0, noise_std)、gamma = 1、beta = 0。
    noise_std = 0 なら W_new = W0 となり事前学習済みの挙動をそのまま再現する。

    Args:
        W0: 凍結する元の重み d×k
        r: ランク
        noise_std: 対称性を崩すためのノイズ標準偏差
        seed: 乱数シード

    Returns:
        初期化済みの状態
    """
    d, k = W0.shape
    check_rank(r, d, k)
    if noise_std < 0:
        raise ValueError(f"noise_std must be non-negative, got {noise_std}")

    noise = Gaussian(0.0, noise_std)
    MA = add(DenseMatrix.ones(d, r), seeded_fill((d, r), noise, derive_seed(seed, 0)))
    MB = add(DenseMatrix.ones(r, k), seeded_fill((r, k), noise, derive_seed(seed, 1)))
    return HutAdapterState(
        W0=W0,
        MA=MA,
        MB=MB,
        gamma=seeded_fill((1, k), Constant(1.0), seed),
        beta=seeded_fill((1, k), Constant(0.0), seed),
        rank=r,
    )


def compute_w_new(state: HutAdapterState) -> DenseMatrix:
    """W_new = outer(row_mean(MA), col_mean(MB)) ⊙ W0"""
    modulation = outer(row_mean(state.MA), col_mean(state.MB))
    return hadamard(modulation, state.W0)


def hut_forward(state: HutAdapterState, x: DenseMatrix) -> DenseMatrix:
    """学習時の順伝播 h = gamma ⊙ (x W_new) + beta"""
    check_input(x, state.d, "hut_forward")
    return scale_shift(matmul(x, compute_w_new(state)), state.gamma, state.beta)


def reduced_weight(state: HutAdapterState) -> DenseMatrix:
    """
    W' = gamma ⊙ m_A m_B ⊙ W0（gamma は行方向にブロードキャスト）

    コスト: 平均 rd + rk、外積 dk、gamma 展開 dk、要素積 2dk
    """
    modulation = outer(row_mean(state.MA), col_mean(state.MB))
    gamma_full = broadcast_rows(state.gamma, state.d)
    return hadamard(hadamard(gamma_full, modulation), state.W0)


def hut_forward_reduced(state: HutAdapterState, x: DenseMatrix) -> DenseMatrix:
    """簡約形の順伝播 h = x (gamma ⊙ m_A m_B ⊙ W0) + beta"""
    check_input(x, state.d, "hut_forward_reduced")
    return add_row(matmul(x, reduced_weight(state)), state.beta)


def hut_merge(state: HutAdapterState) -> MergedLayer:
    """推論用に W' とバイアス beta へ再パラメータ化"""
    return MergedLayer(W=reduced_weight(state), bias=state.beta)


def hut_backward(state: HutAdapterState, x: DenseMatrix, upstream: DenseMatrix) -> HutGradients:
    """
    L = Σ(upstream ⊙ h) に対する学習パラメータの勾配

    Args:
        state: アダプタ状態
        x: 入力 N×d
        upstream: dL/dh N×k

    Returns:
        dMA, dMB, dGamma, dBeta
    """
    check_input(x, state.d, "hut_backward")
    check_upstream(upstream, x.rows, state.k, "hut_backward")
    r = state.rank

    a = row_mean(state.MA)
    b = col_mean(state.MB)
    w_new = hadamard(outer(a, b), state.W0)
    y = matmul(x, w_new)

    d_beta = col_sum(upstream)
    d_gamma = col_sum(hadamard(upstream, y))
    d_y = hadamard(upstream, broadcast_rows(state.gamma, x.rows))
    masked = hadamard(matmul(transpose(x), d_y), state.W0)

    d_a = matmul(masked, transpose(b))  # d×1
    d_b = matmul(transpose(a), masked)  # 1×k

    # 平均の勾配は各要素に 1/r ずつ配られる
    d_ma = scale(outer(d_a, DenseMatrix.ones(1, r)), 1.0 / r)
    d_mb = scale(outer(DenseMatrix.ones(r, 1), d_b), 1.0 / r)
    return HutGradients(dMA=d_ma, dMB=d_mb, dGamma=d_gamma, dBeta=d_beta)


def hut_input_grad(state: HutAdapterState, x: DenseMatrix, upstream: DenseMatrix) -> DenseMatrix:
    """dL/dx = (upstream ⊙ gamma) W_newᵀ"""
    check_upstream(upstream, x.rows, state.k, "hut_input_grad")
    d_y = hadamard(upstream, broadcast_rows(state.gamma, upstream.rows))
    return matmul(d_y, transpose(compute_w_new(state)))


class HutLayer(AdapterLayer):
    """HUT を適用した線形層"""

    method = Method.HUT

    def __init__(self, state: HutAdapterState):
        self.state = state

    @classmethod
    def create(cls, W0: DenseMatrix, r: int, noise_std: float = 0.0, seed: SeedLike = 0) -> "HutLayer":
        return cls(hut_init(W0, r, noise_std, seed))

    @property
    def base_weight(self) -> DenseMatrix:
        return self.state.W0

    def forward(self, x: DenseMatrix) -> DenseMatrix:
        return hut_forward(self.state, x)

    def backward(self, x: DenseMatrix, upstream: DenseMatrix) -> Dict[str, DenseMatrix]:
        return hut_backward(self.state, x, upstream).as_dict()

    def input_grad(self, x: DenseMatrix, upstream: DenseMatrix) -> DenseMatrix:
        return hut_input_grad(self.state, x, upstream)

    def merge(self) -> MergedLayer:
        return hut_merge(self.state)

    def parameters(self) -> Dict[str, DenseMatrix]:
        return self.state.trainable()

    def with_parameters(self, params: Dict[str, DenseMatrix]) -> "HutLayer":
        return HutLayer(replace(self.state, **params))

    def delta_weight(self) -> DenseMatrix:
        # gamma を含まない W_new - W0
        return subtract(compute_w_new(self.state), self.state.W0)

    @property
    def num_trainable(self) -> int:
        return self.state.num_trainable
