"""
アダプタ共通インタフェース
W_new = U(W0) = W0 + U'(W0) の形で重みを更新する層の抽象基底
"""

import logging
from abc import ABC, abstractmethod
from typing import Dict, Tuple

from .errors import ShapeError
from .models import MergedLayer, Method
from .tensor import DenseMatrix, add_row, matmul, subtract, transpose

logger = logging.getLogger(__name__)


def check_input(x: DenseMatrix, d: int, op: str) -> None:
    if x.cols != d:
        raise ShapeError(f"{op}: input has {x.cols} columns, weight expects {d} (x {x.shape})")


def check_upstream(upstream: DenseMatrix, n: int, k: int, op: str) -> None:
    if upstream.shape != (n, k):
        raise ShapeError(f"{op}: upstream must be {(n, k)}, got {upstream.shape}")


def forward_merged(merged: MergedLayer, x: DenseMatrix) -> DenseMatrix:
    """マージ済み層の順伝播 x W + bias、コスト (2d-1)Nk + Nk"""
    check_input(x, merged.W.rows, "forward_merged")
    return add_row(matmul(x, merged.W), merged.bias)


class AdapterLayer(ABC):
    """重み行列 1 枚に対応する層（凍結 W0 + 学習パラメータ）"""

    method: Method

    @property
    @abstractmethod
    def base_weight(self) -> DenseMatrix:
        """凍結された元の重み W0"""

    @abstractmethod
    def forward(self, x: DenseMatrix) -> DenseMatrix:
        """学習時の順伝播"""

    @abstractmethod
    def backward(self, x: DenseMatrix, upstream: DenseMatrix) -> Dict[str, DenseMatrix]:
        """学習パラメータの勾配（名前 → 勾配）"""

    @abstractmethod
    def input_grad(self, x: DenseMatrix, upstream: DenseMatrix) -> DenseMatrix:
        """入力 x に対する勾配"""

    @abstractmethod
    def merge(self) -> MergedLayer:
        """推論用の 1 枚の重み + バイアスに畳み込む"""

    @abstractmethod
    def parameters(self) -> Dict[str, DenseMatrix]:
        """学習パラメータ（名前 → 行列）"""

    @abstractmethod
    def with_parameters(self, params: Dict[str, DenseMatrix]) -> "AdapterLayer":
        """パラメータを差し替えた新しい層を返す（W0 は共有）"""

    @property
    def shape(self) -> Tuple[int, int]:
        return self.base_weight.shape

    @property
    def num_trainable(self) -> int:
        return sum(p.rows * p.cols for p in self.parameters().values())

    def delta_weight(self) -> DenseMatrix:
        """U'(W0) = W_new - W0"""
        return subtract(self.merge().W, self.base_weight)


class FrozenLayer(AdapterLayer):
    """アダプタなしの凍結線形層"""

    method = Method.MERGED

    def __init__(self, weight: DenseMatrix):
        self._weight = weight

    @property
    def base_weight(self) -> DenseMatrix:
        return self._weight

    def forward(self, x: DenseMatrix) -> DenseMatrix:
        check_input(x, self._weight.rows, "frozen_forward")
        return matmul(x, self._weight)

    def backward(self, x: DenseMatrix, upstream: DenseMatrix) -> Dict[str, DenseMatrix]:
        return {}

    def input_grad(self, x: DenseMatrix, upstream: DenseMatrix) -> DenseMatrix:
        return matmul(upstream, transpose(self._weight))

    def merge(self) -> MergedLayer:
        return MergedLayer(W=self._weight, bias=DenseMatrix.zeros(1, self._weight.cols))

    def parameters(self) -> Dict[str, DenseMatrix]:
        return {}

    def with_parameters(self, params: Dict[str, DenseMatrix]) -> "FrozenLayer":
        return self


class MergedLinear(AdapterLayer):
    """再パラメータ化後の推論用層"""

    method = Method.MERGED

    def __init__(self, merged: MergedLayer):
        self.merged = merged

    @property
    def base_weight(self) -> DenseMatrix:
        return self.merged.W

    def forward(self, x: DenseMatrix) -> DenseMatrix:
        return forward_merged(self.merged, x)

    def backward(self, x: DenseMatrix, upstream: DenseMatrix) -> Dict[str, DenseMatrix]:
        return {}

    def input_grad(self, x: DenseMatrix, upstream: DenseMatrix) -> DenseMatrix:
        return matmul(upstream, transpose(self.merged.W))

    def merge(self) -> MergedLayer:
        return self.merged

    def parameters(self) -> Dict[str, DenseMatrix]:
        return {}

    def with_parameters(self, params: Dict[str, DenseMatrix]) -> "MergedLinear":
        return self
