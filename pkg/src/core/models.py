"""
ドメインモデル
アダプタ状態、勾配、マージ済み層、FLOPs レポートなどのデータ構造
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict

from .errors import RankError, ShapeError
from .tensor import DenseMatrix


class Method(str, Enum):
    """アダプタ種別"""

    HUT = "HUT"
    LORA = "LoRA"
    MERGED = "MergedDense"

    @classmethod
    def parse(cls, value: str) -> "Method":
        for m in cls:
            if value.lower() in (m.value.lower(), m.name.lower()):
                return m
        raise ValueError(f"unknown method: {value!r}")


def check_rank(rank: int, rows: int, cols: int, target: str = "") -> None:
    """1 <= r <= min(d, k) を検証"""
    where = f" for target {target}" if target else ""
    if rank < 1:
        raise RankError(f"rank must be >= 1{where}, got {rank}")
    if rank > min(rows, cols):
        raise RankError(f"rank {rank} exceeds min(d, k) = {min(rows, cols)}{where}")


def _expect(name: str, m: DenseMatrix, shape) -> None:
    if m.shape != tuple(shape):
        raise ShapeError(f"{name} must have shape {tuple(shape)}, got {m.shape}")


@dataclass(frozen=True)
class HutAdapterState:
    """HUT アダプタ状態（W0 は凍結、MA / MB / gamma / beta が学習対象）"""

    W0: DenseMatrix
    MA: DenseMatrix
    MB: DenseMatrix
    gamma: DenseMatrix
    beta: DenseMatrix
    rank: int

    def __post_init__(self):
        d, k = self.W0.shape
        check_rank(self.rank, d, k)
        _expect("MA", self.MA, (d, self.rank))
        _expect("MB", self.MB, (self.rank, k))
        _expect("gamma", self.gamma, (1, k))
        _expect("beta", self.beta, (1, k))

    @property
    def d(self) -> int:
        return self.W0.rows

    @property
    def k(self) -> int:
        return self.W0.cols

    @property
    def num_trainable(self) -> int:
        """d·r + r·k + 2k"""
        return self.d * self.rank + self.rank * self.k + 2 * self.k

    def trainable(self) -> Dict[str, DenseMatrix]:
        return {"MA": self.MA, "MB": self.MB, "gamma": self.gamma, "beta": self.beta}


@dataclass(frozen=True)
class HutGradients:
    """HUT 学習パラメータの勾配"""

    dMA: DenseMatrix
    dMB: DenseMatrix
    dGamma: DenseMatrix
    dBeta: DenseMatrix

    def as_dict(self) -> Dict[str, DenseMatrix]:
        return {"MA": self.dMA, "MB": self.dMB, "gamma": self.dGamma, "beta": self.dBeta}


@dataclass(frozen=True)
class LoraAdapterState:
    """LoRA アダプタ状態（W0 は凍結、WA / WB が学習対象）"""

    W0: DenseMatrix
    WA: DenseMatrix
    WB: DenseMatrix
    scale: float
    rank: int

    def __post_init__(self):
        d, k = self.W0.shape
        check_rank(self.rank, d, k)
        if self.scale < 1:
            raise ValueError(f"LoRA scale s must be >= 1, got {self.scale}")
        _expect("WA", self.WA, (d, self.rank))
        _expect("WB", self.WB, (self.rank, k))

    @property
    def d(self) -> int:
        return self.W0.rows

    @property
    def k(self) -> int:
        return self.W0.cols

    @property
    def num_trainable(self) -> int:
        """d·r + r·k"""
        return self.d * self.rank + self.rank * self.k

    def trainable(self) -> Dict[str, DenseMatrix]:
        return {"WA": self.WA, "WB": self.WB}


@dataclass(frozen=True)
class LoraGradients:
    """LoRA 学習パラメータの勾配"""

    dWA: DenseMatrix
    dWB: DenseMatrix

    def as_dict(self) -> Dict[str, DenseMatrix]:
        return {"WA": self.dWA, "WB": self.dWB}


@dataclass(frozen=True)
class MergedLayer:
    """推論用に再パラメータ化した層 h = x W + bias"""

    W: DenseMatrix
    bias: DenseMatrix

    def __post_init__(self):
        _expect("bias", self.bias, (1, self.W.cols))


@dataclass
class FlopsReport:
    """1 回の順伝播の FLOPs（理論値と計測値）"""

    method: Method
    N: int
    d: int
    k: int
    r: int
    theoretical: int
    measured: int
    bias_add: int = 0  # beta / bias 加算分（HUT の理論値には含めない）
    by_op: Dict[str, int] = field(default_factory=dict)

    @property
    def exact(self) -> bool:
        return self.theoretical == self.measured

    def __str__(self):
        return (
            f"FlopsReport({self.method.value}, N={self.N}, d={self.d}, k={self.k}, r={self.r}, "
            f"theoretical={self.theoretical}, measured={self.measured}, bias_add={self.bias_add})"
        )
