"""
密行列エンジン
HUT / LoRA の式に必要なプリミティブ演算と FLOPs カウンタ

計数規約:
    乗算 1 回 = 1、加算 1 回 = 1。長さ r の内積は 2r-1。
    長さ r の平均は r（加算 r-1 回 + 除算 1 回）。
    ブロードキャストによる展開は展開後の要素 1 個につき 1。
"""

import contextvars
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CounterScopeError, ShapeError

logger = logging.getLogger(__name__)

SeedLike = Union[int, Sequence[int]]


class DenseMatrix:
    """2次元実数行列（float64、行優先、生成後は不変）"""

    __slots__ = ("_data",)

    def __init__(self, data) -> None:
        arr = np.array(data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"DenseMatrix requires a non-empty 2-D array, got shape {arr.shape}")
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "DenseMatrix":
        # 演算結果の新規配列はコピーせずに包む
        obj = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        obj._data = arr
        return obj

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "DenseMatrix":
        return cls._wrap(np.zeros((rows, cols)))

    @classmethod
    def ones(cls, rows: int, cols: int) -> "DenseMatrix":
        return cls._wrap(np.ones((rows, cols)))

    @classmethod
    def identity(cls, n: int) -> "DenseMatrix":
        return cls._wrap(np.eye(n))

    @property
    def rows(self) -> int:
        return self._data.shape[0]

    @property
    def cols(self) -> int:
        return self._data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self._data.shape

    @property
    def data(self) -> np.ndarray:
        """読み取り専用の ndarray ビュー"""
        return self._data

    def tolist(self):
        return self._data.tolist()

    def __eq__(self, other) -> bool:
        if not isinstance(other, DenseMatrix):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._data, other._data))

    def __hash__(self):
        return hash((self.shape, self._data.tobytes()))

    def __repr__(self) -> str:
        return f"DenseMatrix({self.rows}x{self.cols})"


@dataclass
class FlopCounter:
    """浮動小数点演算回数の累積カウンタ"""

    count: int = 0
    by_op: Dict[str, int] = field(default_factory=dict)

    def add(self, op: str, flops: int) -> None:
        self.count += flops
        self.by_op[op] = self.by_op.get(op, 0) + flops


_ACTIVE_COUNTER: contextvars.ContextVar[Optional[FlopCounter]] = contextvars.ContextVar(
    "hut_active_flop_counter", default=None
)


@contextmanager
def flop_scope() -> Iterator[FlopCounter]:
    """
    FLOPs 計測スコープ（スレッドごとに独立、入れ子不可）

    Yields:
        このスコープ専用のカウンタ
    """
    if _ACTIVE_COUNTER.get() is not None:
        raise CounterScopeError("a FLOP counter scope is already active")
    counter = FlopCounter()
    token = _ACTIVE_COUNTER.set(counter)
    try:
        yield counter
    finally:
        _ACTIVE_COUNTER.reset(token)
        logger.debug(f"FLOP scope closed: {counter.count} ops {counter.by_op}")


def current_counter() -> Optional[FlopCounter]:
    return _ACTIVE_COUNTER.get()


def _charge(op: str, flops: int) -> None:
    counter = _ACTIVE_COUNTER.get()
    if counter is not None:
        counter.add(op, flops)


def _same_shape(a: DenseMatrix, b: DenseMatrix, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# 計数対象のプリミティブ
# ---------------------------------------------------------------------------


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """
    行列積 (d×r)(r×k) → d×k、コスト (2r-1)dk

    Args:
        a: 左オペランド d×r
        b: 右オペランド r×k

    Returns:
        積 d×k
    """
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    d, r = a.shape
    k = b.cols
    _charge("matmul", (2 * r - 1) * d * k)
    return DenseMatrix._wrap(a.data @ b.data)


def hadamard(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """要素積 A ⊙ B、コスト dk"""
    _same_shape(a, b, "hadamard")
    _charge("hadamard", a.rows * a.cols)
    return DenseMatrix._wrap(a.data * b.data)


def row_mean(m: DenseMatrix) -> DenseMatrix:
    """各行の平均 d×r → d×1、コスト dr"""
    d, r = m.shape
    _charge("row_mean", d * r)
    return DenseMatrix._wrap(m.data.sum(axis=1, keepdims=True) / r)


def col_mean(m: DenseMatrix) -> DenseMatrix:
    """各列の平均 r×k → 1×k、コスト rk"""
    r, k = m.shape
    _charge("col_mean", r * k)
    return DenseMatrix._wrap(m.data.sum(axis=0, keepdims=True) / r)


def outer(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """列ベクトル d×1 と行ベクトル 1×k の外積、コスト dk"""
    if a.cols != 1 or b.rows != 1:
        raise ShapeError(f"outer: expected column x row vector, got {a.shape} x {b.shape}")
    _charge("outer", a.rows * b.cols)
    return DenseMatrix._wrap(a.data * b.data)


def scale_shift(y: DenseMatrix, gamma: DenseMatrix, beta: DenseMatrix) -> DenseMatrix:
    """
    列ごとのスケール・シフト gamma[j]·Y[n,j] + beta[j]、コスト 2Nk

    Args:
        y: 入力 N×k
        gamma: スケール 1×k
        beta: シフト 1×k

    Returns:
        N×k
    """
    for name, v in (("gamma", gamma), ("beta", beta)):
        if v.shape != (1, y.cols):
            raise ShapeError(f"scale_shift: {name} must be (1, {y.cols}), got {v.shape}")
    _charge("scale_shift", 2 * y.rows * y.cols)
    return DenseMatrix._wrap(y.data * gamma.data + beta.data)


def broadcast_rows(v: DenseMatrix, rows: int) -> DenseMatrix:
    """1×k 行ベクトルを rows 行に展開、コスト rows·k"""
    if v.rows != 1:
        raise ShapeError(f"broadcast_rows: expected a row vector, got {v.shape}")
    _charge("broadcast_rows", rows * v.cols)
    return DenseMatrix._wrap(np.repeat(v.data, rows, axis=0))


def add_row(y: DenseMatrix, bias: DenseMatrix) -> DenseMatrix:
    """バイアス加算 Y + bias（行方向ブロードキャスト）、コスト Nk"""
    if bias.shape != (1, y.cols):
        raise ShapeError(f"add_row: bias must be (1, {y.cols}), got {bias.shape}")
    _charge("add_row", y.rows * y.cols)
    return DenseMatrix._wrap(y.data + bias.data)


def add(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    _same_shape(a, b, "add")
    _charge("add", a.rows * a.cols)
    return DenseMatrix._wrap(a.data + b.data)


def subtract(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    _same_shape(a, b, "subtract")
    _charge("subtract", a.rows * a.cols)
    return DenseMatrix._wrap(a.data - b.data)


def scale(a: DenseMatrix, s: float) -> DenseMatrix:
    _charge("scale", a.rows * a.cols)
    return DenseMatrix._wrap(a.data * float(s))


def col_sum(m: DenseMatrix) -> DenseMatrix:
    """列和 N×k → 1×k、コスト (N-1)k"""
    _charge("col_sum", (m.rows - 1) * m.cols)
    return DenseMatrix._wrap(m.data.sum(axis=0, keepdims=True))


def transpose(m: DenseMatrix) -> DenseMatrix:
    return DenseMatrix._wrap(m.data.T.copy())


# ---------------------------------------------------------------------------
# 初期化
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    """定数分布"""

    value: float


@dataclass(frozen=True)
class Gaussian:
    """正規分布"""

    mean: float
    std: float


Distribution = Union[Constant, Gaussian]


def seeded_fill(shape: Tuple[int, int], distribution: Distribution, seed: SeedLike) -> DenseMatrix:
    """
    シード固定で行列を生成（カウンタ対象外）

    Args:
        shape: (rows, cols)
        distribution: Constant または Gaussian
        seed: 整数または整数列

    Returns:
        同じ (shape, distribution, seed) に対して常に同一の行列
    """
    if isinstance(distribution, Constant):
        return DenseMatrix._wrap(np.full(shape, float(distribution.value)))
    if distribution.std < 0:
        raise ValueError(f"std must be non-negative, got {distribution.std}")
    rng = np.random.default_rng(seed)
    return DenseMatrix._wrap(rng.normal(distribution.mean, distribution.std, size=shape))


def derive_seed(seed: SeedLike, *path: int) -> Tuple[int, ...]:
    """親シードから子シード列を作る"""
    base = (seed,) if isinstance(seed, (int, np.integer)) else tuple(seed)
    return tuple(int(s) for s in base) + tuple(path)


# ---------------------------------------------------------------------------
# 誤差指標
# ---------------------------------------------------------------------------


def relative_error(a: DenseMatrix, b: DenseMatrix) -> float:
    """||a-b||_F / ||b||_F（両方ゼロなら 0）"""
    _same_shape(a, b, "relative_error")
    diff = float(np.linalg.norm(a.data - b.data))
    ref = float(np.linalg.norm(b.data))
    if ref == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return diff / ref


def max_entry_error(a: np.ndarray, b: np.ndarray, floor: float = 0.0, scale_floor: float = 0.0) -> float:
    """
    要素ごとの相対誤差の最大値

    |a-b| / max(|a|, |b|, floor, scale_floor * max|b|)。両方ゼロの要素は誤差 0。

    Args:
        a: 比較対象
        b: 基準値
        floor: 分母の絶対下限
        scale_floor: 分母の下限を基準テンソルの最大絶対値に対する比で与える
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not a.size:
        return 0.0
    diff = np.abs(a - b)
    lower = max(floor, scale_floor * float(np.max(np.abs(b))))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), lower)
    ratio = np.divide(diff, denom, out=np.zeros_like(diff), where=denom > 0)
    return float(np.max(ratio))
