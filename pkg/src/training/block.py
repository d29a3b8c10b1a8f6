"""
トイ Transformer ブロック
シングルヘッド注意 + FFN。6 種類の重み {Wq, Wk, Wv, Wo, Wd, Wu} の任意の部分集合にアダプタを付与できる

    Q, K, V = x Wq, x Wk, x Wv
    H1      = x + softmax(Q Kᵀ / √d) V Wo
    out     = H1 + silu(H1 Wd) Wu,   silu(u) = u · σ(u)
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Tuple

import numpy as np

from ..core.adapter import AdapterLayer, FrozenLayer, MergedLinear
from ..core.errors import ShapeError
from ..core.hut import HutLayer
from ..core.lora import LoraLayer
from ..core.models import Method, check_rank
from ..core.tensor import DenseMatrix, Gaussian, SeedLike, derive_seed, seeded_fill

logger = logging.getLogger(__name__)


class WeightTarget(str, Enum):
    """アダプタ適用対象の重み"""

    WQ = "Wq"
    WK = "Wk"
    WV = "Wv"
    WO = "Wo"
    WD = "Wd"
    WU = "Wu"

    @classmethod
    def parse(cls, value: str) -> "WeightTarget":
        for t in cls:
            if value.strip().lower() == t.value.lower():
                return t
        raise ValueError(f"unknown weight target: {value!r} (expected one of {[t.value for t in cls]})")

    @classmethod
    def parse_list(cls, values) -> Tuple["WeightTarget", ...]:
        """'Wq,Wv' またはリストから、定義順に並べたタプルを返す"""
        if isinstance(values, str):
            values = [v for v in values.split(",") if v.strip()]
        parsed = {cls.parse(v) if not isinstance(v, cls) else v for v in values}
        return tuple(t for t in cls if t in parsed)


def targets_label(targets: Iterable[WeightTarget]) -> str:
    return "+".join(t.value for t in targets)


def sigmoid(u: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * u))


def silu(u: np.ndarray) -> np.ndarray:
    return u * sigmoid(u)


def silu_grad(u: np.ndarray) -> np.ndarray:
    s = sigmoid(u)
    return s * (1.0 + u * (1.0 - s))


def softmax(s: np.ndarray) -> np.ndarray:
    shifted = s - s.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class BlockCache:
    """逆伝播用の中間値"""

    x: DenseMatrix
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    p: np.ndarray
    a: DenseMatrix
    h1: DenseMatrix
    u: np.ndarray
    z: DenseMatrix
    batch: int
    length: int


@dataclass
class ToyBlock:
    """凍結された 6 枚の重みと、重みごとに高々 1 つのアダプタ"""

    model_dim: int
    ffn_dim: int
    weights: Dict[WeightTarget, DenseMatrix]
    adapters: Dict[WeightTarget, AdapterLayer] = field(default_factory=dict)

    def __post_init__(self):
        d, f = self.model_dim, self.ffn_dim
        expected = {
            WeightTarget.WQ: (d, d),
            WeightTarget.WK: (d, d),
            WeightTarget.WV: (d, d),
            WeightTarget.WO: (d, d),
            WeightTarget.WD: (d, f),
            WeightTarget.WU: (f, d),
        }
        for target, shape in expected.items():
            if target not in self.weights:
                raise ShapeError(f"block is missing weight {target.value}")
            if self.weights[target].shape != shape:
                raise ShapeError(f"{target.value} must be {shape}, got {self.weights[target].shape}")
        for target, layer in self.adapters.items():
            if layer.base_weight.shape != expected[target]:
                raise ShapeError(f"adapter on {target.value} has base shape {layer.base_weight.shape}")

    @classmethod
    def random(cls, model_dim: int, ffn_dim: int, seed: SeedLike) -> "ToyBlock":
        """N(0, 1/fan_in) で初期化したブロック"""
        weights = {}
        for i, target in enumerate(WeightTarget):
            rows = ffn_dim if target is WeightTarget.WU else model_dim
            cols = ffn_dim if target is WeightTarget.WD else model_dim
            weights[target] = seeded_fill(
                (rows, cols), Gaussian(0.0, 1.0 / np.sqrt(rows)), derive_seed(seed, i)
            )
        return cls(model_dim=model_dim, ffn_dim=ffn_dim, weights=weights)

    # ------------------------------------------------------------------
    # アダプタ管理
    # ------------------------------------------------------------------

    def layer(self, target: WeightTarget) -> AdapterLayer:
        return self.adapters.get(target) or FrozenLayer(self.weights[target])

    def attach(
        self,
        targets: Iterable[WeightTarget],
        method: Method,
        rank: int,
        noise_std: float = 0.0,
        lora_scale: float = 1.0,
        seed: SeedLike = 0,
    ) -> "ToyBlock":
        """
        指定した重みにアダプタを付けた新しいブロックを返す（元のブロックは変更しない）

        Args:
            targets: 対象の重み
            method: HUT または LoRA
            rank: ランク r
            noise_std: HUT 初期化ノイズ
            lora_scale: LoRA のスケール s
            seed: 乱数シード

        Returns:
            アダプタ付きブロック
        """
        targets = WeightTarget.parse_list(list(targets))
        if not targets:
            raise ValueError("at least one weight target is required")
        for target in targets:
            if target in self.adapters:
                raise ValueError(f"target {target.value} already has an adapter")
            check_rank(rank, *self.weights[target].shape, target=target.value)

        adapters = dict(self.adapters)
        for target in targets:
            W0 = self.weights[target]
            index = list(WeightTarget).index(target)
            if method is Method.HUT:
                adapters[target] = HutLayer.create(W0, rank, noise_std, derive_seed(seed, index))
            elif method is Method.LORA:
                adapters[target] = LoraLayer.create(W0, rank, lora_scale, derive_seed(seed, index))
            else:
                raise ValueError(f"cannot attach adapter of kind {method.value}")
        logger.debug(f"Attached {method.value} r={rank} to {targets_label(targets)}")
        return replace(self, adapters=adapters)

    def detach(self) -> "ToyBlock":
        """アダプタを外した凍結ブロック"""
        return replace(self, adapters={})

    def merged(self) -> "ToyBlock":
        """全アダプタを再パラメータ化した推論用ブロック"""
        merged = {t: MergedLinear(layer.merge()) for t, layer in self.adapters.items()}
        return replace(self, adapters=merged)

    def trainable_parameters(self) -> Dict[str, DenseMatrix]:
        """'Wq.MA' 形式の名前 → パラメータ"""
        params = {}
        for target in WeightTarget:
            if target in self.adapters:
                for name, value in self.adapters[target].parameters().items():
                    params[f"{target.value}.{name}"] = value
        return params

    def with_parameters(self, params: Dict[str, DenseMatrix]) -> "ToyBlock":
        grouped: Dict[WeightTarget, Dict[str, DenseMatrix]] = {}
        for key, value in params.items():
            target, name = key.split(".", 1)
            grouped.setdefault(WeightTarget.parse(target), {})[name] = value
        adapters = dict(self.adapters)
        for target, values in grouped.items():
            if target not in adapters:
                raise KeyError(f"no adapter attached to {target.value}")
            adapters[target] = adapters[target].with_parameters(values)
        return replace(self, adapters=adapters)

    @property
    def num_trainable(self) -> int:
        return sum(layer.num_trainable for layer in self.adapters.values())

    # ------------------------------------------------------------------
    # 順伝播・逆伝播
    # ------------------------------------------------------------------

    def forward_batch(self, x: np.ndarray) -> Tuple[np.ndarray, BlockCache]:
        """
        バッチ順伝播

        Args:
            x: 入力 (B, L, d)

        Returns:
            (出力 (B, L, d), 逆伝播用キャッシュ)
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.model_dim:
            raise ShapeError(f"block input must be (B, L, {self.model_dim}), got {x.shape}")
        B, L, d = x.shape
        flat = DenseMatrix(x.reshape(B * L, d))

        q = self.layer(WeightTarget.WQ).forward(flat).data.reshape(B, L, d)
        k = self.layer(WeightTarget.WK).forward(flat).data.reshape(B, L, d)
        v = self.layer(WeightTarget.WV).forward(flat).data.reshape(B, L, d)

        p = softmax(q @ k.transpose(0, 2, 1) / np.sqrt(d))
        a = DenseMatrix._wrap((p @ v).reshape(B * L, d))
        o = self.layer(WeightTarget.WO).forward(a)
        h1 = DenseMatrix._wrap(flat.data + o.data)

        u = self.layer(WeightTarget.WD).forward(h1).data
        z = DenseMatrix._wrap(silu(u))
        f = self.layer(WeightTarget.WU).forward(z)
        out = (h1.data + f.data).reshape(B, L, d)

        cache = BlockCache(x=flat, q=q, k=k, v=v, p=p, a=a, h1=h1, u=u, z=z, batch=B, length=L)
        return out, cache

    def backward_batch(self, cache: BlockCache, d_out: np.ndarray) -> Dict[str, DenseMatrix]:
        """
        出力勾配からアダプタパラメータの勾配を計算

        Args:
            cache: forward_batch のキャッシュ
            d_out: dL/dout (B, L, d)

        Returns:
            'Wq.MA' 形式の名前 → 勾配
        """
        B, L, d = cache.batch, cache.length, self.model_dim
        grads: Dict[str, DenseMatrix] = {}

        def collect(target: WeightTarget, x: DenseMatrix, upstream: DenseMatrix) -> None:
            if target in self.adapters:
                for name, g in self.adapters[target].backward(x, upstream).items():
                    grads[f"{target.value}.{name}"] = g

        g_out = DenseMatrix(np.asarray(d_out, dtype=np.float64).reshape(B * L, d))

        # FFN
        collect(WeightTarget.WU, cache.z, g_out)
        d_z = self.layer(WeightTarget.WU).input_grad(cache.z, g_out)
        d_u = DenseMatrix._wrap(d_z.data * silu_grad(cache.u))
        collect(WeightTarget.WD, cache.h1, d_u)
        d_h1 = DenseMatrix._wrap(g_out.data + self.layer(WeightTarget.WD).input_grad(cache.h1, d_u).data)

        # 注意
        collect(WeightTarget.WO, cache.a, d_h1)
        d_a = self.layer(WeightTarget.WO).input_grad(cache.a, d_h1).data.reshape(B, L, d)
        d_p = d_a @ cache.v.transpose(0, 2, 1)
        d_v = cache.p.transpose(0, 2, 1) @ d_a
        d_s = cache.p * (d_p - (d_p * cache.p).sum(axis=-1, keepdims=True)) / np.sqrt(d)
        d_q = d_s @ cache.k
        d_k = d_s.transpose(0, 2, 1) @ cache.q

        collect(WeightTarget.WQ, cache.x, DenseMatrix._wrap(d_q.reshape(B * L, d)))
        collect(WeightTarget.WK, cache.x, DenseMatrix._wrap(d_k.reshape(B * L, d)))
        collect(WeightTarget.WV, cache.x, DenseMatrix._wrap(d_v.reshape(B * L, d)))
        return grads

    def attention_weights(self, x: DenseMatrix) -> np.ndarray:
        """1 系列 (L×d) の注意重み L×L"""
        _, cache = self.forward_batch(x.data[np.newaxis])
        return cache.p[0]


def block_forward(block: ToyBlock, x: DenseMatrix) -> DenseMatrix:
    """
    1 系列の順伝播

    Args:
        block: ブロック
        x: 入力 L×d

    Returns:
        出力 L×d
    """
    if x.cols != block.model_dim:
        raise ShapeError(f"block_forward: input has {x.cols} columns, model_dim is {block.model_dim}")
    out, _ = block.forward_batch(x.data[np.newaxis])
    return DenseMatrix._wrap(out[0])


def adapted_targets(block: ToyBlock) -> List[WeightTarget]:
    return [t for t in WeightTarget if t in block.adapters]


def frozen_weights_snapshot(block: ToyBlock) -> Dict[WeightTarget, bytes]:
    """凍結重みのバイト列スナップショット（不変性の検証用）"""
    return {t: w.data.tobytes() for t, w in block.weights.items()}
