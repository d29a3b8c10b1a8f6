"""
FLOPs モデル
閉形式の理論値と、計数付きプリミティブによる実測値の比較

HUT 理論値の内訳（簡約形の経路に対応）:
    x W'                    (2d-1)Nk
    W' = gamma ⊙ m_A m_B ⊙ W0
        外積                  dk
        gamma の行展開        dk
        要素積 2 回           2dk
    row_mean / col_mean     rd + rk
beta の加算 Nk は理論値に含めず bias_add として別に報告する。
"""

import logging
from typing import Iterable, List, Union

from .adapter import forward_merged
from .hut import hut_forward_reduced, hut_init, hut_merge
from .lora import lora_forward, lora_init
from .models import FlopsReport, HutAdapterState, LoraAdapterState, MergedLayer, Method
from .tensor import DenseMatrix, Gaussian, derive_seed, flop_scope, seeded_fill

logger = logging.getLogger(__name__)

Measurable = Union[HutAdapterState, LoraAdapterState, MergedLayer]


def _require_positive(**values: int) -> None:
    for name, v in values.items():
        if v < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")


def flops_hut(N: int, d: int, k: int, r: int) -> int:
    """(2d-1)Nk + 4dk + rd + rk"""
    _require_positive(N=N, d=d, k=k, r=r)
    return (2 * d - 1) * N * k + 4 * d * k + r * d + r * k


def flops_lora(N: int, d: int, k: int, r: int) -> int:
    """(2d-1)Nk + (2r+1)dk"""
    _require_positive(N=N, d=d, k=k, r=r)
    return (2 * d - 1) * N * k + (2 * r + 1) * d * k


def flops_merged(N: int, d: int, k: int) -> int:
    """(2d-1)Nk + Nk（密行列積 + バイアス加算）"""
    _require_positive(N=N, d=d, k=k)
    return (2 * d - 1) * N * k + N * k


def delta_flops(d: int, r: int) -> int:
    """
    d = k のときの FLOPs_LoRA - FLOPs_HUT

    2rd^2 - 3d^2 - 2rd（2rd の項も省略しない）
    """
    _require_positive(d=d, r=r)
    return 2 * r * d * d - 3 * d * d - 2 * r * d


def measure_forward_flops(adapter: Measurable, x: DenseMatrix, rank: int = 0) -> FlopsReport:
    """
    新しいカウンタスコープ内で 1 回の順伝播を実行し、理論値と比較

    Args:
        adapter: HutAdapterState / LoraAdapterState / MergedLayer
        x: 入力 N×d
        rank: MergedLayer の場合にレポートへ記載する元アダプタのランク

    Returns:
        FlopsReport
    """
    N = x.rows
    with flop_scope() as counter:
        if isinstance(adapter, HutAdapterState):
            method, d, k, r = Method.HUT, adapter.d, adapter.k, adapter.rank
            hut_forward_reduced(adapter, x)
        elif isinstance(adapter, LoraAdapterState):
            method, d, k, r = Method.LORA, adapter.d, adapter.k, adapter.rank
            lora_forward(adapter, x, weight_side=True)
        elif isinstance(adapter, MergedLayer):
            method, (d, k), r = Method.MERGED, adapter.W.shape, max(rank, 1)
            forward_merged(adapter, x)
        else:
            raise TypeError(f"cannot measure FLOPs of {type(adapter).__name__}")

    bias_add = counter.by_op.get("add_row", 0)
    if method is Method.HUT:
        theoretical = flops_hut(N, d, k, r)
        measured = counter.count - bias_add
    elif method is Method.LORA:
        theoretical = flops_lora(N, d, k, r)
        measured = counter.count
    else:
        theoretical = flops_merged(N, d, k)
        measured = counter.count

    report = FlopsReport(
        method=method,
        N=N,
        d=d,
        k=k,
        r=r,
        theoretical=theoretical,
        measured=measured,
        bias_add=bias_add,
        by_op=dict(counter.by_op),
    )
    if not report.exact:
        logger.warning(f"FLOPs mismatch: {report} by_op={report.by_op}")
    else:
        logger.debug(f"Measured {report}")
    return report


def flops_table(
    batches: Iterable[int],
    dims: Iterable[int],
    ranks: Iterable[int],
    seed: int = 0,
) -> List[FlopsReport]:
    """
    (N, d, k, r) グリッド上で HUT / LoRA / MergedDense を計測

    r > min(d, k) の組み合わせはスキップする。

    Returns:
        (method, N, d, k, r) でソート済みのレポート
    """
    dims = sorted(set(dims))
    reports: List[FlopsReport] = []
    for N in sorted(set(batches)):
        for d in dims:
            for k in dims:
                W0 = seeded_fill((d, k), Gaussian(0.0, 1.0), derive_seed(seed, d, k))
                x = seeded_fill((N, d), Gaussian(0.0, 1.0), derive_seed(seed, N, d))
                for r in sorted(set(ranks)):
                    if r > min(d, k):
                        continue
                    hut = hut_init(W0, r, noise_std=0.1, seed=derive_seed(seed, r))
                    lora = lora_init(W0, r, seed=derive_seed(seed, r))
                    reports.append(measure_forward_flops(hut, x))
                    reports.append(measure_forward_flops(lora, x))
                    reports.append(measure_forward_flops(hut_merge(hut), x, rank=r))

    reports.sort(key=lambda rep: (rep.method.value, rep.N, rep.d, rep.k, rep.r))
    logger.info(f"Built FLOPs table with {len(reports)} rows")
    return reports
