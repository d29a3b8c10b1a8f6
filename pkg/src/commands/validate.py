"""
validate サブコマンド
マージ等価性・勾配・FLOPs 式・損益分岐の符号を検証し、合否表を出力する
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Tuple

import numpy as np

from ..core import flops as flops_model
from ..core.adapter import forward_merged
from ..core.gradcheck import check_layer_gradients, gradient_errors
from ..core.hut import HutLayer, hut_forward, hut_init, hut_merge
from ..core.lora import LoraLayer, lora_forward, lora_init, lora_merge
from ..core.models import HutAdapterState, LoraAdapterState, Method
from ..core.tensor import DenseMatrix, derive_seed, relative_error
from ..storage.config import TrainConfig
from ..storage.reports import DELTA_HEADER, VALIDATE_HEADER, write_csv
from ..training.block import ToyBlock, WeightTarget

logger = logging.getLogger(__name__)

GREEN = "\033[92m"
RED = "\033[91m"
RESET = "\033[0m"

MERGE_INSTANCES = 100
MERGE_TOLERANCE = 1e-10
GRAD_INSTANCES = 20
GRAD_TOLERANCE = 1e-5
IDENTITY_TOLERANCE = 1e-12
BLOCK_MERGE_TOLERANCE = 1e-9
DELTA_RANKS = (1, 2, 4, 8)
DELTA_DIMS = (4, 8, 16, 32, 64, 128, 256, 512, 1024)


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str


def _random_hut(rng: np.random.Generator) -> Tuple[HutAdapterState, DenseMatrix]:
    d, k = int(rng.integers(3, 17)), int(rng.integers(3, 17))
    r = int(rng.integers(1, min(4, d, k) + 1))
    n = int(rng.integers(1, 9))
    state = HutAdapterState(
        W0=DenseMatrix(rng.normal(size=(d, k))),
        MA=DenseMatrix(1.0 + 0.5 * rng.normal(size=(d, r))),
        MB=DenseMatrix(1.0 + 0.5 * rng.normal(size=(r, k))),
        gamma=DenseMatrix(1.0 + 0.5 * rng.normal(size=(1, k))),
        beta=DenseMatrix(rng.normal(size=(1, k))),
        rank=r,
    )
    return state, DenseMatrix(rng.normal(size=(n, d)))


def _random_lora(rng: np.random.Generator) -> Tuple[LoraAdapterState, DenseMatrix]:
    d, k = int(rng.integers(3, 17)), int(rng.integers(3, 17))
    r = int(rng.integers(1, min(4, d, k) + 1))
    n = int(rng.integers(1, 9))
    state = LoraAdapterState(
        W0=DenseMatrix(rng.normal(size=(d, k))),
        WA=DenseMatrix(rng.normal(size=(d, r))),
        WB=DenseMatrix(rng.normal(size=(r, k))),
        scale=float(rng.uniform(1.0, 4.0)),
        rank=r,
    )
    return state, DenseMatrix(rng.normal(size=(n, d)))


def _tokens(batch: np.ndarray) -> DenseMatrix:
    """(B, T, d) の出力をトークン行の DenseMatrix に並べ直す"""
    return DenseMatrix(batch.reshape(-1, batch.shape[-1]))


# ----------------------------------------------------------------------
# 検証項目
# ----------------------------------------------------------------------


def check_merge_equivalence(config: TrainConfig) -> Tuple[bool, str]:
    """学習形の順伝播とマージ後の順伝播が一致する"""
    rng = np.random.default_rng(derive_seed(config.seed, 100))
    worst = 0.0
    for _ in range(MERGE_INSTANCES):
        state, x = _random_hut(rng)
        worst = max(worst, relative_error(forward_merged(hut_merge(state), x), hut_forward(state, x)))
        lora, x = _random_lora(rng)
        worst = max(worst, relative_error(forward_merged(lora_merge(lora), x), lora_forward(lora, x)))
    return worst <= MERGE_TOLERANCE, f"max relative error {worst:.3e} over {MERGE_INSTANCES} HUT + {MERGE_INSTANCES} LoRA states"


def check_hut_gradients(config: TrainConfig) -> Tuple[bool, str]:
    rng = np.random.default_rng(derive_seed(config.seed, 101))
    worst = 0.0
    for _ in range(GRAD_INSTANCES):
        state, x = _random_hut(rng)
        upstream = DenseMatrix(rng.normal(size=(x.rows, state.k)))
        errors = check_layer_gradients(HutLayer(state), x, upstream)
        worst = max(worst, max(errors.values()))
    return worst <= GRAD_TOLERANCE, f"max entry error {worst:.3e} over {GRAD_INSTANCES} instances"


def check_lora_gradients(config: TrainConfig) -> Tuple[bool, str]:
    rng = np.random.default_rng(derive_seed(config.seed, 102))
    worst = 0.0
    for _ in range(GRAD_INSTANCES):
        state, x = _random_lora(rng)
        upstream = DenseMatrix(rng.normal(size=(x.rows, state.k)))
        errors = check_layer_gradients(LoraLayer(state), x, upstream)
        worst = max(worst, max(errors.values()))
    return worst <= GRAD_TOLERANCE, f"max entry error {worst:.3e} over {GRAD_INSTANCES} instances"


def check_block_gradients(config: TrainConfig) -> Tuple[bool, str]:
    """全 6 重みに HUT / LoRA を付けたブロックの逆伝播"""
    rng = np.random.default_rng(derive_seed(config.seed, 103))
    base = ToyBlock.random(4, 8, derive_seed(config.seed, 104))
    x = rng.normal(size=(2, 3, 4))
    g = rng.normal(size=(2, 3, 4))
    worst = 0.0
    for method in (Method.HUT, Method.LORA):
        block = base.attach(list(WeightTarget), method, 2, noise_std=0.3, seed=derive_seed(config.seed, 105))
        # LoRA の W_B = 0 では勾配が片側しか流れないので値を揺らす
        params = {
            name: DenseMatrix(value.data + 0.3 * rng.normal(size=value.shape))
            for name, value in block.trainable_parameters().items()
        }
        block = block.with_parameters(params)
        _, cache = block.forward_batch(x)
        analytic = block.backward_batch(cache, g)

        def loss_fn(p, block=block):
            out, _ = block.with_parameters(p).forward_batch(x)
            return float(np.sum(g * out))

        errors = gradient_errors(analytic, loss_fn, params)
        worst = max(worst, max(errors.values()))
    return worst <= GRAD_TOLERANCE, f"max entry error {worst:.3e} (HUT and LoRA on all six weights)"


def check_flops_exactness(config: TrainConfig) -> Tuple[bool, str]:
    """計測値が閉形式と一致し、d=k=4, r=2 で HUT と LoRA が 108 で並ぶ"""
    reports = flops_model.flops_table(config.flops_batch, config.flops_dims, config.flops_ranks, seed=config.seed)
    bad = [r for r in reports if not r.exact]
    configs = len({(r.N, r.d, r.k, r.r) for r in reports})

    W0 = DenseMatrix(np.ones((4, 4)))
    x = DenseMatrix(np.ones((1, 4)))
    tie = (
        flops_model.measure_forward_flops(hut_init(W0, 2), x).measured,
        flops_model.measure_forward_flops(lora_init(W0, 2), x).measured,
        flops_model.flops_hut(1, 4, 4, 2),
        flops_model.flops_lora(1, 4, 4, 2),
    )
    tie_ok = tie == (108, 108, 108, 108)

    detail = f"{configs} configurations, {len(reports) - len(bad)}/{len(reports)} rows exact"
    if bad:
        first = bad[0]
        detail += f"; first mismatch {first.method.value} N={first.N} d={first.d} k={first.k} r={first.r}: {first.measured} != {first.theoretical}"
    if not tie_ok:
        detail += f"; d=k=4 r=2 tie broken: {tie}"
    return not bad and tie_ok, detail


def check_crossover_sign(config: TrainConfig) -> Tuple[bool, str]:
    """r >= 2 では LoRA の FLOPs が HUT を上回り、d=4, r=1 では下回る"""
    failures = []
    checked = 0
    for d in range(8, 1025):
        for r in range(2, d // 4 + 1):
            checked += 1
            if flops_model.delta_flops(d, r) <= 0:
                failures.append((d, r))
    low = flops_model.delta_flops(4, 1)
    ok = not failures and low < 0
    detail = f"{checked} (d, r) pairs positive, delta_flops(4, 1) = {low}"
    if failures:
        detail += f"; non-positive at {failures[:3]}"
    return ok, detail


def check_identity_at_init(config: TrainConfig) -> Tuple[bool, str]:
    """ゼロノイズ初期化でブロック出力が不変、マージ後も一致する"""
    block = ToyBlock.random(8, 32, derive_seed(config.seed, 106))
    x = np.random.default_rng(derive_seed(config.seed, 107)).normal(size=(2, 4, 8))
    frozen, _ = block.forward_batch(x)

    worst_identity = 0.0
    worst_merge = 0.0
    for method in (Method.HUT, Method.LORA):
        adapted = block.attach(list(WeightTarget), method, 2, noise_std=0.0, seed=config.seed)
        out, _ = adapted.forward_batch(x)
        worst_identity = max(worst_identity, relative_error(_tokens(out), _tokens(frozen)))

        trained = block.attach(list(WeightTarget), method, 2, noise_std=0.2, seed=config.seed)
        rng = np.random.default_rng(derive_seed(config.seed, 108))
        trained = trained.with_parameters({
            name: DenseMatrix(value.data + 0.1 * rng.normal(size=value.shape))
            for name, value in trained.trainable_parameters().items()
        })
        out_train, _ = trained.forward_batch(x)
        out_merged, _ = trained.merged().forward_batch(x)
        worst_merge = max(worst_merge, relative_error(_tokens(out_merged), _tokens(out_train)))

    ok = worst_identity <= IDENTITY_TOLERANCE and worst_merge <= BLOCK_MERGE_TOLERANCE
    return ok, f"identity error {worst_identity:.3e}, merged block error {worst_merge:.3e}"


PROPERTIES: List[Tuple[str, Callable[[TrainConfig], Tuple[bool, str]]]] = [
    ("merge_equivalence", check_merge_equivalence),
    ("hut_gradients", check_hut_gradients),
    ("lora_gradients", check_lora_gradients),
    ("block_gradients", check_block_gradients),
    ("flops_exactness", check_flops_exactness),
    ("crossover_sign", check_crossover_sign),
    ("identity_at_init", check_identity_at_init),
]


def run_properties(config: TrainConfig) -> List[PropertyResult]:
    results = []
    for name, fn in PROPERTIES:
        try:
            passed, detail = fn(config)
        except Exception as e:
            logger.exception(f"Property {name} raised: {e}")
            passed, detail = False, f"raised {type(e).__name__}: {e}"
        results.append(PropertyResult(name=name, passed=bool(passed), detail=detail))
    return results


def delta_flops_rows(dims=DELTA_DIMS, ranks=DELTA_RANKS) -> List[dict]:
    rows = []
    for d in dims:
        for r in ranks:
            if r > d:
                continue
            value = flops_model.delta_flops(d, r)
            sign = "+" if value > 0 else ("-" if value < 0 else "0")
            rows.append({"d": d, "r": r, "delta_flops": value, "sign": sign})
    return rows


def cmd_validate(config: TrainConfig, out_dir: Path) -> int:
    """
    検証スイートを実行

    Args:
        config: 設定
        out_dir: 出力ディレクトリ

    Returns:
        終了コード（全項目合格で 0）
    """
    print("=" * 60)
    print("hut-peft 検証スイート")
    print("=" * 60)

    results = run_properties(config)
    for i, result in enumerate(results, 1):
        mark = f"{GREEN}✓{RESET}" if result.passed else f"{RED}✗{RESET}"
        print(f"{i}. {mark} {result.name}: {result.detail}")
        log = logger.info if result.passed else logger.error
        log(f"{result.name}: {'PASS' if result.passed else 'FAIL'} ({result.detail})")

    delta_rows = delta_flops_rows()
    print()
    print("delta_flops = FLOPs_LoRA - FLOPs_HUT (d = k)")
    for row in delta_rows:
        print(f"   d={row['d']:<5} r={row['r']:<2} {row['sign']} {row['delta_flops']}")

    write_csv(
        out_dir / "validate.csv",
        VALIDATE_HEADER,
        ({"property": r.name, "passed": "true" if r.passed else "false", "detail": r.detail} for r in results),
    )
    write_csv(out_dir / "delta_flops.csv", DELTA_HEADER, delta_rows)

    failed = [r.name for r in results if not r.passed]
    print("=" * 60)
    if failed:
        print(f"{RED}✗ 失敗した項目: {', '.join(failed)}{RESET}")
        logger.error(f"Validation failed: {', '.join(failed)}")
        return 1
    print(f"{GREEN}✓ 全項目合格{RESET}")
    logger.info("All properties passed")
    return 0
