"""
学習まわりのデータ構造
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from ..core.models import Method
from .block import ToyBlock, WeightTarget, targets_label


@dataclass(frozen=True)
class HyperParams:
    """ファインチューニングのハイパーパラメータ"""

    lr: float = 0.01
    weight_decay: float = 0.0
    steps: int = 500
    batch_size: int = 0  # 0 = フルバッチ
    noise_std: float = 0.01
    lora_scale: float = 1.0
    warmup_ratio: float = 0.06
    lr_schedule: str = "linear"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainRun:
    """1 回の合成ファインチューニングの結果"""

    method: Method
    targets: Tuple[WeightTarget, ...]
    rank: int
    seed: int
    hyper: HyperParams
    loss_trace: List[float] = field(default_factory=list)
    lr_trace: List[float] = field(default_factory=list)
    initial_loss: float = 0.0
    final_loss: float = 0.0
    eval_loss: float = 0.0
    eval_metric: float = 0.0
    num_trainable: int = 0
    block: Optional[ToyBlock] = field(default=None, repr=False)

    @property
    def loss_ratio(self) -> float:
        return self.final_loss / self.initial_loss if self.initial_loss else 0.0

    def __str__(self):
        return (
            f"TrainRun({self.method.value}, targets={targets_label(self.targets)}, r={self.rank}, "
            f"steps={len(self.loss_trace)}, loss {self.initial_loss:.6g} -> {self.final_loss:.6g}, "
            f"eval_metric={self.eval_metric:.6g}, params={self.num_trainable})"
        )


@dataclass
class SweepRow:
    """スイープ表の 1 行"""

    index: int
    targets: Tuple[WeightTarget, ...]
    rank: int
    reference_rank: int
    num_trainable: int
    initial_loss: float
    final_loss: float
    eval_metric: float

    @property
    def label(self) -> str:
        return targets_label(self.targets)
