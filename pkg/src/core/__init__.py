"""コア: 密行列エンジン、アダプタ、FLOPs モデル"""

from .adapter import AdapterLayer, FrozenLayer, MergedLinear, forward_merged
from .errors import (
    CheckpointError,
    ConfigError,
    CounterScopeError,
    HutError,
    RankError,
    ShapeError,
)
from .flops import (
    delta_flops,
    flops_hut,
    flops_lora,
    flops_merged,
    flops_table,
    measure_forward_flops,
)
from .gradcheck import check_layer_gradients, finite_diff, gradient_errors
from .hut import (
    HutLayer,
    compute_w_new,
    hut_backward,
    hut_forward,
    hut_forward_reduced,
    hut_init,
    hut_merge,
)
from .lora import LoraLayer, lora_backward, lora_forward, lora_init, lora_merge
from .models import (
    FlopsReport,
    HutAdapterState,
    HutGradients,
    LoraAdapterState,
    LoraGradients,
    MergedLayer,
    Method,
)
from .tensor import DenseMatrix, FlopCounter, flop_scope

__all__ = [
    "AdapterLayer",
    "FrozenLayer",
    "MergedLinear",
    "forward_merged",
    "CheckpointError",
    "ConfigError",
    "CounterScopeError",
    "HutError",
    "RankError",
    "ShapeError",
    "delta_flops",
    "flops_hut",
    "flops_lora",
    "flops_merged",
    "flops_table",
    "measure_forward_flops",
    "check_layer_gradients",
    "finite_diff",
    "gradient_errors",
    "HutLayer",
    "compute_w_new",
    "hut_backward",
    "hut_forward",
    "hut_forward_reduced",
    "hut_init",
    "hut_merge",
    "LoraLayer",
    "lora_backward",
    "lora_forward",
    "lora_init",
    "lora_merge",
    "FlopsReport",
    "HutAdapterState",
    "HutGradients",
    "LoraAdapterState",
    "LoraGradients",
    "MergedLayer",
    "Method",
    "DenseMatrix",
    "FlopCounter",
    "flop_scope",
]
