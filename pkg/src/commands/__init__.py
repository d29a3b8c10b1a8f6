"""実験 CLI のサブコマンド実装"""

from .flops import cmd_flops
from .sweep import SWEEP_KINDS, cmd_sweep
from .train import cmd_train
from .validate import PROPERTIES, PropertyResult, cmd_validate, run_properties

__all__ = [
    "cmd_flops",
    "SWEEP_KINDS",
    "cmd_sweep",
    "cmd_train",
    "PROPERTIES",
    "PropertyResult",
    "cmd_validate",
    "run_properties",
]
