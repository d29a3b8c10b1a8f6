"""
例外クラス
ライブラリ全体で使用するエラー階層
"""


class HutError(Exception):
    """hut-peft の基底例外"""


class ShapeError(HutError, ValueError):
    """行列の形状不一致"""


class RankError(HutError, ValueError):
    """ランク r が許容範囲外"""


class CounterScopeError(HutError, RuntimeError):
    """FLOPs 計測スコープの入れ子"""


class ConfigError(HutError, ValueError):
    """設定値の検証エラー"""


class CheckpointError(HutError, ValueError):
    """チェックポイントの読み書きエラー"""
