"""
チェックポイントの保存・読み込み
テキストヘッダ + リトルエンディアン float64 の生データ（形式は docs/CHECKPOINT_FORMAT.md）
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
import yaml

from ..core.errors import CheckpointError
from ..core.models import Method
from ..core.tensor import DenseMatrix
from ..training.block import ToyBlock, WeightTarget

logger = logging.getLogger(__name__)

MAGIC = "HUTCKPT"
FORMAT_VERSION = 1
END_MARKER = "END"
BASE_PREFIX = "base."


@dataclass
class Checkpoint:
    """名前付きテンソル列 + 設定スナップショット + シード"""

    tensors: Dict[str, DenseMatrix]
    config: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    version: int = FORMAT_VERSION

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.version == other.version
            and self.seed == other.seed
            and self.config == other.config
            and list(self.tensors) == list(other.tensors)
            and all(self.tensors[k] == other.tensors[k] for k in self.tensors)
        )


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    """
    チェックポイントをバイト列に変換

    Args:
        ckpt: チェックポイント

    Returns:
        ヘッダ（UTF-8）+ 生データ
    """
    config_text = yaml.safe_dump(ckpt.config, sort_keys=True, allow_unicode=True).encode("utf-8")

    lines: List[str] = [f"{MAGIC} {ckpt.version}", f"seed {ckpt.seed}", f"config {len(config_text)}"]
    header_head = ("\n".join(lines) + "\n").encode("utf-8")

    tensor_lines = [f"tensors {len(ckpt.tensors)}"]
    payload = []
    for name, tensor in ckpt.tensors.items():
        if not name or any(c.isspace() for c in name):
            raise CheckpointError(f"tensor name must be non-empty without whitespace: {name!r}")
        rows, cols = tensor.shape
        tensor_lines.append(f"tensor {name} {rows} {cols}")
        payload.append(tensor.data.astype("<f8").tobytes())
    tensor_lines.append(END_MARKER)
    header_tail = ("\n".join(tensor_lines) + "\n").encode("utf-8")

    return header_head + config_text + header_tail + b"".join(payload)


def _read_line(buf: bytes, pos: int) -> Tuple[str, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise CheckpointError("unexpected end of checkpoint header")
    return buf[pos:end].decode("utf-8"), end + 1


def _expect(line: str, keyword: str, parts: int) -> List[str]:
    fields_ = line.split(" ")
    if len(fields_) != parts or fields_[0] != keyword:
        raise CheckpointError(f"malformed checkpoint header line: {line!r} (expected '{keyword} ...')")
    return fields_[1:]


def decode_checkpoint(buf: bytes) -> Checkpoint:
    """
    バイト列からチェックポイントを復元

    Raises:
        CheckpointError: マジック・バージョン不一致、ヘッダ破損、データ長不一致
    """
    try:
        line, pos = _read_line(buf, 0)
        (version,) = _expect(line, MAGIC, 2)
        if int(version) != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")

        line, pos = _read_line(buf, pos)
        (seed,) = _expect(line, "seed", 2)
        line, pos = _read_line(buf, pos)
        (config_len,) = _expect(line, "config", 2)
        config_len = int(config_len)
        if pos + config_len > len(buf):
            raise CheckpointError("truncated config section")
        config = yaml.safe_load(buf[pos : pos + config_len].decode("utf-8")) or {}
        pos += config_len

        line, pos = _read_line(buf, pos)
        (count,) = _expect(line, "tensors", 2)
        specs = []
        for _ in range(int(count)):
            line, pos = _read_line(buf, pos)
            name, rows, cols = _expect(line, "tensor", 4)
            specs.append((name, int(rows), int(cols)))
        line, pos = _read_line(buf, pos)
        if line != END_MARKER:
            raise CheckpointError(f"missing {END_MARKER} marker, got {line!r}")
    except (ValueError, UnicodeDecodeError, yaml.YAMLError) as e:
        if isinstance(e, CheckpointError):
            raise
        raise CheckpointError(f"malformed checkpoint header: {e}")

    expected = sum(rows * cols for _, rows, cols in specs) * 8
    if len(buf) - pos != expected:
        raise CheckpointError(f"checkpoint payload is {len(buf) - pos} bytes, expected {expected}")

    tensors: Dict[str, DenseMatrix] = {}
    for name, rows, cols in specs:
        if name in tensors:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        size = rows * cols * 8
        values = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=pos)
        tensors[name] = DenseMatrix(values.reshape(rows, cols))
        pos += size

    return Checkpoint(tensors=tensors, config=config, seed=int(seed), version=FORMAT_VERSION)


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode_checkpoint(ckpt)
    path.write_bytes(data)
    logger.info(f"Saved checkpoint ({len(ckpt.tensors)} tensors, {len(data)} bytes) to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    ckpt = decode_checkpoint(path.read_bytes())
    logger.info(f"Loaded checkpoint ({len(ckpt.tensors)} tensors) from {path}")
    return ckpt


def checkpoint_from_block(block: ToyBlock, config: Dict[str, Any], seed: int) -> Checkpoint:
    """
    学習済みブロックからチェックポイントを作成

    凍結重みは 'base.Wq'、アダプタのパラメータは 'Wq.MA' の名前で格納する。
    """
    tensors: Dict[str, DenseMatrix] = {}
    for target in WeightTarget:
        tensors[f"{BASE_PREFIX}{target.value}"] = block.weights[target]
    tensors.update(block.trainable_parameters())
    return Checkpoint(tensors=tensors, config=dict(config), seed=seed)


def block_from_checkpoint(ckpt: Checkpoint) -> ToyBlock:
    """
    チェックポイントからアダプタ付きブロックを再構築

    設定スナップショットの method / targets / rank / lora_scale を使ってアダプタを付け直し、
    保存されたパラメータで置き換える。
    """
    try:
        weights = {t: ckpt.tensors[f"{BASE_PREFIX}{t.value}"] for t in WeightTarget}
    except KeyError as e:
        raise CheckpointError(f"checkpoint is missing base weight {e.args[0]}")

    model_dim, ffn_dim = weights[WeightTarget.WD].shape
    block = ToyBlock(model_dim=model_dim, ffn_dim=ffn_dim, weights=weights)

    params = {k: v for k, v in ckpt.tensors.items() if not k.startswith(BASE_PREFIX)}
    if not params:
        return block

    targets = WeightTarget.parse_list(sorted({k.split(".", 1)[0] for k in params}))
    method = Method.parse(str(ckpt.config.get("method", "hut")))
    rank = ckpt.config.get("rank")
    if rank is None:
        first = params[f"{targets[0].value}.{'MA' if method is Method.HUT else 'WA'}"]
        rank = first.cols
    scale = float(ckpt.config.get("lora_scale", 1.0))
    if not math.isfinite(scale):
        raise CheckpointError(f"invalid lora_scale in checkpoint config: {scale}")

    block = block.attach(targets, method, int(rank), lora_scale=scale)
    return block.with_parameters(params)
