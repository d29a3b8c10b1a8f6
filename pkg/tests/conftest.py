"""共通フィクスチャ"""

import numpy as np
import pytest

from src.core.tensor import DenseMatrix
from src.training.block import ToyBlock
from src.training.models import HyperParams
from src.training.tasks import SyntheticTask, TaskKind, build_task


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_matrix(rng):
    def make(rows, cols, std=1.0):
        return DenseMatrix(rng.normal(0.0, std, size=(rows, cols)))

    return make


@pytest.fixture
def small_block():
    return ToyBlock.random(8, 32, seed=7)


@pytest.fixture
def small_task():
    return build_task(SyntheticTask(seed=3, train_size=8, eval_size=4, model_dim=8, seq_len=4))


@pytest.fixture
def small_classification_task():
    return build_task(
        SyntheticTask(kind=TaskKind.CLASSIFICATION, seed=3, train_size=8, eval_size=4, model_dim=8, seq_len=4)
    )


@pytest.fixture
def quick_hyper():
    return HyperParams(lr=0.01, steps=5)
