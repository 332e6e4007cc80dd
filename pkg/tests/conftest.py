import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make `oracles` importable

from kgedet.prototypes import ImplicitBackground, PrototypeSet


@pytest.fixture
def orthonormal_prototypes():
    """Four exactly orthonormal prototypes in 4-D."""
    return PrototypeSet(
        classes=["car", "bus", "cat", "dog"],
        matrix=np.eye(4),
        background_policy=ImplicitBackground(threshold=0.55),
        provenance="random-orthogonal",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
