"""Shared fixtures; also makes the package importable without installing it."""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
for path in (ROOT / "src" / "python", ROOT / "tests"):
    if str(path) not in sys.path:
        sys.path.insert(0, str(path))

from voclip.model import ModelConfig  # noqa: E402

TEST_DATA = ROOT / "test_data"


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(1234)))


@pytest.fixture
def toy_cfg() -> ModelConfig:
    return ModelConfig.toy()


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    """Smallest model exercising every code path (2 x 2 patches, 2 heads)."""
    return ModelConfig(n_frames=3, channels=2, height=8, width=8, patch=4, embed_dim=8, depth=1, heads=2, mlp_ratio=2)


@pytest.fixture
def test_data_dir() -> Path:
    return TEST_DATA


@pytest.fixture(autouse=True)
def reset_voclip_logger():
    """``configure_logging`` stops propagation; undo it so caplog sees records."""
    yield
    logger = logging.getLogger("voclip")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    logger.setLevel(logging.NOTSET)
    logger.propagate = True
