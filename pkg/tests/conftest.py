import hashlib
import json
from pathlib import Path

import pytest
import torch

from rollforge.denoiser import Denoiser, DenoiserConfig
from rollforge.world import default_regimes

# trained models used by the slow acceptance tests are cached here so a
# re-run of the suite does not retrain from scratch
ARTIFACT_DIR = Path(__file__).resolve().parent.parent / ".pytest_artifacts"


def config_digest(**kwargs) -> str:
    blob = json.dumps(kwargs, sort_keys=True, default=repr)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@pytest.fixture(scope="session")
def artifact_dir() -> Path:
    ARTIFACT_DIR.mkdir(exist_ok=True)
    return ARTIFACT_DIR


@pytest.fixture(scope="session")
def regimes():
    return default_regimes(8)


@pytest.fixture()
def small_config():
    return DenoiserConfig(dim_model=32, num_layers=2, num_heads=2, frame_dim=8)


@pytest.fixture()
def small_model(small_config):
    torch.manual_seed(0)
    return Denoiser(small_config, seed=0)
