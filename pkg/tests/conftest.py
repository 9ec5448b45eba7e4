import hashlib
from pathlib import Path

import numpy as np
import pytest

from fedids import flows
from fedids.model import ModelConfig

FIXTURES = Path(__file__).parent / "fixtures"

TINY = ModelConfig(num_layers=1, hidden=4, heads=2, intermediate=16, seq_len=8, vocab=10, num_classes=2, dropout=0.0)
MINI = ModelConfig(num_layers=2, hidden=64, heads=2, intermediate=256, seq_len=64, vocab=512, num_classes=8, dropout=0.1)

# frozen desk-scale dataset
SYNTH_SPEC = flows.SyntheticSpec(classes=8, fields=12, rows_per_class=500, noise=0.1, seed=7)
SYNTH_FIXTURE = FIXTURES / "synth_c8_f12_r500_n0.1_s7.csv"


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_csv():
    return SYNTH_FIXTURE


@pytest.fixture(scope="session")
def small_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "small.csv"
    flows.generate_synthetic(flows.SyntheticSpec(classes=4, fields=6, rows_per_class=40, noise=0.0, seed=3), path)
    return path
