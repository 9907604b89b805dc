import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from polypseg import datapipe  # noqa: E402


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def blob_dir(tmp_path):
    """An 8-pair Kvasir-style dataset of synthetic 64x64 blobs on disk."""
    root = tmp_path / "blobs"
    datapipe.save_dataset(datapipe.blob_samples(8, 64, seed=3), root)
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
