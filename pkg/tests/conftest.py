import numpy as np
import pytest
import torch

from vidadapt.denoiser import DenoiserConfig
from vidadapt.numerics import set_single_threaded
from vidadapt.pipelines import TrainConfig, adapt_train_t2v, pretrain_base

set_single_threaded()

# Small architecture for fast unit tests; acceptance uses the defaults.
TINY = DenoiserConfig(widths=(16, 32), groups=4, text_dim=16, time_dim=32, adapter_ratio=4)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)
    yield


@pytest.fixture(scope="session")
def tiny_base():
    """Briefly pre-trained tiny image bundle (frames 8x16x16)."""
    tcfg = TrainConfig(steps=300, batch_size=16, lr=2e-3, seed=0, frames=8, height=16, width=16,
                       backgrounds=("black",))
    bundle, _ = pretrain_base(TINY, tcfg)
    return bundle


@pytest.fixture(scope="session")
def tiny_video(tiny_base):
    tcfg = TrainConfig(steps=20, batch_size=2, lr=1e-3, seed=1, frames=4, height=16, width=16,
                       backgrounds=("black",))
    bundle, _, _ = adapt_train_t2v(tiny_base, tcfg)
    return bundle


# one "PASS/FAIL criterion N: ..." line per acceptance criterion, echoed at the end of the run
VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
