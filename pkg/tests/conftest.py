import numpy as np
import pytest

from teapse.model import ModelConfig, build_model

# n_fd=2, 4 channels, one group; sizes 481 -> 241 -> 121, bottleneck 4*121
TOY = dict(n_fd=2, n_fu=2, conv_channels=4, n_stcnl_groups=1, stcm_channels=4,
           lstm_hidden=8, spk_blstm_hidden=8, spk_fd_layers=1, embedding_dim=4)

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def toy_cfg():
    return ModelConfig(**TOY)


@pytest.fixture(scope="session")
def toy_model(toy_cfg):
    model, _ = build_model(toy_cfg, seed=3)
    return model


@pytest.fixture(scope="session")
def default_model():
    model, _ = build_model(ModelConfig(), seed=0)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
