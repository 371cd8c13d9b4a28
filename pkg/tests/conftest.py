import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from dynblock.net import ModelConfig, init_params
from dynblock.seq import Vocabulary

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def vocab():
    return Vocabulary.default()


@pytest.fixture(scope="session")
def tiny_cfg(vocab):
    return ModelConfig(vocab.size, d_model=16, n_layers=1, n_heads=2, d_ff=32, max_len=40)


@pytest.fixture(scope="session")
def tiny_params(tiny_cfg):
    return init_params(tiny_cfg, seed=3)


def random_window(rng, n, vocab, p_ind=0.2):
    """Random committed window tokens drawn from digits and the indicator."""
    toks = rng.integers(0, 10, size=n)
    toks[rng.random(n) < p_ind] = vocab.indicator_id
    return [int(t) for t in toks]


def pytest_terminal_summary(terminalreporter):
    import acceptance_log
    if acceptance_log.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.lines():
            terminalreporter.write_line(line)
