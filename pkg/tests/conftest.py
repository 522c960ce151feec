import numpy as np
import pytest

from clmex.data import SyntheticConfig, generate_synthetic_dataset, split_by_subject
from clmex.models import EncoderConfig, ProjectionConfig
from clmex.training import RunConfig


def tiny_config(seed: int = 0, **pretrain) -> RunConfig:
    """A configuration small enough for a full train in about a second."""
    cfg = RunConfig(seed=seed)
    cfg.data.synthetic = SyntheticConfig(subjects=4, sessions=2, expressions=2, views=(-45, 0, 45), size=16, seed=3)
    cfg.model.encoder = EncoderConfig(conv_channels=[4, 8], embedding_dim=8)
    cfg.model.projection = ProjectionConfig(output_dim=4)
    cfg.pretrain.epochs = 2
    cfg.pretrain.groups_per_batch = 2
    cfg.pretrain.lr = 1e-3
    for k, v in pretrain.items():
        setattr(cfg.pretrain, k, v)
    cfg.downstream.probe_epochs = 2
    cfg.downstream.finetune_epochs = 2
    cfg.downstream.batch_size = 4
    cfg.downstream.lr = 1e-3
    return cfg.validate()


@pytest.fixture(scope="session")
def tiny_data():
    cfg = tiny_config()
    _, ds = generate_synthetic_dataset(cfg.data.synthetic)
    train, test = split_by_subject(ds, 0.25, np.random.default_rng(0))
    return ds, train, test


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
