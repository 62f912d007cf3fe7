from __future__ import annotations

import pytest
import torch

from seqdenoise.config import Config
from seqdenoise.model import Batch, MGSDModel


def tiny_config(**overrides) -> Config:
    """A 64-bit model small enough for coordinate-wise finite differences."""
    cfg = Config()
    cfg.update({
        "model.dim": 4, "model.heads": 2, "model.layers": 1, "model.init_std": 0.5,
        "data.max_len": 5, "interests.count": 3, "train.dtype": "float64",
        "l2.weight": 1e-3,
    })
    cfg.update(overrides)
    return cfg.validate()


def tiny_model(n_items=8, seed=0, **overrides) -> MGSDModel:
    torch.manual_seed(seed)
    return MGSDModel(n_items, tiny_config(**overrides)).double()


def two_user_batch() -> Batch:
    """Two left-padded users plus their augmented copies (labels: 1 genuine, 0 injected)."""
    return Batch(
        items=torch.tensor([[0, 1, 2, 3, 4], [0, 0, 5, 6, 2]]),
        mask=torch.tensor([[0, 1, 1, 1, 1], [0, 0, 1, 1, 1]], dtype=torch.bool),
        relevance_target=torch.tensor([5, 7]),
        target=torch.tensor([5, 7]),
        aug_items=torch.tensor([[0, 1, 7, 3, 4], [0, 0, 5, 3, 2]]),
        aug_mask=torch.tensor([[0, 1, 1, 1, 1], [0, 0, 1, 1, 1]], dtype=torch.bool),
        aug_labels=torch.tensor([[0, 1, 0, 1, 1], [0, 0, 1, 0, 1]], dtype=torch.float64),
    )


@pytest.fixture
def batch():
    return two_user_batch()


def small_bundle(n_users=30, t=2, seed=0, train_pairs="last"):
    """A tiny synthetic split bundle for end-to-end training tests."""
    from seqdenoise.data import prepare_bundle
    from seqdenoise.synthetic import GeneratorSpec, generate

    spec = GeneratorSpec(n_users=n_users, n_items=40, n_clusters=4, interests_per_user=1,
                         min_len=5, max_len=9, seed=seed)
    bundle, _ = prepare_bundle(generate(spec).event_log(), min_count=1, max_len=10, t=t,
                               seed=seed, train_pairs=train_pairs)
    return bundle


def small_train_config(**overrides) -> Config:
    cfg = Config()
    cfg.update({
        "model.dim": 8, "model.heads": 2, "model.layers": 1, "data.max_len": 10, "data.t": 2,
        "interests.count": 3, "train.batch_size": 16, "train.max_epochs": 3, "train.seed": 0,
    })
    cfg.update(overrides)
    return cfg.validate()


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.VERDICTS):
            terminalreporter.write_line(line)
