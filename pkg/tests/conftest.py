"""Shared fixtures: trained toy denoisers and the benchmark edit config.

Training is deterministic, so session scope just avoids repeating the same
work per test module.
"""

import numpy as np
import pytest

from stagediff.blobs import condition_table, graded_training_set, make_dataset
from stagediff.denoiser import train_toy_denoiser
from stagediff.pipeline import EditConfig
from stagediff.schedule import build_schedule


@pytest.fixture(scope="session")
def sched100():
    return build_schedule(100, "linear-beta", eta=0.0)


@pytest.fixture(scope="session")
def graded_net(sched100):
    """16x16 net trained across the dim-bright continuum; the benchmark
    editing backend."""
    pairs, table = graded_training_set(12, levels=5, size=16, seed=0)
    return train_toy_denoiser(pairs, table, epochs=200, seed=0, schedule=sched100)


@pytest.fixture(scope="session")
def left_pairs8():
    samples = [s for s in make_dataset(16, size=8, seed=0) if s.label.startswith("left")]
    return [(s.label, s.latent()) for s in samples]


@pytest.fixture(scope="session")
def net8(left_pairs8, sched100):
    """Small two-class 8x8 net for trainer-contract tests."""
    return train_toy_denoiser(left_pairs8, condition_table(), epochs=200, seed=0, schedule=sched100)


def benchmark_edit_config(**overrides) -> EditConfig:
    """The validated benchmark edit: left-dim instance 0 to left-bright."""
    base = dict(
        T=100,
        eta=0.05,
        backend="toy",
        src_text="blob left dim",
        tgt_text="blob left bright",
        seed=0,
        encoder="aligned",
        cfg_scale=5.0,
        grad_metric="spatial",
        source="blob:left-dim:0",
        target_ref="alt",
    )
    base.update(overrides)
    return EditConfig(**base)


@pytest.fixture()
def edit_cfg():
    return benchmark_edit_config()
