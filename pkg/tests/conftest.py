import time
from dataclasses import dataclass

import numpy as np
import pytest

import sensguide as sg


@dataclass
class TrainedBundle:
    system: object
    dataset: object
    model: object
    report: object
    elapsed: float  # data generation + training, seconds


def _build_bundle(name: str, config: sg.TrainConfig) -> TrainedBundle:
    t0 = time.perf_counter()
    system = sg.make_system(name)
    ds = sg.generate_dataset(system, seed=0)
    model, report = sg.train(ds, config)
    return TrainedBundle(
        system=system,
        dataset=ds,
        model=model,
        report=report,
        elapsed=time.perf_counter() - t0,
    )


@pytest.fixture(scope="session")
def trained_rotation() -> TrainedBundle:
    """Direction predictor for the rotation system, shared across tests."""
    return _build_bundle("rotation2d", sg.TrainConfig(seed=0))


@pytest.fixture(scope="session")
def trained_vdp() -> TrainedBundle:
    return _build_bundle("vdp2d", sg.TrainConfig(seed=0))


@pytest.fixture(scope="session")
def tiny_forward_model() -> TrainedBundle:
    """Small, quickly trained forward-kind model for prediction tests."""
    t0 = time.perf_counter()
    system = sg.make_system("rotation2d")
    ds = sg.generate_dataset(
        system, num_anchors=10, num_neighbors=4, kind="forward", seed=3
    )
    model, report = sg.train(
        ds, sg.TrainConfig(epochs=8, batch_size=128, seed=0)
    )
    return TrainedBundle(
        system=system,
        dataset=ds,
        model=model,
        report=report,
        elapsed=time.perf_counter() - t0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
