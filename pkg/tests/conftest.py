import numpy as np
import pytest

from vaecodec.io.images import PatchSource, desk_corpus
from vaecodec.training import TrainConfig, train

TINY = TrainConfig(lmbda=0.001, latent_channels=8, hidden_channels=16, patch_size=32,
                   batch_size=4, steps=60, seed=0)


@pytest.fixture(scope="session")
def desk_images():
    return desk_corpus(6, 64, seed=3)


@pytest.fixture(scope="session")
def tiny_dataset(desk_images):
    return PatchSource(desk_images, TINY.patch_size, seed=0).extract(32)


@pytest.fixture(scope="session")
def tiny_model(tiny_dataset):
    """A few dozen steps of training: enough for non-trivial latents, not for quality."""
    return train(TINY, tiny_dataset, log_every=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance report ---------------------------------------------------------

ACCEPTANCE_RESULTS: dict = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[number] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
