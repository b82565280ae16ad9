import numpy as np
import pytest

from taclang.core import DEFAULT_EXTENT, MarkerFrame, rest_grid
from taclang.synthgen import GeneratorConfig, generate_corpus


@pytest.fixture(scope="session")
def rest_frame() -> MarkerFrame:
    grid = rest_grid()
    return MarkerFrame(grid, grid.copy(), DEFAULT_EXTENT)


@pytest.fixture(scope="session")
def small_noiseless_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus_clean")
    rows = generate_corpus(GeneratorConfig(noise_sigma_mm=0.0), 120, 11, out)
    return out, rows


@pytest.fixture(scope="session")
def small_noisy_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus_noisy")
    rows = generate_corpus(GeneratorConfig(), 120, 12, out)
    return out, rows


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
