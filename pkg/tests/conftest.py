import numpy as np
import pytest

from sdtl.config import tiny_config
from sdtl.data import InMemoryPairs, procedural_scene, synth_lowlight
from sdtl.tensor import precision


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with precision("float64"):
        yield


def make_pairs(n=4, size=64, seed=123):
    """Synthetic (low, high) ImageBuf pairs from procedural scenes."""
    drng = np.random.default_rng(seed)
    pairs = InMemoryPairs()
    for _ in range(n):
        high = procedural_scene(size, drng)
        pairs.append((synth_lowlight(high, rng=drng), high))
    return pairs


@pytest.fixture
def pairs():
    return make_pairs()


@pytest.fixture
def micro_cfg():
    """Smallest legal model: quick enough for many structural tests."""
    return tiny_config(embed_dim=12, heads=2, band_width=4, crop=32, batch=2, epochs=1)


# -- acceptance reporting ------------------------------------------------

ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, title, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
