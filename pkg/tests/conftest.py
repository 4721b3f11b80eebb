import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from approxnn import dataset
from approxnn.graph import build_graph


@pytest.fixture(scope="session")
def clean_spec():
    return dataset.SyntheticSpec(classes=4, noise_sigma=0.0, dwell_mean=10.0, seed=7)


@pytest.fixture(scope="session")
def noisy_spec():
    return dataset.SyntheticSpec(classes=4, noise_sigma=0.5, dwell_mean=10.0, seed=7)


@pytest.fixture(scope="session")
def mf_graph(noisy_spec):
    """Matched-filter model (single conv bank)."""
    manifest, weights = dataset.build_matched_filter_model(noisy_spec)
    return build_graph(manifest, weights)


@pytest.fixture(scope="session")
def mf_graph_mix(noisy_spec):
    """Matched-filter model with the extra identity mixing conv."""
    manifest, weights = dataset.build_matched_filter_model(noisy_spec, mixing_conv=True)
    return build_graph(manifest, weights)


@pytest.fixture(scope="session")
def labeled_set(noisy_spec):
    events = dataset.generate_stream(noisy_spec, 80, salt=1)
    return dataset.trace_arrays(events)


def random_conv_case(rng, max_n=2, max_c=3, max_k=3, max_hw=7, max_rs=3, pad=True):
    """Random small conv instance with guaranteed-valid geometry."""
    n = int(rng.integers(1, max_n + 1))
    c = int(rng.integers(1, max_c + 1))
    k = int(rng.integers(1, max_k + 1))
    r = int(rng.integers(1, max_rs + 1))
    s = int(rng.integers(1, max_rs + 1))
    h = int(rng.integers(r, max_hw + 1))
    w = int(rng.integers(s, max_hw + 1))
    sh = int(rng.integers(1, 3))
    sw = int(rng.integers(1, 3))
    ph = int(rng.integers(0, 2)) if pad else 0
    pw = int(rng.integers(0, 2)) if pad else 0
    x = rng.normal(size=(n, c, h, w)).astype(np.float32)
    wt = rng.normal(size=(k, c, r, s)).astype(np.float32)
    bias = rng.normal(size=k).astype(np.float32) if rng.random() < 0.5 else None
    return x, wt, bias, (sh, sw), (ph, pw)
