import numpy as np
import pytest

from plkan import Grid, KanModel, PlfTable


def make_layer(rng, n, m, node_count=None, y_min=0.0, y_max=1.0, scale=1.0):
    """Random layer; per-column node counts may vary when a list is given."""
    if node_count is None:
        node_count = int(rng.integers(2, 7))
    counts = node_count if isinstance(node_count, (list, tuple)) \
        else [node_count] * n
    grids = [Grid(y_min, y_max, nc) for nc in counts]
    width = sum(counts)
    values = scale * rng.uniform(-1.0, 1.0, size=(m, width))
    return PlfTable(grids, m, values)


def make_model(rng, dims, node_counts=None, input_range=(0.0, 1.0)):
    """Random model whose inner grids cover the reachable activations."""
    layers = []
    lo, hi = input_range
    for l in range(len(dims) - 1):
        n, m = dims[l], dims[l + 1]
        nc = None if node_counts is None else node_counts[l]
        layers.append(make_layer(rng, n, m, nc, lo, hi, scale=1.0 / n))
        # next layer's inputs are sums of n functions bounded by 1/n
        lo, hi = -1.5, 1.5
    return KanModel(layers)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
