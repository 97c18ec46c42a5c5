import numpy as np
import pytest

from eqpart.spaces import (
    AtomizedSpace,
    EuclideanMetric,
    build_gasket,
    build_interval,
    build_plus_sign,
    build_sphere_s2,
    build_square,
)


@pytest.fixture(scope="session")
def small_spaces():
    """One small instance of every builder, shared across tests."""
    return {
        "interval": build_interval(2048),
        "square": build_square(48),
        "sphere": build_sphere_s2(3000, seed=0),
        "gasket": build_gasket(6),
        "plus": build_plus_sign(1024),
    }


@pytest.fixture(scope="session")
def grid17():
    """17 atoms at i/16 on [0, 1]: the hand-checked net example."""
    x = np.arange(17) / 16.0
    return AtomizedSpace(
        kind="grid17",
        positions=x[:, None],
        weights=np.full(17, 1.0 / 17.0),
        metric=EuclideanMetric(),
        d_hint=1.0,
        resolution=1.0 / 32.0,
        diam=1.0,
    )


@pytest.fixture(scope="session")
def gap_space():
    """Two short intervals separated by a wide gap: the canonical
    disconnected test space (gap 0.9, components of length 0.05)."""
    x = np.concatenate([np.linspace(0.0, 0.05, 512), np.linspace(0.95, 1.0, 512)])
    return AtomizedSpace(
        kind="gap",
        positions=x[:, None],
        weights=np.full(1024, 1.0 / 1024.0),
        metric=EuclideanMetric(),
        d_hint=1.0,
        resolution=0.05 / 1024.0,
        diam=1.0,
    )
