import numpy as np
import pytest

from psa_forge.rng import SeededRng


@pytest.fixture
def rng():
    return SeededRng(12345)


@pytest.fixture
def toy_config():
    from psa_forge.types import LidarConfig

    return LidarConfig("toy", beams=4, columns=8, f_up_deg=10.0, f_down_deg=-30.0, max_range_m=50.0)


def assert_partitions_equal(labels_a, labels_b):
    """Compare two labelings as set partitions, ignoring label numbering."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    assert len(a) == len(b)
    assert ((a < 0) == (b < 0)).all(), "noise sets differ"
    seen = {}
    for la, lb in zip(a, b):
        if la < 0:
            continue
        if la in seen:
            assert seen[la] == lb, "partition blocks differ"
        else:
            seen[la] = lb
    assert len(set(seen.values())) == len(seen), "blocks merged"
