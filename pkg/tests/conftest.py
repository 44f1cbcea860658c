import sys
from pathlib import Path

import numpy as np
import pytest

# Flat module layout: make the repository root importable
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from focalsets import Frame, build_focal_sets  # noqa: E402

W1, W2, W3 = 0b001, 0b010, 0b100


def mass_vector(fs, assignment):
    """Mass vector over fs from {subset bitmask: mass}."""
    m = np.zeros(fs.f)
    for mask, value in assignment.items():
        m[fs.subsets.index(mask)] = value
    return m


def random_masses(rng, n, f):
    return rng.dirichlet(np.ones(f), size=n)


@pytest.fixture(autouse=True)
def _isolate_logging():
    """Restore global logging state that setup_logging() mutates."""
    import logging
    root = logging.getLogger()
    report = logging.getLogger("training.report")
    saved = (root.level, list(root.handlers), report.level, report.propagate, list(report.handlers))
    yield
    root.setLevel(saved[0])
    root.handlers[:] = saved[1]
    report.setLevel(saved[2])
    report.propagate = saved[3]
    report.handlers[:] = saved[4]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def full3():
    return build_focal_sets(Frame(3), "full")


@pytest.fixture
def example_masses(full3):
    """Three sensor reports on a 3-class frame."""
    m1 = mass_vector(full3, {W1: 0.6, W1 | W2: 0.3, 0b111: 0.1})
    m2 = mass_vector(full3, {W1 | W2: 0.5, W3: 0.2, 0b111: 0.3})
    m3 = mass_vector(full3, {W1: 0.1, W2: 0.1, W3: 0.8})
    return m1, m2, m3


@pytest.fixture
def butterfly():
    """Evidential partition of 12 objects over (empty, {1}, {2}, Omega), rows renormalised."""
    table = np.array([
        [0.11, 0.0, 0.89, 0.0],
        [0.082, 0.0, 0.75, 0.17],
        [0.0, 0.0, 0.83, 0.17],
        [0.082, 0.0, 0.75, 0.17],
        [0.0, 0.077, 0.56, 0.36],
        [0.0, 0.29, 0.30, 0.42],
        [0.0, 0.55, 0.079, 0.37],
        [0.082, 0.73, 0.0, 0.18],
        [0.0, 0.81, 0.0, 0.19],
        [0.082, 0.73, 0.0, 0.18],
        [0.11, 0.87, 0.0, 0.02],
        [0.97, 0.030, 0.0, 0.0],
    ])
    fs = build_focal_sets(Frame(2), "singletons_plus")
    return fs, table / table.sum(axis=1, keepdims=True)
