"""Shared fixtures: hand-checkable datasets and simulated samples."""

import numpy as np
import pytest

from ivite import from_arrays
from ivite.simulate import SimConfig, draw_sample


@pytest.fixture()
def eight_row():
    """Hand-countable single-cell dataset.

    Z=0 rows: (y=1,d=0), (2,0), (3,1), (4,1); Z=1 rows: (1,0), (5,1), (6,1),
    (7,1). Propensities: p(0)=0.5, p(1)=0.75.
    """
    y = [1.0, 2.0, 3.0, 4.0, 1.0, 5.0, 6.0, 7.0]
    d = [0, 0, 1, 1, 0, 1, 1, 1]
    z = [0, 0, 0, 0, 1, 1, 1, 1]
    return from_arrays(y, d, z)


@pytest.fixture(scope="session")
def dgp4000():
    """One large simulated sample from the study design."""
    return draw_sample(SimConfig(n=4000, gamma1=0.3, seed=11))


@pytest.fixture(scope="session")
def dgp2000():
    return draw_sample(SimConfig(n=2000, gamma1=0.3, seed=11))


def monotone_fixture(rng: np.random.Generator, kind: int):
    """Random two-arm dataset whose raw complier-CDF ratios are exactly monotone.

    Treatment equals the instrument (every unit is a complier), so each arm's
    complier CDF reduces to that arm's empirical CDF. ``kind`` selects the
    outcome distributions; kind 2 rounds outcomes to force ties.
    """
    n = int(rng.integers(40, 400))
    kind = kind % 4
    if kind == 0:
        y0 = rng.normal(0, 1, n)
        y1 = rng.normal(0.5, 1.3, n)
    elif kind == 1:
        y0 = rng.lognormal(0, 0.5, n)
        y1 = y0[rng.permutation(n)] ** 1.4
    elif kind == 2:
        y0 = np.round(rng.uniform(0, 10, n), 1)
        y1 = np.round(rng.uniform(2, 12, n), 1)
    else:
        y0 = rng.exponential(2, n)
        y1 = rng.exponential(3, n) + 1
    y = np.concatenate([y0, y1])
    d = np.concatenate([np.zeros(n, dtype=int), np.ones(n, dtype=int)])
    return from_arrays(y, d, d.copy())
