"""Shared instances and random-model generators for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from fragmentor import RateFamily, SetPartition, SiteSet, closure


def two_site_family(rate: float = 1.0) -> RateFamily:
    """One rate on the finest two-site partition: a single-jump chain."""
    sites = SiteSet((1, 2))
    fin = SetPartition.from_sets([[0], [1]])
    return RateFamily(sites=sites, rates={fin: rate})


def three_site_family(a: float = 1.0, b: float = 2.0) -> RateFamily:
    """Two rates on three sites: rate ``a`` splits off site 1, rate ``b``
    fully separates. Small enough to solve by hand, rich enough to have
    two trees reaching the finest state."""
    sites = SiteSet((1, 2, 3))
    ga = SetPartition.from_sets([[0], [1, 2]])
    gb = SetPartition.from_sets([[0], [1], [2]])
    return RateFamily(sites=sites, rates={ga: a, gb: b})


def seven_site_family() -> RateFamily:
    """The seven-site example with three unit-rate partitions."""
    sites = SiteSet(tuple("1234567"))
    g1 = sites.parse_partition([["1", "6", "7"], ["2", "3", "4"], ["5"]])
    g2 = sites.parse_partition([["1"], ["2", "3"], ["4", "5"], ["6", "7"]])
    g3 = sites.parse_partition([["1", "2", "3", "4"], ["5"], ["6"], ["7"]])
    return RateFamily(sites=sites, rates={g1: 1.0, g2: 1.0, g3: 1.0})


def degenerate_four_site_family() -> RateFamily:
    """Equal rates on a two-block split and the finest partition: cutting
    both child edges of the two-block tree reproduces the unsplit hold
    rate, so a closed-form denominator vanishes."""
    sites = SiteSet((1, 2, 3, 4))
    half = SetPartition.from_sets([[0, 1], [2, 3]])
    fin = SetPartition.from_sets([[0], [1], [2], [3]])
    return RateFamily(sites=sites, rates={half: 1.0, fin: 1.0})


def random_partition(rng: np.random.Generator, n: int) -> SetPartition:
    """A uniform-ish random non-trivial partition of ``n`` sites."""
    while True:
        labels = rng.integers(0, n, size=n)
        blocks: dict[int, int] = {}
        for site, lab in enumerate(labels):
            blocks[lab] = blocks.get(lab, 0) | (1 << site)
        if len(blocks) > 1:
            return SetPartition(tuple(blocks.values()))


# non-trivial partition counts per site count, to bound distinct-key draws
_AVAILABLE_KEYS = {1: 0, 2: 1, 3: 4, 4: 14, 5: 51, 6: 202, 7: 876}


def random_family(
    rng: np.random.Generator,
    n_sites: int | None = None,
    max_keys: int = 3,
    rate_range: tuple[float, float] = (0.1, 10.0),
) -> RateFamily:
    """Random instance: 2..4 sites, 1..max_keys distinct keys, log-uniform rates."""
    if n_sites is None:
        n_sites = int(rng.integers(2, 5))
    sites = SiteSet(tuple(range(1, n_sites + 1)))
    n_keys = min(int(rng.integers(1, max_keys + 1)), _AVAILABLE_KEYS[n_sites])
    keys: dict[SetPartition, float] = {}
    while len(keys) < n_keys:
        p = random_partition(rng, n_sites)
        if p not in keys:
            lo, hi = np.log(rate_range[0]), np.log(rate_range[1])
            keys[p] = float(np.exp(rng.uniform(lo, hi)))
    return RateFamily(sites=sites, rates=keys)


@pytest.fixture
def two_site_model():
    return closure(two_site_family())


@pytest.fixture
def three_site_model():
    return closure(three_site_family())


@pytest.fixture
def seven_site_model():
    return closure(seven_site_family())
