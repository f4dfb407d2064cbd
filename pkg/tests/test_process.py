"""Closure, generator, marginal rates and hold probabilities.

The matrix exponential from scipy serves as the independent semigroup
oracle throughout this module.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.linalg import expm

from fragmentor import (
    CapacityError,
    RateFamily,
    SetPartition,
    SiteSet,
    ValidationError,
    closure,
    generic_rates_check,
    hold_probability,
    marginal_model,
    marginal_rate,
    partition_hold_probability,
    rate_family_from_obj,
    rate_family_to_obj,
    restrict,
    split_rate,
)
from conftest import (
    degenerate_four_site_family,
    random_family,
    seven_site_family,
    three_site_family,
    two_site_family,
)


def test_rate_family_validation():
    sites = SiteSet((1, 2))
    fin = SetPartition.from_sets([[0], [1]])
    with pytest.raises(ValidationError):
        RateFamily(sites=sites, rates={fin: 0.0})
    with pytest.raises(ValidationError):
        RateFamily(sites=sites, rates={fin: -1.0})
    with pytest.raises(ValidationError):
        RateFamily(sites=sites, rates={SetPartition.trivial(0b11): 1.0})
    with pytest.raises(ValidationError):
        RateFamily(sites=sites, rates={SetPartition.from_sets([[0]]): 1.0})


def test_two_site_chain_is_one_jump():
    rho = two_site_family(rate=1.5)
    model = closure(rho)
    fin = SetPartition.from_sets([[0], [1]])
    assert model.states == (SetPartition.trivial(0b11), fin)
    assert np.allclose(model.generator, [[-1.5, 1.5], [0.0, 0.0]])
    assert model.gamma_star == fin


def test_start_state_exit_rate_is_total_mass():
    rng = np.random.default_rng(42)
    for _ in range(20):
        rho = random_family(rng)
        model = closure(rho)
        assert model.generator[0, 0] == pytest.approx(-rho.total, rel=1e-12)


def test_seven_site_closure_and_absorbing_state():
    rho = seven_site_family()
    model = closure(rho)
    expected = rho.sites.parse_partition([["1"], ["2", "3"], ["4"], ["5"], ["6"], ["7"]])
    assert model.gamma_star == expected
    assert model.states[-1] == expected
    assert model.states[0] == SetPartition.trivial(rho.carrier)
    # generator structure
    q = model.generator
    assert np.allclose(q.sum(axis=1), 0.0, atol=1e-12)
    assert (np.tril(q, -1) == 0).all()
    off = q.copy()
    np.fill_diagonal(off, 0.0)
    assert (off >= 0).all()
    assert not off[model.absorbing_index].any()


def test_state_cap_is_loud():
    rho = seven_site_family()
    with pytest.raises(CapacityError, match="cap of 3"):
        closure(rho, state_cap=3)


def test_marginal_rate_examples():
    rho = seven_site_family()
    sites = rho.sites
    sub = sites.mask_of("167")
    local = sites.parse_partition([["1"], ["6", "7"]])
    # brute force over the three keys
    expected = sum(rho.rates[g] for g in rho.keys if restrict(g, sub) == local)
    assert expected == 1.0  # only the second key restricts this way
    assert marginal_rate(rho, sub, local) == pytest.approx(expected)

    # full carrier: the marginal rate of a key is its own rate
    for g in rho.keys:
        assert marginal_rate(rho, rho.carrier, g) == pytest.approx(rho.rates[g])

    # total-mass split over all induced partitions on sub
    induced = {restrict(g, sub) for g in rho.keys}
    total = sum(marginal_rate(rho, sub, p) for p in induced)
    assert total == pytest.approx(rho.total)
    trivial_mass = marginal_rate(rho, sub, SetPartition.trivial(sub))
    others = sum(marginal_rate(rho, sub, p) for p in induced if not p.is_trivial)
    assert trivial_mass == pytest.approx(rho.total - others)

    with pytest.raises(ValidationError):
        marginal_rate(rho, sub, SetPartition.trivial(sites.mask_of("12")))


def test_hold_probability_examples():
    rho = two_site_family(rate=1.0)
    assert hold_probability(rho, 0b11) == pytest.approx(math.exp(-1.0))
    assert hold_probability(rho, 0b01) == 1.0

    rho7 = seven_site_family()
    sub = rho7.sites.mask_of("23")
    # every key keeps {2,3} together
    assert all(restrict(g, sub).is_trivial for g in rho7.keys)
    assert hold_probability(rho7, sub) == 1.0
    assert split_rate(rho7, sub) == 0.0


def test_partition_hold_probability():
    rho = seven_site_family()
    model = closure(rho)
    # the absorbing state of this model is not all singletons ({2,3} stays
    # together), yet nothing can split it further
    assert partition_hold_probability(rho, model.gamma_star) == 1.0
    trivial = SetPartition.trivial(rho.carrier)
    assert partition_hold_probability(rho, trivial) == pytest.approx(math.exp(-rho.total))
    # log-additivity over atoms
    rng = np.random.default_rng(7)
    for _ in range(20):
        fam = random_family(rng)
        m = closure(fam)
        for p in m.states:
            direct = partition_hold_probability(fam, p)
            product = math.prod(hold_probability(fam, a) for a in p.atoms)
            assert direct == pytest.approx(product, rel=1e-12)


def test_disjoint_carrier_product_identity():
    rho = seven_site_family()
    sites = rho.sites
    left = restrict(rho.keys[0], sites.mask_of("123"))
    right = restrict(rho.keys[0], sites.mask_of("4567"))
    merged = SetPartition(left.atoms + right.atoms)
    assert partition_hold_probability(rho, merged) == pytest.approx(
        partition_hold_probability(rho, left) * partition_hold_probability(rho, right),
        rel=1e-12,
    )


def test_marginal_model_examples():
    rho = seven_site_family()
    sites = rho.sites

    full = marginal_model(rho, rho.carrier)
    base = closure(rho)
    assert full.states == base.states
    assert np.allclose(full.generator, base.generator)

    single = marginal_model(rho, sites.mask_of("5"))
    assert single.states == (SetPartition.trivial(sites.mask_of("5")),)
    assert single.generator.shape == (1, 1)
    assert single.generator[0, 0] == 0.0

    sub = sites.mask_of("167")
    marg = marginal_model(rho, sub)
    expected_states = {
        SetPartition.trivial(sub),
        sites.parse_partition([["1"], ["6", "7"]], carrier=sub),
        sites.parse_partition([["1"], ["6"], ["7"]], carrier=sub),
    }
    assert set(marg.states) == expected_states


def test_marginal_model_lumps_the_full_semigroup():
    rng = np.random.default_rng(11)
    for _ in range(10):
        rho = random_family(rng, n_sites=int(rng.integers(2, 6)))
        model = closure(rho)
        n_sites = rho.sites.n
        sub = int(rng.integers(1, 1 << n_sites))
        marg = marginal_model(rho, sub)
        for t in (0.3, 1.7):
            full = expm(model.generator * t)
            small = expm(marg.generator * t)
            for i, p in enumerate(model.states):
                pi = marg.state_index[restrict(p, sub)]
                for j, q in enumerate(marg.states):
                    mass = sum(
                        full[i, k]
                        for k, r in enumerate(model.states)
                        if restrict(r, sub) == q
                    )
                    assert abs(mass - small[pi, j]) < 1e-9


def test_semigroup_eigenvalues_are_hold_probabilities():
    rng = np.random.default_rng(5)
    for _ in range(10):
        rho = random_family(rng)
        model = closure(rho)
        eig = np.sort(np.linalg.eigvals(expm(model.generator)).real)
        holds = np.sort([partition_hold_probability(rho, p) for p in model.states])
        assert np.abs(eig - holds).max() < 1e-8


def test_absorption_in_the_long_run():
    model = closure(three_site_family())
    p = expm(model.generator * 50.0)
    unit = np.zeros(model.n)
    unit[model.absorbing_index] = 1.0
    assert np.abs(p[model.absorbing_index] - unit).max() < 1e-12
    assert p[0, model.absorbing_index] > 0.99


def test_generic_rates_check():
    assert generic_rates_check(two_site_family())
    assert generic_rates_check(three_site_family())
    assert not generic_rates_check(degenerate_four_site_family())
    # equal-rate seven-site example: a two-block state regroups to the
    # same aggregate rate, so the check must flag it
    assert not generic_rates_check(seven_site_family())


def test_rate_family_json_round_trip():
    rho = seven_site_family()
    obj = rate_family_to_obj(rho)
    back = rate_family_from_obj(obj)
    assert back.sites.labels == rho.sites.labels
    assert back.rates == rho.rates

    with pytest.raises(ValidationError):
        rate_family_from_obj({"sites": ["1", "2"], "rates": []})
    with pytest.raises(ValidationError):
        rate_family_from_obj(
            {"sites": ["1", "2"], "rates": [{"partition": [["1", "2"]], "rate": 1.0}]}
        )
    with pytest.raises(ValidationError):
        rate_family_from_obj(
            {"sites": ["1", "2"], "rates": [{"partition": [["1"], ["2"]], "rate": -2.0}]}
        )
    with pytest.raises(ValidationError):
        rate_family_from_obj(
            {
                "sites": ["1", "2"],
                "rates": [
                    {"partition": [["1"], ["2"]], "rate": 1.0},
                    {"partition": [["2"], ["1"]], "rate": 2.0},
                ],
            }
        )
