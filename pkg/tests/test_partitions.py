"""Partition algebra against a plain set-of-frozensets oracle."""

from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from fragmentor import (
    SetPartition,
    SiteSet,
    ValidationError,
    fragmentations,
    join,
    refines,
    restrict,
)
from fragmentor.partitions import bit_indices

# ---------------------------------------------------------------------------
# oracle helpers: represent partitions as sets of frozensets of indices


def to_sets(p: SetPartition) -> set[frozenset[int]]:
    return {frozenset(bit_indices(a)) for a in p.atoms}


def from_sets(blocks) -> SetPartition:
    return SetPartition.from_sets([sorted(b) for b in blocks])


def oracle_join(p: set, q: set) -> set:
    return {a & b for a in p for b in q if a & b}


def oracle_refines(p: set, q: set) -> bool:
    return all(any(b <= a for a in p) for b in q)


def oracle_restrict(p: set, j: frozenset) -> set:
    return {a & j for a in p if a & j}


SEVEN = SiteSet(tuple("1234567"))
G1 = SEVEN.parse_partition([["1", "6", "7"], ["2", "3", "4"], ["5"]])
G2 = SEVEN.parse_partition([["1"], ["2", "3"], ["4", "5"], ["6", "7"]])
G3 = SEVEN.parse_partition([["1", "2", "3", "4"], ["5"], ["6"], ["7"]])


# ---------------------------------------------------------------------------
# construction and canonical form


def test_canonical_sorting_and_idempotence():
    p = SetPartition.from_masks([0b100, 0b011])
    assert p.atoms == (0b011, 0b100)
    assert SetPartition(p.atoms) == p


def test_invalid_partitions_rejected():
    with pytest.raises(ValidationError):
        SetPartition(())
    with pytest.raises(ValidationError):
        SetPartition((0b11, 0b10))  # overlap
    with pytest.raises(ValidationError):
        SetPartition((0,))  # empty atom


def test_site_set_round_trip():
    p = SEVEN.parse_partition([["2", "3", "4"], ["5"], ["1", "6", "7"]])
    assert SEVEN.format_partition(p) == [["1", "6", "7"], ["2", "3", "4"], ["5"]]
    with pytest.raises(ValidationError):
        SEVEN.parse_partition([["1", "1"]])
    with pytest.raises(ValidationError):
        SEVEN.parse_partition([["1"]], carrier=SEVEN.full_mask)


# ---------------------------------------------------------------------------
# join


def test_join_of_example_partitions():
    expected = SEVEN.parse_partition([["1"], ["2", "3"], ["4"], ["5"], ["6", "7"]])
    got = join(G1, G2)
    assert got == expected
    assert to_sets(got) == oracle_join(to_sets(G1), to_sets(G2))


def test_join_unit_element():
    trivial = SetPartition.trivial(SEVEN.full_mask)
    assert join(G1, trivial) == G1
    assert join(trivial, G1) == G1


def test_join_of_all_three_is_the_leaf_partition():
    got = join(G1, join(G2, G3))
    expected = SEVEN.parse_partition([["1"], ["2", "3"], ["4"], ["5"], ["6"], ["7"]])
    assert got == expected


def test_join_carrier_mismatch():
    with pytest.raises(ValidationError):
        join(SetPartition.trivial(0b11), SetPartition.trivial(0b111))


# ---------------------------------------------------------------------------
# refinement order


def test_refines_examples():
    trivial = SetPartition.trivial(SEVEN.full_mask)
    assert refines(trivial, G1)
    assert refines(G1, G1)
    # the block {2,3,4} of G1 is split across blocks of G2
    assert not refines(G2, G1)
    assert oracle_refines(to_sets(G2), to_sets(G1)) is False


# ---------------------------------------------------------------------------
# restriction


def test_restrict_examples():
    sub = SEVEN.mask_of(["1", "6", "7"])
    got = restrict(G2, sub)
    assert SEVEN.format_partition(got) == [["1"], ["6", "7"]]
    assert restrict(G1, G1.carrier) == G1
    p = SetPartition.from_sets([[0, 1], [2]])
    assert restrict(p, 0b100) == SetPartition.from_sets([[2]])
    with pytest.raises(ValidationError):
        restrict(p, 0)
    with pytest.raises(ValidationError):
        restrict(p, 0b1000)


# ---------------------------------------------------------------------------
# fragmentation steps


def oracle_fragmentations(p: SetPartition, family) -> set[SetPartition]:
    """Brute force over atoms: all strictly finer one-atom replacements."""
    out = set()
    for a in p.atoms:
        for g in family:
            local = restrict(g, a)
            if len(local) > 1:
                out.add(SetPartition(tuple(b for b in p.atoms if b != a) + local.atoms))
    return out


def test_root_split():
    trivial = SetPartition.trivial(SEVEN.full_mask)
    steps = fragmentations(trivial, [G1])
    assert len(steps) == 1
    assert steps[0].target == G1
    assert steps[0].atom == SEVEN.full_mask
    assert steps[0].witnesses == frozenset({G1})


def test_leaf_partition_is_absorbing():
    leaves = join(G1, join(G2, G3))
    assert fragmentations(leaves, [G1, G2, G3]) == ()


def test_two_way_split_of_example_state():
    state = G1  # {1,6,7},{2,3,4},{5}
    steps = fragmentations(state, [G2])
    assert len(steps) == 2
    atoms = sorted(step.atom for step in steps)
    assert atoms == sorted([SEVEN.mask_of("167"), SEVEN.mask_of("234")])
    targets = {step.target for step in steps}
    assert targets == oracle_fragmentations(state, [G2])
    for step in steps:
        local = restrict(G2, step.atom)
        rebuilt = SetPartition(tuple(b for b in state.atoms if b != step.atom) + local.atoms)
        assert rebuilt == step.target


# ---------------------------------------------------------------------------
# property tests


@st.composite
def partitions(draw, n: int | None = None):
    if n is None:
        n = draw(st.integers(min_value=1, max_value=7))
    labels = draw(st.lists(st.integers(0, n - 1), min_size=n, max_size=n))
    blocks: dict[int, int] = {}
    for site, lab in enumerate(labels):
        blocks[lab] = blocks.get(lab, 0) | (1 << site)
    return SetPartition(tuple(blocks.values()))


@st.composite
def partition_pairs(draw):
    n = draw(st.integers(min_value=1, max_value=7))
    return draw(partitions(n=n)), draw(partitions(n=n))


@st.composite
def partition_triples(draw):
    n = draw(st.integers(min_value=1, max_value=7))
    return draw(partitions(n=n)), draw(partitions(n=n)), draw(partitions(n=n))


@settings(max_examples=200, derandomize=True)
@given(partition_pairs())
def test_join_commutes_and_matches_oracle(pq):
    p, q = pq
    assert join(p, q) == join(q, p)
    assert to_sets(join(p, q)) == oracle_join(to_sets(p), to_sets(q))


@settings(max_examples=200, derandomize=True)
@given(partition_triples())
def test_join_associative_idempotent(pqr):
    p, q, r = pqr
    assert join(p, join(q, r)) == join(join(p, q), r)
    assert join(p, p) == p


@settings(max_examples=200, derandomize=True)
@given(partition_pairs())
def test_order_iff_join_absorbs(pq):
    p, q = pq
    assert refines(p, q) == (join(p, q) == q)
    assert oracle_refines(to_sets(p), to_sets(q)) == refines(p, q)
    # antisymmetry
    if refines(p, q) and refines(q, p):
        assert p == q


@settings(max_examples=200, derandomize=True)
@given(partition_triples())
def test_order_transitive(pqr):
    p, q, r = pqr
    if refines(p, q) and refines(q, r):
        assert refines(p, r)


@settings(max_examples=200, derandomize=True)
@given(partition_pairs(), st.integers(min_value=1, max_value=(1 << 7) - 1))
def test_restrict_distributes_over_join(pq, raw_mask):
    p, q = pq
    sub = raw_mask & p.carrier
    if sub == 0:
        sub = p.carrier & -p.carrier
    assert restrict(join(p, q), sub) == join(restrict(p, sub), restrict(q, sub))


@settings(max_examples=200, derandomize=True)
@given(partition_pairs())
def test_fragmentation_steps_strictly_refine(pq):
    p, g = pq
    for step in fragmentations(p, [g]):
        assert len(step.target) > len(step.source)
        assert refines(step.source, step.target)
        assert step.atom in step.source.atoms
        for w in step.witnesses:
            local = restrict(w, step.atom)
            rebuilt = SetPartition(
                tuple(b for b in step.source.atoms if b != step.atom) + local.atoms
            )
            assert rebuilt == step.target
