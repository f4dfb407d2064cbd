"""Rate families and the compiled fragmentation chain.

The chain starts at the one-block partition of the carrier and, one move
at a time, replaces a single atom by the blocks a rated partition induces
on it. The state space is the closure of the start state under these
moves. States are kept in coarse-to-fine order, which makes the generator
strictly upper triangular off the diagonal: the chain never revisits a
state. The join of all rated partitions is the unique absorbing state.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

from .errors import CapacityError, ConsistencyError, ValidationError
from .partitions import (
    SetPartition,
    SiteSet,
    bit_indices,
    fragmentations,
    join,
    restrict,
)

DEFAULT_STATE_CAP = 100_000


@dataclass(frozen=True)
class RateFamily:
    """Strictly positive split rates keyed by non-trivial partitions.

    Every key must cover ``carrier`` (the full site set by default). The
    one-block partition never carries a rate: it would not move anything.
    An empty family is allowed only as the marginal of a family whose
    members all restrict trivially; the public loaders reject it.
    """

    sites: SiteSet
    rates: Mapping[SetPartition, float]
    carrier: int = 0  # 0 means the full site set

    def __post_init__(self) -> None:
        carrier = self.carrier or self.sites.full_mask
        if carrier & ~self.sites.full_mask:
            raise ValidationError("carrier contains sites outside the site set")
        rates = dict(self.rates)
        for p, r in rates.items():
            if p.carrier != carrier:
                raise ValidationError("every rated partition must cover the carrier")
            if p.is_trivial:
                raise ValidationError("the one-block partition cannot carry a rate")
            if not (isinstance(r, (int, float)) and math.isfinite(r) and r > 0):
                raise ValidationError("rates must be finite and strictly positive")
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "carrier", carrier)

    @cached_property
    def keys(self) -> tuple[SetPartition, ...]:
        return tuple(sorted(self.rates, key=lambda p: p.sort_key))

    @cached_property
    def total(self) -> float:
        """Total rate mass: the exit rate of the start state."""
        return float(sum(self.rates[k] for k in self.keys))

    def rate(self, p: SetPartition) -> float:
        return float(self.rates[p])


def _splits(g: SetPartition, sites: int) -> bool:
    """True when ``g`` cuts the site set ``sites`` into more than one piece."""
    low = sites & -sites
    for a in g.atoms:
        if a & low:
            return bool(sites & ~a)
    raise ValidationError("sites must lie inside the partition carrier")


def split_rate(rho: RateFamily, sites: int) -> float:
    """Total rate of family members that cut ``sites`` apart."""
    if sites == 0:
        raise ValidationError("the site set must be nonempty")
    if sites & ~rho.carrier:
        raise ValidationError("sites must lie inside the carrier")
    return float(sum(rho.rates[g] for g in rho.keys if _splits(g, sites)))


def hold_probability(rho: RateFamily, sites: int) -> float:
    """Probability that ``sites`` is still in one piece at time 1.

    Equals ``exp(-split_rate(rho, sites))``; 1.0 for singletons, which
    nothing can cut.
    """
    return math.exp(-split_rate(rho, sites))


def partition_hold_probability(rho: RateFamily, p: SetPartition) -> float:
    """Probability that every atom of ``p`` is still unbroken at time 1.

    The product of the per-atom hold probabilities; these products over
    the states are exactly the eigenvalues of the transition semigroup.
    """
    return math.exp(sum(-split_rate(rho, a) for a in p.atoms))


class HoldTable:
    """Memoized per-subset log hold probabilities for one rate family."""

    def __init__(self, rho: RateFamily):
        self.rho = rho
        self._log: dict[int, float] = {}

    def log_hold(self, sites: int) -> float:
        v = self._log.get(sites)
        if v is None:
            v = -split_rate(self.rho, sites)
            self._log[sites] = v
        return v

    def hold(self, sites: int) -> float:
        return math.exp(self.log_hold(sites))

    def log_partition(self, p: SetPartition) -> float:
        return sum(self.log_hold(a) for a in p.atoms)

    def partition(self, p: SetPartition) -> float:
        return math.exp(self.log_partition(p))


def marginal_rate(rho: RateFamily, sites: int, local: SetPartition) -> float:
    """Total rate of family members that induce ``local`` on ``sites``."""
    if local.carrier != sites:
        raise ValidationError("the local partition must cover exactly the marginal sites")
    if sites & ~rho.carrier:
        raise ValidationError("sites must lie inside the carrier")
    return float(sum(rho.rates[g] for g in rho.keys if restrict(g, sites) == local))


@dataclass(frozen=True, eq=False)
class ProcessModel:
    """A compiled chain: ordered state space, generator, absorbing state.

    ``states`` is coarse-to-fine ({I} first, the absorbing join of all
    keys last); ``generator`` rows sum to zero and are strictly upper
    triangular off the diagonal in that order. Immutable after build.
    """

    rho: RateFamily
    states: tuple[SetPartition, ...]
    generator: np.ndarray
    gamma_star: SetPartition
    state_index: Mapping[SetPartition, int]

    @property
    def carrier(self) -> int:
        return self.rho.carrier

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def absorbing_index(self) -> int:
        return self.state_index[self.gamma_star]

    @cached_property
    def holds(self) -> HoldTable:
        return HoldTable(self.rho)

    @cached_property
    def sojourn_rates(self) -> np.ndarray:
        """Exit rate of each state (zero only at the absorbing state)."""
        return -self.generator.diagonal()


def _closure_states(
    start: SetPartition, family: Iterable[SetPartition], state_cap: int
) -> set[SetPartition]:
    members = tuple(family)
    seen = {start}
    queue = deque([start])
    while queue:
        p = queue.popleft()
        for step in fragmentations(p, members):
            if step.target not in seen:
                seen.add(step.target)
                if len(seen) > state_cap:
                    raise CapacityError(
                        f"state space exceeds the cap of {state_cap}; "
                        "raise the cap only if you can afford the memory"
                    )
                queue.append(step.target)
    return seen


def closure(rho: RateFamily, state_cap: int = DEFAULT_STATE_CAP) -> ProcessModel:
    """Compile the chain reachable from the one-block partition.

    Collects the closure of the start state under one-atom splits, orders
    it coarse-to-fine, and fills the generator with witness-summed rates.
    """
    start = SetPartition.trivial(rho.carrier)
    seen = _closure_states(start, rho.keys, state_cap)
    states = tuple(sorted(seen, key=lambda p: p.sort_key))
    index = {p: i for i, p in enumerate(states)}
    n = len(states)
    q = np.zeros((n, n))
    for p, i in index.items():
        for step in fragmentations(p, rho.keys):
            j = index[step.target]
            if j <= i:
                raise ConsistencyError("a split did not strictly refine its source")
            q[i, j] = sum(rho.rates[w] for w in sorted(step.witnesses, key=lambda g: g.sort_key))
        q[i, i] = -q[i].sum()
    if rho.keys:
        gamma_star = rho.keys[0]
        for g in rho.keys[1:]:
            gamma_star = join(gamma_star, g)
    else:
        gamma_star = start
    if gamma_star not in index:
        raise ConsistencyError("the join of the rated partitions left the state space")
    if states[0] != start or states[-1] != gamma_star:
        raise ConsistencyError("state ordering lost the start or absorbing state")
    absorbing = [i for i in range(n) if not q[i, :].any()]
    if absorbing != [index[gamma_star]]:
        raise ConsistencyError("the absorbing state is not unique")
    q.setflags(write=False)
    return ProcessModel(rho=rho, states=states, generator=q, gamma_star=gamma_star, state_index=index)


def marginal_model(rho: RateFamily, sites: int, state_cap: int = DEFAULT_STATE_CAP) -> ProcessModel:
    """The chain watched on a subset of sites.

    Its rates are the marginal rates of the distinct non-trivial
    restrictions of the keys; the result lumps the full chain exactly.
    """
    if sites == 0:
        raise ValidationError("the marginal site set must be nonempty")
    if sites & ~rho.carrier:
        raise ValidationError("marginal sites must lie inside the carrier")
    if sites == rho.carrier:
        return closure(rho, state_cap)
    local_rates: dict[SetPartition, float] = {}
    for g in rho.keys:
        local = restrict(g, sites)
        if local.is_trivial:
            continue
        local_rates[local] = local_rates.get(local, 0.0) + rho.rates[g]
    reduced = RateFamily(sites=rho.sites, rates=local_rates, carrier=sites)
    return closure(reduced, state_cap)


def generic_rates_check(rho: RateFamily, rtol: float = 1e-9) -> bool:
    """Check that no per-tree law denominator can vanish for this family.

    The denominators compare the aggregate hold rate of a leaf partition
    against the unsplit hold rate of its carrier. For every carrier a tree
    node can own and every non-trivial partition reachable on it, the two
    rates must differ by more than ``rtol`` times the total rate mass.
    Returns False when some difference is inside tolerance; the integral
    fallback then replaces the closed form.
    """
    if not rho.keys:
        return True
    tol = rtol * rho.total
    carriers: set[int] = set()
    stack = [rho.carrier]
    seen = {rho.carrier}
    while stack:
        u = stack.pop()
        if u.bit_count() < 2:
            continue
        carriers.add(u)
        for g in rho.keys:
            local = restrict(g, u)
            if local.is_trivial:
                continue
            for a in local.atoms:
                if a.bit_count() >= 2 and a not in seen:
                    seen.add(a)
                    stack.append(a)
    for u in sorted(carriers):
        base = split_rate(rho, u)
        local_keys = {restrict(g, u) for g in rho.keys}
        local_keys = {p for p in local_keys if not p.is_trivial}
        if not local_keys:
            continue
        states = _closure_states(SetPartition.trivial(u), local_keys, DEFAULT_STATE_CAP)
        for leaf_partition in states:
            if leaf_partition.is_trivial:
                continue
            aggregate = sum(split_rate(rho, a) for a in leaf_partition.atoms)
            if abs(base - aggregate) <= tol:
                return False
    return True


def rate_family_from_obj(obj) -> RateFamily:
    """Load a rate family from its JSON object form.

    Expected shape: ``{"sites": [...labels...], "rates": [{"partition":
    [[...]], "rate": r}, ...]}``. Rejects nonpositive rates, duplicate
    partitions and the one-block partition.
    """
    if not isinstance(obj, dict) or "sites" not in obj or "rates" not in obj:
        raise ValidationError('a model file needs "sites" and "rates" entries')
    sites = SiteSet(tuple(obj["sites"]))
    entries = obj["rates"]
    if not isinstance(entries, list) or not entries:
        raise ValidationError('"rates" must be a nonempty list of {"partition", "rate"} entries')
    rates: dict[SetPartition, float] = {}
    for entry in entries:
        if not isinstance(entry, dict) or "partition" not in entry or "rate" not in entry:
            raise ValidationError('each rate entry needs "partition" and "rate"')
        p = sites.parse_partition(entry["partition"], carrier=sites.full_mask)
        r = entry["rate"]
        if not (isinstance(r, (int, float)) and math.isfinite(r) and r > 0):
            raise ValidationError("rates must be finite and strictly positive")
        if p.is_trivial:
            raise ValidationError("the one-block partition cannot carry a rate")
        if p in rates:
            raise ValidationError(f"duplicate partition {sites.format_partition(p)}")
        rates[p] = float(r)
    return RateFamily(sites=sites, rates=rates)


def rate_family_to_obj(rho: RateFamily) -> dict:
    """Emit a rate family in its JSON object form, canonically ordered."""
    return {
        "sites": list(rho.sites.labels),
        "rates": [
            {"partition": rho.sites.format_partition(p), "rate": rho.rates[p]}
            for p in rho.keys
        ],
    }
