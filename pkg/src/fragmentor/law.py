"""The law of the fragmentation chain, computed three independent ways.

* ``tree_law`` / ``law_distribution``: the explicit closed form. The
  probability of realizing one split tree is an alternating sum over
  subsets of its edges; cutting a subset H regroups the leaves, and each
  term combines the powered hold probability of the regrouped leaves with
  per-node marginal rates divided by log hold-probability gaps. When a
  gap degenerates (coincident aggregate rates) the closed form is invalid
  and the value falls back to the exact first-split integral recursion,
  evaluated by adaptive quadrature anchored at the deepest subtrees whose
  gaps are sound.
* ``semigroup_distribution``: uniformization of the generator with a
  certified Poisson truncation tail.
* ``simulate`` / ``classify_trajectory``: Monte Carlo over the jump
  chain, with trajectories mapped back to the unique tree they realize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import stats
from scipy.integrate import quad

from .errors import ConsistencyError, ValidationError
from .partitions import SetPartition, refines
from .process import ProcessModel, marginal_rate
from .trees import DEFAULT_TREE_CAP, FragTree, TreeNode, enumerate_trees

DEFAULT_TAIL = 1e-13
DEFAULT_DENOMINATOR_RTOL = 1e-9
QUAD_TOL = 1e-10


@dataclass(frozen=True)
class TreeLawTerm:
    """The probability mass one tree contributes at a given time.

    ``degenerate`` marks values produced by the integral fallback because
    some closed-form denominator vanished to tolerance.
    """

    tree: FragTree
    value: float
    degenerate: bool


@dataclass(frozen=True, eq=False)
class LawReport:
    """A distribution over the state space with method metadata."""

    time: float
    method: str
    distribution: Mapping[SetPartition, float]
    diagnostics: Mapping[str, object]
    std_errors: Mapping[SetPartition, float] | None = None


@dataclass(frozen=True)
class Trajectory:
    """A jump skeleton: visited states and the times they were entered.

    ``states[0]`` is the start state; ``jump_times[k]`` is when
    ``states[k+1]`` was entered. All jumps happen before the horizon.
    """

    jump_times: tuple[float, ...]
    states: tuple[SetPartition, ...]
    horizon: float

    def __post_init__(self) -> None:
        if len(self.states) != len(self.jump_times) + 1:
            raise ValidationError("a trajectory needs one more state than jump times")
        last = 0.0
        for t in self.jump_times:
            if not t > last:
                raise ValidationError("jump times must be strictly increasing and positive")
            last = t
        if self.jump_times and self.jump_times[-1] > self.horizon:
            raise ValidationError("jumps cannot happen after the horizon")
        for a, b in zip(self.states, self.states[1:]):
            if a == b or not refines(a, b):
                raise ValidationError("each visited state must strictly refine its predecessor")


# ---------------------------------------------------------------------------
# Uniformization


def _poisson_weights(mean: float, tail: float) -> np.ndarray:
    """Poisson pmf values 0..k with right-tail mass certified below ``tail``."""
    if mean <= 0.0:
        return np.ones(1)
    k = int(stats.poisson.isf(tail, mean)) + 1
    while stats.poisson.sf(k, mean) >= tail:
        k += max(8, k // 8)
    return stats.poisson.pmf(np.arange(k + 1), mean)


def uniformized_row(
    generator: np.ndarray, t: float, start: int = 0, tail: float = DEFAULT_TAIL
) -> np.ndarray:
    """One row of ``exp(generator * t)`` as a Poisson mixture of kernel powers.

    Works for full generators and for sub-generator blocks (rows summing
    below zero). All series terms are nonnegative, and for blocks the
    retained mass per power is non-increasing, so the truncation is also
    relatively accurate for surviving mass.
    """
    q = np.asarray(generator, dtype=float)
    n = q.shape[0]
    row = np.zeros(n)
    row[start] = 1.0
    rate = float(-q.diagonal().min()) if n else 0.0
    if t == 0.0 or rate <= 0.0:
        return row
    kernel = np.maximum(q / rate + np.eye(n), 0.0)
    weights = _poisson_weights(rate * t, tail)
    acc = weights[0] * row
    v = row
    for w in weights[1:]:
        v = v @ kernel
        acc = acc + w * v
    return acc


def uniformized_matrix(
    generator: np.ndarray, t: float, tail: float = DEFAULT_TAIL
) -> np.ndarray:
    """All of ``exp(generator * t)`` by the same Poisson mixture."""
    q = np.asarray(generator, dtype=float)
    n = q.shape[0]
    rate = float(-q.diagonal().min()) if n else 0.0
    if t == 0.0 or rate <= 0.0:
        return np.eye(n)
    kernel = np.maximum(q / rate + np.eye(n), 0.0)
    weights = _poisson_weights(rate * t, tail)
    acc = weights[0] * np.eye(n)
    m = np.eye(n)
    for w in weights[1:]:
        m = m @ kernel
        acc = acc + w * m
    return acc


def semigroup_distribution(
    model: ProcessModel, t: float, tail: float = DEFAULT_TAIL
) -> LawReport:
    """The law at time ``t`` from the start state, via uniformization."""
    if t < 0:
        raise ValidationError("time must be nonnegative")
    row = uniformized_row(model.generator, t, start=0, tail=tail)
    rate = float(model.sojourn_rates.max())
    terms = len(_poisson_weights(rate * t, tail)) if t > 0 and rate > 0 else 1
    distribution = {p: float(row[i]) for i, p in enumerate(model.states)}
    return LawReport(
        time=t,
        method="semigroup",
        distribution=distribution,
        diagnostics={"uniformization_rate": rate, "terms": terms, "tail_bound": tail},
    )


# ---------------------------------------------------------------------------
# Closed form per tree


class _TreeLaw:
    """Per-tree evaluation state: node records, edge masks, hold caches."""

    def __init__(self, model: ProcessModel, tree: FragTree, tol: float):
        self.holds = model.holds
        self.tol = tol
        self.partition: list[SetPartition] = []
        self.carrier: list[int] = []
        self.log_unsplit: list[float] = []
        self.rate: list[float] = []
        self.slots: list[list[tuple[int, int | None]]] = []
        self.edge_of: list[int | None] = []
        self.submask: list[int] = []
        self.subnodes: list[list[int]] = []
        self.rate_product: list[float] = []
        self._leaf_memo: dict[tuple[int, int], float] = {}
        assert tree.root is not None
        self._add(model, tree.root)

    def _add(self, model: ProcessModel, node: TreeNode) -> int:
        v = len(self.partition)
        self.partition.append(node.partition)
        self.carrier.append(node.carrier)
        self.log_unsplit.append(self.holds.log_hold(node.carrier))
        self.rate.append(marginal_rate(model.rho, node.carrier, node.partition))
        self.slots.append([])
        self.edge_of.append(None)
        self.submask.append(0)
        self.subnodes.append([v])
        self.rate_product.append(self.rate[v])
        for atom, child in zip(node.partition.atoms, node.children):
            if child is None:
                self.slots[v].append((atom, None))
            else:
                c = self._add(model, child)
                edge = sum(1 for e in self.edge_of[:c] if e is not None)
                self.edge_of[c] = edge
                self.slots[v].append((atom, c))
                self.submask[v] |= (1 << edge) | self.submask[c]
                self.subnodes[v].extend(self.subnodes[c])
                self.rate_product[v] *= self.rate_product[c]
        return v

    def leaves_log_hold(self, v: int, cut: int) -> float:
        """Log hold probability of the leaf partition of subtree ``v``
        after cutting the edge subset ``cut``."""
        key = (v, cut & self.submask[v])
        cached = self._leaf_memo.get(key)
        if cached is not None:
            return cached
        total = 0.0
        for atom, child in self.slots[v]:
            if child is None or (cut >> self.edge_of[child]) & 1:
                total += self.holds.log_hold(atom)
            else:
                total += self.leaves_log_hold(child, cut)
        self._leaf_memo[key] = total
        return total

    def closed_form(self, v: int, t: float) -> float | None:
        """Alternating sum over cut subsets of subtree ``v``'s edges.

        Returns None as soon as a denominator is within tolerance of
        zero; the caller then switches to the integral recursion.
        """
        edges = [self.edge_of[u] for u in self.subnodes[v] if self.edge_of[u] is not None and u != v]
        edges = sorted(e for e in edges if (self.submask[v] >> e) & 1)
        m = len(edges)
        log_triv = self.log_unsplit[v]
        rate_prod = self.rate_product[v]
        base = math.exp(log_triv * t)
        total = 0.0
        for i in range(1 << m):
            g = i ^ (i >> 1)
            cut = 0
            bits = g
            pos = 0
            while bits:
                if bits & 1:
                    cut |= 1 << edges[pos]
                bits >>= 1
                pos += 1
            denom = 1.0
            for u in self.subnodes[v]:
                gap = self.leaves_log_hold(u, cut) - self.log_unsplit[u]
                if abs(gap) < self.tol:
                    return None
                denom *= gap
            sign = -1.0 if g.bit_count() & 1 else 1.0
            top = math.exp(self.leaves_log_hold(v, cut) * t) - base
            total += sign * top * rate_prod / denom
        return total

    def value(self, v: int, t: float) -> tuple[float, bool]:
        """Subtree probability at ``t``: closed form, else the first-split
        integral with closed forms anchored wherever they are sound."""
        closed = self.closed_form(v, t)
        if closed is not None:
            return closed, False
        rate = self.rate[v]
        log_triv = self.log_unsplit[v]
        slots = self.slots[v]

        def integrand(u: float) -> float:
            f = rate * math.exp(log_triv * u)
            s = t - u
            for atom, child in slots:
                if child is None:
                    f *= math.exp(self.holds.log_hold(atom) * s)
                else:
                    f *= self.value(child, s)[0]
            return f

        val, _err = quad(integrand, 0.0, t, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)
        return float(val), True


def tree_law(
    model: ProcessModel,
    tree: FragTree,
    t: float,
    denominator_rtol: float = DEFAULT_DENOMINATOR_RTOL,
) -> TreeLawTerm:
    """Probability that the chain realizes exactly this tree by time ``t``.

    Realizing the tree means performing precisely its splits by ``t``, in
    tree order along every root-to-leaf path, and none of the leaf splits.
    """
    if t < 0:
        raise ValidationError("time must be nonnegative")
    if tree.carrier != model.carrier:
        raise ValidationError("the tree must cover the model carrier")
    if tree.root is None:
        value = math.exp(model.holds.log_hold(tree.carrier) * t)
        return TreeLawTerm(tree=tree, value=value, degenerate=False)
    calc = _TreeLaw(model, tree, tol=denominator_rtol * model.rho.total)
    value, degenerate = calc.value(0, t)
    return TreeLawTerm(tree=tree, value=value, degenerate=degenerate)


def law_distribution(
    model: ProcessModel,
    t: float,
    tree_cap: int = DEFAULT_TREE_CAP,
    denominator_rtol: float = DEFAULT_DENOMINATOR_RTOL,
) -> LawReport:
    """The law at time ``t`` as per-state sums of tree probabilities."""
    if t < 0:
        raise ValidationError("time must be nonnegative")
    distribution: dict[SetPartition, float] = {}
    n_trees = 0
    n_degenerate = 0
    for state in model.states:
        total = 0.0
        for tree in enumerate_trees(model, state, tree_cap=tree_cap):
            term = tree_law(model, tree, t, denominator_rtol=denominator_rtol)
            total += term.value
            n_trees += 1
            n_degenerate += term.degenerate
        distribution[state] = total
    mass = sum(distribution.values())
    if abs(mass - 1.0) > 1e-8:
        raise ConsistencyError(f"tree-law distribution mass {mass!r} is off unity")
    return LawReport(
        time=t,
        method="formula",
        distribution=distribution,
        diagnostics={"trees": n_trees, "degenerate_terms": n_degenerate, "mass": mass},
    )


# ---------------------------------------------------------------------------
# Monte Carlo


def _round_rng(seed: int, stream: int) -> np.random.Generator:
    # One documented counter-based stream per draw round: holding times
    # use stream 2r, jump selectors stream 2r+1; slot i in each drawn
    # array belongs to replicate i. Deterministic for any worker count.
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,))))


def simulate(
    model: ProcessModel,
    t: float,
    n: int,
    seed: int = 0,
    trajectories: bool = True,
) -> tuple[LawReport, tuple[Trajectory, ...]]:
    """``n`` independent runs of the jump chain up to horizon ``t``.

    Exponential holding at the sojourn rate, jump kernel proportional to
    the generator row. Bit-identical for a fixed seed.
    """
    if n < 1:
        raise ValidationError("the replicate count must be at least 1")
    if t < 0:
        raise ValidationError("time must be nonnegative")
    q = model.generator
    rates = model.sojourn_rates
    kernels: list[tuple[np.ndarray, np.ndarray] | None] = []
    for i in range(model.n):
        if rates[i] <= 0:
            kernels.append(None)
            continue
        targets = np.nonzero(q[i] > 0)[0]
        cum = np.cumsum(q[i, targets]) / rates[i]
        cum[-1] = 1.0
        kernels.append((targets, cum))
    state = np.zeros(n, dtype=np.int64)
    time = np.zeros(n)
    finished = np.zeros(n, dtype=bool)
    events: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    rounds = 0
    while True:
        active = ~finished & (rates[state] > 0)
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        hold = _round_rng(seed, 2 * rounds).standard_exponential(idx.size) / rates[state[idx]]
        pick = _round_rng(seed, 2 * rounds + 1).random(idx.size)
        newt = time[idx] + hold
        jumped = newt <= t
        finished[idx[~jumped]] = True
        jidx = idx[jumped]
        rounds += 1
        if jidx.size == 0:
            continue
        time[jidx] = newt[jumped]
        u = pick[jumped]
        cur = state[jidx]
        nxt = np.empty(jidx.size, dtype=np.int64)
        for s in np.unique(cur):
            mask = cur == s
            targets, cum = kernels[s]  # type: ignore[misc]
            nxt[mask] = targets[np.searchsorted(cum, u[mask], side="right")]
        state[jidx] = nxt
        if trajectories:
            events.append((jidx, time[jidx].copy(), nxt.copy()))
    counts = np.bincount(state, minlength=model.n).astype(float)
    freq = counts / n
    distribution = {p: float(freq[i]) for i, p in enumerate(model.states)}
    std_errors = {
        p: float(math.sqrt(freq[i] * (1.0 - freq[i]) / n)) for i, p in enumerate(model.states)
    }
    report = LawReport(
        time=t,
        method="montecarlo",
        distribution=distribution,
        diagnostics={"replicates": n, "seed": seed, "rounds": rounds},
        std_errors=std_errors,
    )
    trajs: tuple[Trajectory, ...] = ()
    if trajectories:
        per_times: list[list[float]] = [[] for _ in range(n)]
        per_states: list[list[int]] = [[] for _ in range(n)]
        for jidx, times, nxt in events:
            for r, tt, ss in zip(jidx, times, nxt):
                per_times[r].append(float(tt))
                per_states[r].append(int(ss))
        start = model.states[0]
        trajs = tuple(
            Trajectory(
                jump_times=tuple(per_times[r]),
                states=(start,) + tuple(model.states[s] for s in per_states[r]),
                horizon=t,
            )
            for r in range(n)
        )
    return report, trajs


def classify_trajectory(traj: Trajectory, model: ProcessModel) -> FragTree:
    """The unique split tree whose realization the trajectory witnesses.

    Rebuilds which atom split into which blocks at each jump and reads the
    result off as an augmented tree. The no-jump trajectory maps to the
    degenerate tree.
    """
    carrier = model.carrier
    if traj.states[0] != SetPartition.trivial(carrier):
        raise ValidationError("a trajectory must start at the one-block partition")
    root: dict | None = None
    open_slots: dict[int, dict | None] = {carrier: None}
    for prev, nxt in zip(traj.states, traj.states[1:]):
        prev_atoms = set(prev.atoms)
        nxt_atoms = set(nxt.atoms)
        gone = prev_atoms - nxt_atoms
        if len(gone) != 1:
            raise ValidationError("a trajectory step must split exactly one atom")
        atom = gone.pop()
        parts = tuple(a for a in nxt.atoms if a & atom)
        pieces = SetPartition(parts)
        if pieces.carrier != atom or len(pieces) < 2 or nxt_atoms != (prev_atoms - {atom}) | set(parts):
            raise ValidationError("a trajectory step is not a one-atom split")
        if marginal_rate(model.rho, atom, pieces) <= 0:
            raise ValidationError("a trajectory step is not achievable by the rated partitions")
        node = {"partition": pieces, "kids": {a: None for a in parts}}
        parent = open_slots.pop(atom)
        if parent is None:
            root = node
        else:
            parent["kids"][atom] = node
        for a in parts:
            open_slots[a] = node
    if root is None:
        return FragTree(carrier=carrier, root=None)

    def freeze(node: dict) -> TreeNode:
        p: SetPartition = node["partition"]
        slots = tuple(
            freeze(node["kids"][a]) if node["kids"][a] is not None else None for a in p.atoms
        )
        return TreeNode(partition=p, children=slots)

    return FragTree(carrier=carrier, root=freeze(root))
