"""Long-time behaviour: decay rate, quasi-limit, conditioned chain.

Absorption is certain, so the interesting object is the chain conditioned
on not being absorbed yet. The conditional law concentrates on the
pre-absorbing states with the slowest exit rate; the limit weights are
exponential transforms of the hitting times of those states, solved
exactly by back-substitution over the acyclic transition graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConsistencyError, ValidationError
from .law import uniformized_matrix, uniformized_row
from .partitions import SetPartition
from .process import ProcessModel

_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class QuasiLimitReport:
    """Decay constants and the limiting conditional distribution.

    * ``pre_absorbing``: states that can jump straight to absorption.
    * ``decay_rate``: the slowest exit rate among them; the survival
      probability decays at this exponential rate.
    * ``slow_states``: the pre-absorbing states achieving that rate (kept
      as a set; ties are legitimate).
    * ``outside_rate``: slowest exit rate among all other non-absorbed
      states, ``inf`` when there are none.
    * ``hit_transforms``: for each slow state, the expected exponentially
      tilted weight of hitting it from the start state.
    * ``normalizer``: sum of the transforms; the limit of the tilted
      survival probability.
    * ``distribution``: transforms normalized to the quasi-limit law.
    """

    pre_absorbing: tuple[SetPartition, ...]
    decay_rate: float
    slow_states: tuple[SetPartition, ...]
    outside_rate: float
    hit_transforms: Mapping[SetPartition, float]
    normalizer: float
    distribution: Mapping[SetPartition, float]


@dataclass(frozen=True, eq=False)
class QProcess:
    """The chain conditioned to never be absorbed.

    Supported on the states that can still reach a slow state; the
    generator is the transform-scaled twist of the original one, shifted
    by the decay rate, and its rows sum to zero.
    """

    support: tuple[SetPartition, ...]
    transforms: Mapping[SetPartition, float]
    generator: np.ndarray
    decay_rate: float


@dataclass(frozen=True)
class DecayReport:
    """Grid certificate for the exponential escape from the bulk states."""

    trivial: bool
    theta: float
    slope: float
    fitted_c: float
    rate_bound: float
    grid: tuple[float, ...]
    probabilities: tuple[float, ...]


def _reachability(model: ProcessModel) -> np.ndarray:
    """Boolean matrix: can state ``j`` ever be visited from state ``i``."""
    n = model.n
    q = model.generator
    reach = np.eye(n, dtype=bool)
    # states are topologically ordered, so one backward sweep suffices
    for i in range(n - 1, -1, -1):
        for j in np.nonzero(q[i] > 0)[0]:
            reach[i] |= reach[j]
    return reach


def _decay_pieces(model: ProcessModel) -> tuple[list[int], float, list[int], float]:
    q = model.generator
    absorbing = model.absorbing_index
    rates = model.sojourn_rates
    pre = [i for i in range(model.n) if i != absorbing and q[i, absorbing] > 0]
    if not pre:
        raise ConsistencyError("no state feeds the absorbing state")
    eta = float(min(rates[i] for i in pre))
    slow = [i for i in pre if rates[i] <= eta * (1.0 + _TIE_RTOL)]
    outside = [i for i in range(model.n) if i != absorbing and i not in slow]
    beta0 = float(min(rates[i] for i in outside)) if outside else math.inf
    if not eta < beta0:
        raise ConsistencyError("the slow exit rate does not separate from the remaining states")
    return slow, eta, pre, beta0


def hit_transform(model: ProcessModel, target: SetPartition, eta: float) -> np.ndarray:
    """Exponentially tilted hitting weights of ``target`` from every state.

    Solves the first-step system backwards over the topological order:
    the weight at the target is 1, states that cannot reach it carry 0,
    and otherwise (exit_rate - eta) * h(x) = sum of rates into y times
    h(y). Exit rates must dominate ``eta`` along every feeding path.
    """
    if target not in model.state_index:
        raise ValidationError("the transform target must be a state of the model")
    ti = model.state_index[target]
    q = model.generator
    reach = _reachability(model)
    h = np.zeros(model.n)
    h[ti] = 1.0
    for i in range(model.n - 1, -1, -1):
        if i == ti or not reach[i, ti]:
            continue
        denom = -q[i, i] - eta
        if denom <= 0:
            raise ConsistencyError(
                "a feeding state's exit rate does not dominate the decay rate"
            )
        h[i] = float(np.dot(q[i], h) / denom)
    return h


def quasi_limit(model: ProcessModel) -> QuasiLimitReport:
    """Decay constants and the limiting law conditioned on survival."""
    if model.n < 2:
        raise ValidationError("the chain has no transient state to condition on")
    slow, eta, pre, beta0 = _decay_pieces(model)
    transforms: dict[SetPartition, float] = {}
    for i in slow:
        h = hit_transform(model, model.states[i], eta)
        transforms[model.states[i]] = float(h[0])
    normalizer = float(sum(transforms.values()))
    if normalizer <= 0:
        raise ConsistencyError("the slow states are unreachable from the start state")
    distribution = {p: v / normalizer for p, v in transforms.items()}
    return QuasiLimitReport(
        pre_absorbing=tuple(model.states[i] for i in pre),
        decay_rate=eta,
        slow_states=tuple(model.states[i] for i in slow),
        outside_rate=beta0,
        hit_transforms=transforms,
        normalizer=normalizer,
        distribution=distribution,
    )


def survival_probability(model: ProcessModel, t: float, tail: float = 1e-13) -> float:
    """Probability of not being absorbed by ``t``, from the start state.

    Computed on the transient sub-semigroup, whose uniformization series
    has nonnegative terms only, so the value stays relatively accurate
    deep into the exponential tail.
    """
    if t < 0:
        raise ValidationError("time must be nonnegative")
    absorbing = model.absorbing_index
    keep = [i for i in range(model.n) if i != absorbing]
    if not keep:
        return 0.0
    sub = model.generator[np.ix_(keep, keep)]
    return float(uniformized_row(sub, t, start=0, tail=tail).sum())


def conditional_distribution(
    model: ProcessModel, t: float, tail: float = 1e-13
) -> dict[SetPartition, float]:
    """The law at ``t`` conditioned on not being absorbed yet."""
    if t < 0:
        raise ValidationError("time must be nonnegative")
    absorbing = model.absorbing_index
    keep = [i for i in range(model.n) if i != absorbing]
    if not keep:
        raise ValidationError("the chain has no transient state to condition on")
    sub = model.generator[np.ix_(keep, keep)]
    row = uniformized_row(sub, t, start=0, tail=tail)
    mass = float(row.sum())
    if mass < 1e-300:
        raise ValidationError(
            "survival probability underflows at this horizon; lower t or rescale rates"
        )
    return {model.states[i]: float(row[k] / mass) for k, i in enumerate(keep)}


def decay_certificate(
    model: ProcessModel,
    theta: float,
    grid: tuple[float, ...] | None = None,
    slope_tol: float = 1e-6,
) -> DecayReport:
    """Certify the exponential escape from states outside the slow set.

    Computes the probability of staying clear of the slow states and the
    absorbing state exactly (sub-semigroup on the remaining states) over a
    time grid, fits the log-linear slope, checks it against the outside
    rate, and returns the smallest constant making the grid obey the
    bound with rate ``exp(-outside_rate) + theta``.
    """
    if not theta > 0:
        raise ValidationError("theta must be positive")
    slow, _eta, _pre, beta0 = _decay_pieces(model)
    absorbing = model.absorbing_index
    bulk = [i for i in range(model.n) if i != absorbing and i not in slow]
    if not bulk or 0 not in bulk:
        # the start state is already a slow state: the event never happens
        return DecayReport(
            trivial=True,
            theta=theta,
            slope=0.0,
            fitted_c=0.0,
            rate_bound=math.exp(-beta0) + theta if math.isfinite(beta0) else theta,
            grid=(),
            probabilities=(),
        )
    sub = model.generator[np.ix_(bulk, bulk)]
    rates = sorted(set(float(r) for r in -sub.diagonal()))
    if grid is None:
        if len(rates) > 1:
            horizon = 20.0 / (rates[1] - rates[0])
        else:
            horizon = 10.0 / rates[0]
        horizon = min(horizon, 250.0 / beta0)
        grid = tuple(np.linspace(horizon, 2.0 * horizon, 5))
    start = bulk.index(0)
    probs = []
    for t in grid:
        row = uniformized_row(sub, float(t), start=start)
        probs.append(float(row.sum()))
    ts = np.asarray(grid)
    logs = np.log(np.asarray(probs))
    slope = float(np.polyfit(ts, logs, 1)[0])
    if slope > -beta0 + slope_tol:
        raise ConsistencyError(
            f"fitted escape slope {slope!r} exceeds the outside rate bound {-beta0!r}"
        )
    rate_bound = math.exp(-beta0) + theta
    fitted_c = float(max(p / rate_bound**t for p, t in zip(probs, grid)))
    return DecayReport(
        trivial=False,
        theta=theta,
        slope=slope,
        fitted_c=fitted_c,
        rate_bound=rate_bound,
        grid=tuple(float(t) for t in grid),
        probabilities=tuple(probs),
    )


def qprocess(model: ProcessModel, check_times: tuple[float, ...] = (0.5, 1.0)) -> QProcess:
    """The never-absorbed chain: support, transform vector and generator.

    Verifies internally that the transform vector is a right eigenvector
    of the restricted semigroup at the check times and that the twisted
    generator rows sum to zero.
    """
    if model.n < 2:
        raise ValidationError("the chain has no transient state to condition on")
    slow, eta, _pre, _beta0 = _decay_pieces(model)
    absorbing = model.absorbing_index
    keep = [i for i in range(model.n) if i != absorbing]
    reach = _reachability(model)
    phi_full = np.zeros(model.n)
    for i in slow:
        phi_full += hit_transform(model, model.states[i], eta)
    support_idx = [i for i in keep if any(reach[i, j] for j in slow)]
    if not support_idx:
        raise ConsistencyError("no state can reach the slow set")
    phi = phi_full[support_idx]
    if not (phi > 0).all():
        raise ConsistencyError("a supported state carries a vanishing transform")
    k = len(support_idx)
    q = model.generator
    gen = np.zeros((k, k))
    for a, i in enumerate(support_idx):
        for b, j in enumerate(support_idx):
            if i == j:
                gen[a, b] = eta + q[i, i]
            else:
                gen[a, b] = q[i, j] * phi[b] / phi[a]
    row_sums = np.abs(gen.sum(axis=1))
    if row_sums.max() > 1e-9:
        raise ConsistencyError("the conditioned generator rows do not sum to zero")
    sub = q[np.ix_(keep, keep)]
    phi_keep = phi_full[keep]
    for t in check_times:
        pt = uniformized_matrix(sub, float(t))
        lhs = pt @ phi_keep
        rhs = math.exp(-eta * t) * phi_keep
        if np.abs(lhs - rhs).max() > 1e-8:
            raise ConsistencyError(
                "the transform vector is not an eigenvector of the restricted semigroup"
            )
    gen.setflags(write=False)
    return QProcess(
        support=tuple(model.states[i] for i in support_idx),
        transforms={model.states[i]: float(phi_full[i]) for i in support_idx},
        generator=gen,
        decay_rate=eta,
    )
