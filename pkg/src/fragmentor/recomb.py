"""Finite-alphabet measures and the recombination dynamics.

A measure is a dense probability tensor over the product of per-site
alphabets, one axis per site in index order. Recombining by a partition
replaces the measure with the product of its marginals over the atoms.
The time-t solution mixes the recombinations of the initial measure with
the law of the fragmentation chain; a fixed-step integrator provides an
independent check, and the quasi-limit constants give the two-term
long-time approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .law import LawReport, law_distribution, semigroup_distribution
from .longtime import QuasiLimitReport, quasi_limit
from .partitions import SetPartition, bit_indices
from .process import ProcessModel

MAX_CELLS = 1_000_000
MASS_TOL = 1e-9
NEGATIVITY_SLACK = -1e-12


@dataclass(frozen=True)
class AlphabetSpec:
    """Per-site alphabet sizes, aligned with site indices."""

    sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes:
            raise ValidationError("an alphabet spec needs at least one site")
        if any(s < 2 for s in sizes):
            raise ValidationError("every site alphabet needs at least two letters")
        if math.prod(sizes) > MAX_CELLS:
            raise ValidationError(f"the joint state space exceeds the cap of {MAX_CELLS} cells")
        object.__setattr__(self, "sizes", sizes)

    @property
    def n(self) -> int:
        return len(self.sizes)

    def shape_of(self, carrier: int) -> tuple[int, ...]:
        return tuple(self.sizes[i] for i in bit_indices(carrier))


@dataclass(frozen=True, eq=False)
class Measure:
    """A probability tensor over the sites in ``carrier``.

    Axes follow ascending site index. The empty carrier is the scalar
    unit measure, so products need no special cases. ``strict=False``
    skips the mass and positivity checks (used only for reports whose
    values are meaningful but not probabilities at every time).
    """

    spec: AlphabetSpec
    carrier: int
    weights: np.ndarray
    strict: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if self.carrier < 0 or self.carrier.bit_length() > self.spec.n:
            raise ValidationError("the measure carrier must lie inside the alphabet sites")
        if w.shape != self.spec.shape_of(self.carrier):
            raise ValidationError(
                f"weights shape {w.shape} does not match carrier shape "
                f"{self.spec.shape_of(self.carrier)}"
            )
        if self.strict:
            if float(w.min()) < NEGATIVITY_SLACK:
                raise ValidationError("weights must be nonnegative")
            if abs(float(w.sum()) - 1.0) > MASS_TOL:
                raise ValidationError("weights must sum to one")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def unit(cls, spec: AlphabetSpec) -> "Measure":
        """The empty-carrier measure: the unit for products."""
        return cls(spec=spec, carrier=0, weights=np.ones(()))

    @classmethod
    def full(cls, spec: AlphabetSpec, weights) -> "Measure":
        return cls(spec=spec, carrier=(1 << spec.n) - 1, weights=np.asarray(weights, dtype=float))

    @classmethod
    def uniform(cls, spec: AlphabetSpec, carrier: int | None = None) -> "Measure":
        if carrier is None:
            carrier = (1 << spec.n) - 1
        shape = spec.shape_of(carrier)
        cells = math.prod(shape) if shape else 1
        return cls(spec=spec, carrier=carrier, weights=np.full(shape, 1.0 / cells))


def _marginal_weights(w: np.ndarray, carrier: int, keep: int) -> np.ndarray:
    axes = tuple(k for k, i in enumerate(bit_indices(carrier)) if not (keep >> i) & 1)
    return w.sum(axis=axes) if axes else w


def marginal(mu: Measure, keep: int) -> Measure:
    """The marginal of ``mu`` on the sites in ``keep``.

    ``keep`` may be empty, giving the scalar unit measure.
    """
    if keep & ~mu.carrier:
        raise ValidationError("marginal sites must lie inside the measure carrier")
    if keep == mu.carrier:
        return mu
    return Measure(
        spec=mu.spec, carrier=keep, weights=_marginal_weights(mu.weights, mu.carrier, keep),
        strict=mu.strict,
    )


def _product_weights(
    parts: Sequence[tuple[np.ndarray, int]]
) -> tuple[np.ndarray, int]:
    w = np.ones(())
    order: list[int] = []
    carrier = 0
    for pw, pc in parts:
        if pc & carrier:
            raise ValidationError("product factors must have disjoint carriers")
        w = np.multiply.outer(w, pw)
        order.extend(bit_indices(pc))
        carrier |= pc
    if order:
        perm = np.argsort(np.asarray(order), kind="stable")
        w = np.transpose(w, axes=tuple(perm))
    return w, carrier


def product(parts: Sequence[Measure]) -> Measure:
    """The product measure of factors with pairwise disjoint carriers."""
    if not parts:
        raise ValidationError("a product needs at least one factor")
    spec = parts[0].spec
    for m in parts:
        if m.spec != spec:
            raise ValidationError("product factors must share one alphabet spec")
    w, carrier = _product_weights([(m.weights, m.carrier) for m in parts])
    return Measure(spec=spec, carrier=carrier, weights=w)


def _recombine_weights(w: np.ndarray, carrier: int, p: SetPartition) -> np.ndarray:
    factors = [(_marginal_weights(w, carrier, a), a) for a in p.atoms]
    out, _ = _product_weights(factors)
    return out


def recombine(mu: Measure, p: SetPartition) -> Measure:
    """Replace ``mu`` by the product of its marginals over the atoms of ``p``.

    Idempotent; the one-block partition leaves the measure unchanged.
    """
    if p.carrier != mu.carrier:
        raise ValidationError("the partition must cover exactly the measure carrier")
    return Measure(
        spec=mu.spec, carrier=mu.carrier, weights=_recombine_weights(mu.weights, mu.carrier, p)
    )


def tv_norm(mu: Measure, nu: Measure) -> float:
    """Total variation distance as the L1 gap of the weight tensors."""
    if mu.spec != nu.spec or mu.carrier != nu.carrier:
        raise ValidationError("total variation needs measures over the same sites")
    return float(np.abs(mu.weights - nu.weights).sum())


@dataclass(frozen=True, eq=False)
class SolutionReport:
    """The measure at time ``t`` with method metadata."""

    time: float
    method: str
    measure: Measure
    diagnostics: Mapping[str, object]


def _check_alignment(model: ProcessModel, mu: Measure) -> None:
    if mu.spec.n != model.rho.sites.n:
        raise ValidationError("the measure alphabet must cover every model site")
    if mu.carrier != model.carrier:
        raise ValidationError("the measure must cover exactly the model carrier")


def solve(
    model: ProcessModel,
    mu: Measure,
    t: float,
    law_method: str = "semigroup",
    **law_kwargs,
) -> SolutionReport:
    """The exact solution: mix recombinations by the law of the chain."""
    _check_alignment(model, mu)
    if t < 0:
        raise ValidationError("time must be nonnegative")
    if law_method == "semigroup":
        report: LawReport = semigroup_distribution(model, t, **law_kwargs)
    elif law_method == "formula":
        report = law_distribution(model, t, **law_kwargs)
    else:
        raise ValidationError('law_method must be "semigroup" or "formula"')
    w = np.zeros(mu.weights.shape)
    for state in model.states:
        w += report.distribution[state] * _recombine_weights(mu.weights, mu.carrier, state)
    out = Measure(spec=mu.spec, carrier=mu.carrier, weights=w)
    return SolutionReport(
        time=t,
        method="recsol",
        measure=out,
        diagnostics={"law_method": report.method, "law": dict(report.diagnostics)},
    )


def ode_oracle(model: ProcessModel, mu: Measure, t: float, h: float) -> SolutionReport:
    """Classical fourth-order fixed-step integration of the dynamics.

    An independent oracle, deliberately without adaptive stepping so the
    error order stays clean. Mass drift is reported, never hidden by
    renormalizing the returned weights.
    """
    _check_alignment(model, mu)
    if t < 0:
        raise ValidationError("time must be nonnegative")
    if not h > 0:
        raise ValidationError("the step size must be positive")
    rho = model.rho
    total = rho.total
    carrier = mu.carrier

    def rhs(w: np.ndarray) -> np.ndarray:
        acc = -total * w
        for g in rho.keys:
            acc = acc + rho.rates[g] * _recombine_weights(w, carrier, g)
        return acc

    w = mu.weights.astype(float)
    remaining = t
    steps = 0
    while remaining > 1e-14 * max(t, 1.0):
        dt = min(h, remaining)
        k1 = rhs(w)
        k2 = rhs(w + 0.5 * dt * k1)
        k3 = rhs(w + 0.5 * dt * k2)
        k4 = rhs(w + dt * k3)
        w = w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        remaining -= dt
        steps += 1
    drift = abs(float(w.sum()) - 1.0)
    out = Measure(spec=mu.spec, carrier=mu.carrier, weights=w)
    return SolutionReport(
        time=t,
        method="ode",
        measure=out,
        diagnostics={"step": h, "steps": steps, "mass_drift": drift},
    )


def stationary_measure(model: ProcessModel, mu: Measure) -> Measure:
    """The limit measure: ``mu`` recombined by the absorbing partition.

    A fixed point of the dynamics, and the attractor of every start.
    """
    _check_alignment(model, mu)
    return recombine(mu, model.gamma_star)


def approx_solution(
    model: ProcessModel,
    mu: Measure,
    t: float,
    quasi: QuasiLimitReport | None = None,
) -> SolutionReport:
    """Two-term long-time approximation from the quasi-limit constants.

    Mixes the stationary measure with the slow-state recombinations,
    weighted by the tilted hitting transforms. Valid asymptotically; the
    report flags horizons below the heuristic burn-in, where the
    combination can leave the probability simplex.
    """
    _check_alignment(model, mu)
    if t < 0:
        raise ValidationError("time must be nonnegative")
    if quasi is None:
        quasi = quasi_limit(model)
    damp = math.exp(-quasi.decay_rate * t)
    w = (1.0 - damp * quasi.normalizer) * _recombine_weights(
        mu.weights, mu.carrier, model.gamma_star
    )
    for state, transform in quasi.hit_transforms.items():
        w = w + damp * transform * _recombine_weights(mu.weights, mu.carrier, state)
    gap = quasi.outside_rate - quasi.decay_rate
    burn_in_ok = bool(math.isinf(gap) or t * gap >= 3.0)
    out = Measure(spec=mu.spec, carrier=mu.carrier, weights=w, strict=False)
    return SolutionReport(
        time=t,
        method="approx",
        measure=out,
        diagnostics={
            "asymptotic_regime": burn_in_ok,
            "decay_rate": quasi.decay_rate,
            "normalizer": quasi.normalizer,
            "mass": float(w.sum()),
            "min_weight": float(w.min()),
        },
    )


def measure_from_obj(obj, sites_labels: Sequence) -> Measure:
    """Load a measure from ``{"sizes": {...}, "weights": [...]}``.

    Sizes are keyed by site label (JSON object keys are strings, so
    labels are matched by their string form); weights are row-major in
    site-index order.
    """
    if not isinstance(obj, dict) or "sizes" not in obj or "weights" not in obj:
        raise ValidationError('a measure file needs "sizes" and "weights" entries')
    sizes_obj = obj["sizes"]
    if not isinstance(sizes_obj, dict):
        raise ValidationError('"sizes" must map site labels to alphabet sizes')
    sizes = []
    for label in sites_labels:
        key = str(label)
        if key not in sizes_obj:
            raise ValidationError(f"missing alphabet size for site {label!r}")
        sizes.append(int(sizes_obj[key]))
    spec = AlphabetSpec(tuple(sizes))
    weights = np.asarray(obj["weights"], dtype=float)
    expected = math.prod(spec.sizes)
    if weights.ndim != 1 or weights.size != expected:
        raise ValidationError(f'"weights" must be a flat list of {expected} numbers')
    return Measure.full(spec, weights.reshape(spec.sizes))


def measure_to_obj(mu: Measure, sites_labels: Sequence) -> dict:
    """Emit a full-carrier measure in its JSON object form."""
    if mu.carrier != (1 << mu.spec.n) - 1:
        raise ValidationError("only full-carrier measures are serialized")
    return {
        "sizes": {str(label): mu.spec.sizes[i] for i, label in enumerate(sites_labels)},
        "weights": [float(x) for x in mu.weights.ravel(order="C")],
    }
