"""Set partitions of a finite site set and the one-atom split relation.

Sites carry arbitrary external labels but are handled internally as dense
indices ``0..n-1`` with ``n <= 64``. An atom is an ``int`` bitmask over
site indices; a partition is the tuple of its atoms sorted by minimum
site. Every partition therefore has exactly one machine representation,
so equality and hashing are exact and joins, restrictions and containment
checks reduce to word operations.

All values here are immutable and all operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator

from .errors import ValidationError

MAX_SITES = 64


def bit_indices(mask: int) -> Iterator[int]:
    """Yield the indices of the set bits of ``mask``, ascending."""
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def mask_from_indices(indices: Iterable[int]) -> int:
    mask = 0
    for i in indices:
        if i < 0:
            raise ValidationError("site indices must be nonnegative")
        mask |= 1 << i
    return mask


@dataclass(frozen=True)
class SetPartition:
    """A partition of a carrier set of sites into disjoint nonempty atoms.

    ``atoms`` is stored in canonical order (ascending minimum site), which
    construction enforces, so structural equality is partition equality.
    """

    atoms: tuple[int, ...]

    def __post_init__(self) -> None:
        atoms = tuple(sorted(self.atoms, key=lambda a: a & -a))
        if not atoms:
            raise ValidationError("a partition needs at least one atom")
        union = 0
        for a in atoms:
            if not isinstance(a, int) or a <= 0:
                raise ValidationError("atoms must be nonempty site bitmasks")
            if a & union:
                raise ValidationError("atoms must be pairwise disjoint")
            union |= a
        if union.bit_length() > MAX_SITES:
            raise ValidationError(f"carriers above {MAX_SITES} sites are not supported")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "_carrier", union)

    @classmethod
    def from_masks(cls, masks: Iterable[int]) -> "SetPartition":
        return cls(tuple(masks))

    @classmethod
    def from_sets(cls, sets: Iterable[Iterable[int]]) -> "SetPartition":
        return cls(tuple(mask_from_indices(s) for s in sets))

    @classmethod
    def trivial(cls, carrier: int) -> "SetPartition":
        """The one-block partition of ``carrier``."""
        return cls((carrier,))

    @classmethod
    def singletons(cls, carrier: int) -> "SetPartition":
        """The partition of ``carrier`` into single sites."""
        return cls(tuple(1 << i for i in bit_indices(carrier)))

    @property
    def carrier(self) -> int:
        return self._carrier  # type: ignore[attr-defined]

    @property
    def is_trivial(self) -> bool:
        return len(self.atoms) == 1

    @property
    def sort_key(self) -> tuple[int, tuple[int, ...]]:
        """Coarse-to-fine ordering key: atom count, then atom masks."""
        return (len(self.atoms), self.atoms)

    def __len__(self) -> int:
        return len(self.atoms)

    def __iter__(self) -> Iterator[int]:
        return iter(self.atoms)

    def __repr__(self) -> str:
        blocks = ["{" + ",".join(str(i) for i in bit_indices(a)) + "}" for a in self.atoms]
        return "SetPartition({" + ", ".join(blocks) + "})"


def join(p: SetPartition, q: SetPartition) -> SetPartition:
    """Common refinement: all nonempty pairwise intersections of atoms.

    Commutative, associative and idempotent; the one-block partition is
    the unit element.
    """
    if p.carrier != q.carrier:
        raise ValidationError("join requires partitions of the same carrier")
    pieces = [a & b for a in p.atoms for b in q.atoms if a & b]
    return SetPartition(tuple(pieces))


def refines(p: SetPartition, q: SetPartition) -> bool:
    """True when ``q`` is finer than or equal to ``p``.

    Every atom of ``q`` must sit inside an atom of ``p``; equivalent to
    ``join(p, q) == q``.
    """
    if p.carrier != q.carrier:
        raise ValidationError("refinement requires partitions of the same carrier")
    for b in q.atoms:
        low = b & -b
        for a in p.atoms:
            if a & low:
                if b & ~a:
                    return False
                break
    return True


def restrict(p: SetPartition, sites: int) -> SetPartition:
    """The partition ``p`` induces on a nonempty subset of its carrier."""
    if sites == 0:
        raise ValidationError("cannot restrict to an empty site set")
    if sites & ~p.carrier:
        raise ValidationError("restriction sites must lie inside the carrier")
    return SetPartition(tuple(a & sites for a in p.atoms if a & sites))


@dataclass(frozen=True)
class FragStep:
    """One split move: ``atom`` of ``source`` replaced by finer blocks.

    ``witnesses`` holds every family member inducing exactly this split;
    their rates are summed when the move becomes a generator entry.
    """

    source: SetPartition
    target: SetPartition
    atom: int
    witnesses: frozenset[SetPartition]


def fragmentations(p: SetPartition, family: Iterable[SetPartition]) -> tuple[FragStep, ...]:
    """All one-atom splits of ``p`` induced by members of ``family``.

    Splitting atom ``a`` with ``g`` replaces it by the blocks of ``g``
    restricted to ``a``; members whose restriction is the single block
    ``{a}`` produce no step. Steps are grouped by (source, target) with
    all witnesses kept, and returned in canonical target order.
    """
    members = tuple(family)
    for g in members:
        if g.carrier != p.carrier:
            raise ValidationError("family members must cover the same carrier as the partition")
    grouped: dict[SetPartition, tuple[int, set[SetPartition]]] = {}
    for a in p.atoms:
        rest = tuple(b for b in p.atoms if b != a)
        for g in members:
            local = restrict(g, a)
            if len(local) == 1:
                continue
            target = SetPartition(rest + local.atoms)
            if target in grouped:
                grouped[target][1].add(g)
            else:
                grouped[target] = (a, {g})
    return tuple(
        FragStep(source=p, target=t, atom=atom, witnesses=frozenset(ws))
        for t, (atom, ws) in sorted(grouped.items(), key=lambda kv: kv[0].sort_key)
    )


@dataclass(frozen=True)
class SiteSet:
    """Ordered external site labels; a label's position is its index."""

    labels: tuple

    def __post_init__(self) -> None:
        labels = tuple(self.labels)
        if not labels:
            raise ValidationError("a site set needs at least one site")
        if len(labels) > MAX_SITES:
            raise ValidationError(f"site sets above {MAX_SITES} sites are not supported")
        if len(set(labels)) != len(labels):
            raise ValidationError("site labels must be distinct")
        object.__setattr__(self, "labels", labels)

    @cached_property
    def _index(self) -> dict:
        return {label: i for i, label in enumerate(self.labels)}

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def full_mask(self) -> int:
        return (1 << len(self.labels)) - 1

    def index(self, label) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ValidationError(f"unknown site label {label!r}") from None

    def mask_of(self, labels: Iterable) -> int:
        return mask_from_indices(self.index(x) for x in labels)

    def labels_of(self, mask: int) -> list:
        if mask & ~self.full_mask:
            raise ValidationError("mask contains sites outside this site set")
        return [self.labels[i] for i in bit_indices(mask)]

    def parse_partition(self, obj, carrier: int | None = None) -> SetPartition:
        """Read a partition literal: a JSON-style list of lists of labels."""
        if not isinstance(obj, (list, tuple)):
            raise ValidationError("a partition literal must be a list of lists of site labels")
        masks = []
        for block in obj:
            if not isinstance(block, (list, tuple)):
                raise ValidationError("each block of a partition literal must be a list of site labels")
            m = self.mask_of(block)
            if m.bit_count() != len(block):
                raise ValidationError("a block must not repeat a site label")
            masks.append(m)
        p = SetPartition(tuple(masks))
        if carrier is not None and p.carrier != carrier:
            raise ValidationError(
                f"partition covers {self.labels_of(p.carrier)} but must cover {self.labels_of(carrier)}"
            )
        return p

    def format_partition(self, p: SetPartition) -> list:
        """Emit a partition literal in canonical order."""
        return [self.labels_of(a) for a in p.atoms]
