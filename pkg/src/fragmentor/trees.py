"""Split trees: validation, augmentation, erasure and enumeration.

A split tree records which atom of which node was split into which finer
blocks, one node per split. The augmented form aligns each node's
children with its atoms: a child slot holds either a finer split of that
atom or nothing, in which case the atom is a leaf. There is a conceptual
top node holding the whole carrier in one block; it is kept implicit. The
leaves of a tree always form a partition of the carrier, and the trees
whose leaves equal a given state index the terms of the explicit law.

Node identity is positional: two children of one node split distinct
atoms, so carriers are pairwise distinct across a valid tree and a tree
is determined by its node partitions alone. Witness choices are summed
into marginal rates, never used to distinguish trees.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import CapacityError, ValidationError
from .partitions import SetPartition, SiteSet, restrict, refines
from .process import ProcessModel, RateFamily, marginal_rate

DEFAULT_TREE_CAP = 1_000_000


@dataclass(frozen=True)
class TreeNode:
    """One split: a non-trivial partition with a child slot per atom.

    ``children[k]`` refines ``partition.atoms[k]`` further, or is None
    when that atom is a leaf of the tree.
    """

    partition: SetPartition
    children: tuple["TreeNode | None", ...]

    def __post_init__(self) -> None:
        if self.partition.is_trivial:
            raise ValidationError("a tree node must split its carrier")
        if len(self.children) != len(self.partition):
            raise ValidationError("a node needs one child slot per atom")
        for atom, child in zip(self.partition.atoms, self.children):
            if child is not None and child.partition.carrier != atom:
                raise ValidationError("a child must partition the atom it splits")

    @property
    def carrier(self) -> int:
        return self.partition.carrier


@dataclass(frozen=True)
class FragTree:
    """An augmented split tree over ``carrier``.

    ``root`` is None for the degenerate tree (no split happened; the
    single leaf is the whole carrier).
    """

    carrier: int
    root: TreeNode | None

    def __post_init__(self) -> None:
        if self.carrier <= 0:
            raise ValidationError("a tree needs a nonempty carrier")
        if self.root is not None and self.root.carrier != self.carrier:
            raise ValidationError("the root must partition the tree carrier")

    def leaves(self) -> SetPartition:
        """The partition of the carrier formed by the unsplit atoms."""
        if self.root is None:
            return SetPartition.trivial(self.carrier)
        masks: list[int] = []

        def collect(node: TreeNode) -> None:
            for atom, child in zip(node.partition.atoms, node.children):
                if child is None:
                    masks.append(atom)
                else:
                    collect(child)

        collect(self.root)
        return SetPartition(tuple(masks))

    def original_nodes(self) -> tuple[TreeNode, ...]:
        """All split nodes in preorder (the implicit top node excluded)."""
        if self.root is None:
            return ()
        out: list[TreeNode] = []

        def walk(node: TreeNode) -> None:
            out.append(node)
            for child in node.children:
                if child is not None:
                    walk(child)

        walk(self.root)
        return tuple(out)

    def edges(self) -> tuple[tuple[SetPartition, SetPartition], ...]:
        """Parent-child pairs between split nodes, in preorder."""
        out: list[tuple[SetPartition, SetPartition]] = []

        def walk(node: TreeNode) -> None:
            for child in node.children:
                if child is not None:
                    out.append((node.partition, child.partition))
                    walk(child)

        if self.root is not None:
            walk(self.root)
        return tuple(out)

    @property
    def size(self) -> int:
        return len(self.original_nodes())

    def sort_key(self):
        return _node_key(self.root)

    def to_bare(self) -> "BareTree":
        """Strip the leaf slots back to explicit nodes and edges."""
        if self.root is None:
            return BareTree.empty()
        nodes = [n.partition for n in self.original_nodes()]
        return BareTree(
            root=self.root.partition,
            nodes=frozenset(nodes),
            edges=frozenset(self.edges()),
        )


def _node_key(node: TreeNode | None):
    if node is None:
        return ()
    return (node.partition.atoms, tuple(_node_key(c) for c in node.children))


@dataclass(frozen=True)
class BareTree:
    """A split tree as explicit nodes and edges, before augmentation.

    ``root`` is None only for the empty tree. Use ``augment`` to validate
    the structure against a rate family and obtain a FragTree.
    """

    root: SetPartition | None
    nodes: frozenset[SetPartition]
    edges: frozenset[tuple[SetPartition, SetPartition]]

    @classmethod
    def empty(cls) -> "BareTree":
        return cls(root=None, nodes=frozenset(), edges=frozenset())

    @classmethod
    def from_edges(
        cls, root: SetPartition, edges: Iterable[tuple[SetPartition, SetPartition]]
    ) -> "BareTree":
        edge_set = frozenset(edges)
        nodes = {root}
        for a, b in edge_set:
            nodes.add(a)
            nodes.add(b)
        return cls(root=root, nodes=frozenset(nodes), edges=edge_set)


def augment(rho: RateFamily, tree: BareTree) -> FragTree:
    """Validate a bare split tree and fill in its leaf slots.

    Raises ValidationError naming the violated rule. The empty tree
    becomes the degenerate tree over the family carrier.
    """
    if tree.root is None:
        if tree.nodes or tree.edges:
            raise ValidationError("a tree without a root must have no nodes or edges")
        return FragTree(carrier=rho.carrier, root=None)
    if tree.root not in tree.nodes:
        raise ValidationError("the root must be one of the nodes")
    for p in tree.nodes:
        if p.is_trivial:
            raise ValidationError("every node must split its carrier into at least two blocks")
    children: dict[SetPartition, dict[int, SetPartition]] = {p: {} for p in tree.nodes}
    incoming: dict[SetPartition, int] = {p: 0 for p in tree.nodes}
    for parent, child in tree.edges:
        if parent not in tree.nodes or child not in tree.nodes:
            raise ValidationError("every edge must connect two declared nodes")
        atom = child.carrier
        if atom not in parent.atoms:
            raise ValidationError("a child must split exactly one atom of its parent")
        if atom in children[parent]:
            raise ValidationError("siblings must split distinct atoms of their parent")
        if marginal_rate(rho, atom, child) <= 0.0:
            raise ValidationError("each split must be achievable by a rated partition")
        children[parent][atom] = child
        incoming[child] += 1
    if incoming[tree.root] != 0:
        raise ValidationError("the root must have no incoming edge")
    for p, k in incoming.items():
        if p != tree.root and k != 1:
            raise ValidationError("every non-root node needs exactly one parent")
    if marginal_rate(rho, tree.root.carrier, tree.root) <= 0.0:
        raise ValidationError("the root split must be achievable by a rated partition")
    reached = {tree.root}
    queue = deque([tree.root])
    while queue:
        p = queue.popleft()
        for child in children[p].values():
            if child in reached:
                raise ValidationError("the edges must form a tree rooted at the declared root")
            reached.add(child)
            queue.append(child)
    if reached != tree.nodes:
        raise ValidationError("every node must be reachable from the root")

    def build(p: SetPartition) -> TreeNode:
        slots = tuple(
            build(children[p][atom]) if atom in children[p] else None for atom in p.atoms
        )
        return TreeNode(partition=p, children=slots)

    return FragTree(carrier=tree.root.carrier, root=build(tree.root))


def erase(
    tree: FragTree,
    anchor: SetPartition,
    dropped: Iterable[tuple[SetPartition, SetPartition]],
) -> FragTree:
    """The subtree at ``anchor`` with the given edges cut.

    Cutting an edge turns the parent atom back into a leaf; everything
    hanging below the cut disappears. The result is an augmented tree
    over the union of ``anchor``'s atoms.
    """
    target: TreeNode | None = None
    for node in tree.original_nodes():
        if node.partition == anchor:
            target = node
            break
    if target is None:
        raise ValidationError("the anchor must be an original node of the tree")
    drop = frozenset(tuple(e) for e in dropped)
    known = set(tree.edges())
    for e in drop:
        if e not in known:
            raise ValidationError("every dropped edge must be an original edge of the tree")

    def prune(node: TreeNode) -> TreeNode:
        slots = []
        for atom, child in zip(node.partition.atoms, node.children):
            if child is None or (node.partition, child.partition) in drop:
                slots.append(None)
            else:
                slots.append(prune(child))
        return TreeNode(partition=node.partition, children=tuple(slots))

    return FragTree(carrier=target.carrier, root=prune(target))


def _split_options(rho: RateFamily, sites: int) -> list[tuple[SetPartition, float]]:
    """Distinct non-trivial ways the family can split ``sites``, with rates."""
    found: dict[SetPartition, float] = {}
    for g in rho.keys:
        local = restrict(g, sites)
        if local.is_trivial:
            continue
        found[local] = found.get(local, 0.0) + rho.rates[g]
    return sorted(found.items(), key=lambda kv: kv[0].sort_key)


def count_trees(model: ProcessModel, target: SetPartition) -> int:
    """Number of split trees whose leaves equal ``target``."""
    if target not in model.state_index:
        raise ValidationError("the target must be a state of the model")
    if target.is_trivial:
        return 1
    memo: dict[int, int] = {}

    def count(sites: int) -> int:
        if sites in memo:
            return memo[sites]
        local_target = restrict(target, sites)
        target_atoms = set(local_target.atoms)
        total = 0
        for beta, _rate in _split_options(model.rho, sites):
            if not refines(beta, local_target):
                continue
            prod = 1
            for atom in beta.atoms:
                if atom in target_atoms:
                    continue
                prod *= count(atom)
                if prod == 0:
                    break
            total += prod
        memo[sites] = total
        return total

    return count(model.carrier)


def enumerate_trees(
    model: ProcessModel, target: SetPartition, tree_cap: int = DEFAULT_TREE_CAP
) -> tuple[FragTree, ...]:
    """Every split tree whose leaves equal ``target``, each exactly once.

    Generated top-down: a node over ``sites`` is any achievable split that
    the target refines; each atom either matches a target atom (a leaf) or
    recurses. Results come in canonical order. Counts are checked first
    against ``tree_cap``; the semigroup method avoids enumeration entirely
    if the cap is too small.
    """
    n = count_trees(model, target)
    if n > tree_cap:
        raise CapacityError(
            f"{n} trees exceed the cap of {tree_cap}; "
            "the semigroup method avoids tree enumeration"
        )
    if target.is_trivial:
        return (FragTree(carrier=model.carrier, root=None),)
    memo: dict[int, tuple[TreeNode, ...]] = {}

    def options(sites: int) -> tuple[TreeNode, ...]:
        if sites in memo:
            return memo[sites]
        local_target = restrict(target, sites)
        target_atoms = set(local_target.atoms)
        out: list[TreeNode] = []
        for beta, _rate in _split_options(model.rho, sites):
            if not refines(beta, local_target):
                continue
            slot_choices: list[tuple[TreeNode | None, ...]] = []
            feasible = True
            for atom in beta.atoms:
                if atom in target_atoms:
                    slot_choices.append((None,))
                else:
                    subs = options(atom)
                    if not subs:
                        feasible = False
                        break
                    slot_choices.append(subs)
            if not feasible:
                continue
            for combo in itertools.product(*slot_choices):
                out.append(TreeNode(partition=beta, children=combo))
        result = tuple(out)
        memo[sites] = result
        return result

    roots = options(model.carrier)
    trees = tuple(FragTree(carrier=model.carrier, root=r) for r in roots)
    return tuple(sorted(trees, key=lambda t: t.sort_key()))


def iter_tree_nodes(tree: FragTree) -> Iterator[TreeNode]:
    yield from tree.original_nodes()


def tree_to_obj(sites: SiteSet, tree: FragTree) -> dict:
    """Emit a tree as nested JSON objects.

    Each entry carries the node partition, the atom it hangs from (the
    full carrier for the root), its children in atom order, and a leaf
    flag. The degenerate tree is a single leaf holding the carrier.
    """

    def leaf_obj(atom: int) -> dict:
        labels = sites.labels_of(atom)
        return {"node": [labels], "atom": labels, "leaf": True, "children": []}

    def node_obj(node: TreeNode, atom: int) -> dict:
        kids = []
        for a, child in zip(node.partition.atoms, node.children):
            kids.append(leaf_obj(a) if child is None else node_obj(child, a))
        return {
            "node": sites.format_partition(node.partition),
            "atom": sites.labels_of(atom),
            "leaf": False,
            "children": kids,
        }

    if tree.root is None:
        return leaf_obj(tree.carrier)
    return node_obj(tree.root, tree.carrier)
