"""Set-partition calculus and genealogical classification of k-tuples.

A k-tuple of pairwise non-ancestral vertices induces, at each level m, the
partition of slot indices grouping slots whose vertices share a
generation-m ancestor. As m grows the partition only refines, starting
from one block at the root and ending in singletons once every pairwise
most recent common ancestor has been passed. The generations at which the
block count strictly increases are the tuple's split times; together with
the partitions there they form its genealogical signature.

Slots whose vertex is shallower than the queried level are assigned a
slot-indexed virtual leaf, distinct from every tree vertex and from every
other slot's leaf, so all level queries stay well defined. All values
here are immutable and the functions pure.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import SignatureError, TupleError
from .tree import MarkedTree, ancestor_at, is_ancestor, mrca_generation

__all__ = [
    "Partition",
    "IncreasingCollection",
    "GenealogySignature",
    "first_full_split",
    "partition_process",
    "coalescent_times",
    "upsilon_member",
    "genealogy_indicator",
    "reduce_collection",
    "enumerate_increasing_collections",
    "enumerate_partitions",
    "hereditary_check",
    "Constraint",
    "make_f_lambda",
    "make_f_m",
    "make_F_ell_s",
    "constant_one",
]

MAX_GROUND = 6  # collection enumeration is Bell-number hard beyond this


# ---------------------------------------------------------------------------
# partitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Partition:
    """Partition of {1..k} in canonical form: sorted blocks ordered by least element."""

    blocks: tuple

    def __post_init__(self):
        seen = set()
        for b in self.blocks:
            for i in b:
                if i in seen:
                    raise SignatureError(f"element {i} repeated across blocks")
                seen.add(i)
        ground = set(range(1, len(seen) + 1))
        if seen != ground:
            raise SignatureError(f"blocks do not partition 1..{len(seen)}")
        canon = tuple(sorted((tuple(sorted(b)) for b in self.blocks), key=lambda b: b[0]))
        if canon != self.blocks:
            raise SignatureError("blocks not in canonical least-element order")

    @classmethod
    def make(cls, blocks) -> "Partition":
        canon = tuple(sorted((tuple(sorted(b)) for b in blocks), key=lambda b: b[0]))
        return cls(canon)

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        """Partition grouping equal labels; labels is a sequence over slots 1..k."""
        groups = {}
        for i, lab in enumerate(labels, start=1):
            groups.setdefault(lab, []).append(i)
        return cls.make(groups.values())

    @classmethod
    def one_block(cls, k: int) -> "Partition":
        return cls.make([range(1, k + 1)])

    @classmethod
    def singletons(cls, k: int) -> "Partition":
        return cls.make([[i] for i in range(1, k + 1)])

    @property
    def k(self) -> int:
        return sum(len(b) for b in self.blocks)

    def __len__(self):
        return len(self.blocks)

    def block_of(self, i: int) -> tuple:
        for b in self.blocks:
            if i in b:
                return b
        raise SignatureError(f"{i} not in ground set")

    def refines(self, other: "Partition") -> bool:
        """True when every block here is contained in a block of other."""
        where = {}
        for j, b in enumerate(other.blocks):
            for i in b:
                where[i] = j
        for b in self.blocks:
            if len({where[i] for i in b}) != 1:
                return False
        return True

    def relabel(self, perm: dict) -> "Partition":
        return Partition.make([[perm[i] for i in b] for b in self.blocks])


def enumerate_partitions(ground):
    """All partitions of the (sorted) ground set, canonical form."""
    items = sorted(ground)
    if not items:
        yield Partition(())
        return

    def rec(rest, blocks):
        if not rest:
            yield Partition.make(blocks)
            return
        first, tail = rest[0], rest[1:]
        for j in range(len(blocks)):
            yield from rec(tail, blocks[:j] + [blocks[j] + [first]] + blocks[j + 1 :])
        yield from rec(tail, blocks + [[first]])

    yield from rec(items[1:], [[items[0]]])


def _set_partitions_of(items):
    """Partitions of an explicit element list, as lists of blocks."""
    items = sorted(items)

    def rec(rest, blocks):
        if not rest:
            yield [tuple(b) for b in blocks]
            return
        first, tail = rest[0], rest[1:]
        for j in range(len(blocks)):
            yield from rec(tail, blocks[:j] + [blocks[j] + [first]] + blocks[j + 1 :])
        yield from rec(tail, blocks + [[first]])

    yield from rec(items[1:], [[items[0]]])


def _refinements(part: Partition):
    """Proper refinements of a partition (strictly more blocks)."""
    pools = []
    for b in part.blocks:
        pools.append([(b,)] if len(b) == 1 else list(_set_partitions_of(b)))
    for combo in itertools.product(*pools):
        blocks = [blk for sub in combo for blk in sub]
        if len(blocks) > len(part.blocks):
            yield Partition.make(blocks)


@dataclass(frozen=True)
class IncreasingCollection:
    """Chain of partitions from one block to singletons with growing block
    counts, each level refining the previous one."""

    levels: tuple  # tuple of Partition

    def __post_init__(self):
        ps = self.levels
        if len(ps) == 1 and ps[0].k == 1:
            return  # trivial collection on one element
        if len(ps) < 2:
            raise SignatureError("need at least the one-block and singleton levels")
        k = ps[0].k
        if ps[0] != Partition.one_block(k):
            raise SignatureError("level 0 must be the one-block partition")
        if ps[-1] != Partition.singletons(k):
            raise SignatureError("last level must be singletons")
        for a, b in zip(ps, ps[1:]):
            if not len(a) < len(b):
                raise SignatureError("block counts must strictly increase")
            if not b.refines(a):
                raise SignatureError("each level must refine the previous one")

    @property
    def k(self) -> int:
        return self.levels[0].k

    @property
    def depth(self) -> int:
        """Number of refinement steps d (levels 0..d)."""
        return len(self.levels) - 1

    def __len__(self):
        return len(self.levels)

    def split_counts(self, p: int) -> list:
        """b_{p-1}(B_j) for each block j of level p-1: how many level-p blocks it unites."""
        prev, nxt = self.levels[p - 1], self.levels[p]
        out = []
        for b in prev.blocks:
            members = set(b)
            out.append(sum(1 for c in nxt.blocks if set(c) <= members))
        return out

    def beta_profile(self, p: int) -> list:
        """Per block j of level p-1, the tuple of level-p sub-block sizes.

        Sub-blocks are taken in their level-p least-element order.
        """
        prev, nxt = self.levels[p - 1], self.levels[p]
        out = []
        for b in prev.blocks:
            members = set(b)
            sizes = tuple(len(c) for c in nxt.blocks if set(c) <= members)
            out.append(sizes)
        return out


def reduce_collection(coll: IncreasingCollection) -> IncreasingCollection:
    """Drop the deepest level and relabel over the blocks of the level below.

    Blocks of the second-deepest level become the new ground elements
    (numbered in least-element order); every shallower partition is mapped
    through this relabeling. Block counts and split counts are preserved;
    a single-step chain reduces to the trivial collection on one element.
    """
    if coll.depth < 1:
        raise SignatureError("nothing to reduce")
    base = coll.levels[-2]
    index = {b: j + 1 for j, b in enumerate(base.blocks)}
    new_levels = []
    for part in coll.levels[:-1]:
        blocks = []
        for b in part.blocks:
            members = set(b)
            blocks.append([index[c] for c in base.blocks if set(c) <= members])
        new_levels.append(Partition.make(blocks))
    return IncreasingCollection(tuple(new_levels))


def enumerate_increasing_collections(k: int, length: int = None):
    """All increasing collections on {1..k}; optionally only those with
    ``length`` refinement steps. Rejects k beyond the Bell-growth cap."""
    if k > MAX_GROUND:
        raise ValueError(f"k={k} exceeds the enumeration cap {MAX_GROUND}")
    start = Partition.one_block(k)
    end = Partition.singletons(k)

    def rec(chain):
        cur = chain[-1]
        if cur == end:
            if length is None or len(chain) - 1 == length:
                yield IncreasingCollection(tuple(chain))
            return
        if length is not None and len(chain) - 1 >= length:
            return
        for ref in _refinements(cur):
            yield from rec(chain + [ref])

    if k == 1:
        return
    yield from rec([start])


# ---------------------------------------------------------------------------
# tuples on trees
# ---------------------------------------------------------------------------


def _validate_tuple(tree: MarkedTree, xs) -> None:
    for i, j in itertools.combinations(range(len(xs)), 2):
        u, v = xs[i], xs[j]
        if u == v:
            raise TupleError("tuple has repeated vertices")
        a, b = (u, v) if tree.gen[u] <= tree.gen[v] else (v, u)
        if is_ancestor(tree, a, b):
            raise TupleError(f"{a} is an ancestor of {b}")


def first_full_split(tree: MarkedTree, xs) -> int:
    """First generation at which no two slots share a common ancestor:
    one plus the deepest pairwise most recent common ancestor."""
    _validate_tuple(tree, xs)
    worst = 0
    for i, j in itertools.combinations(range(len(xs)), 2):
        worst = max(worst, mrca_generation(tree, xs[i], xs[j]))
    return worst + 1


def _level_labels(tree: MarkedTree, xs, m: int):
    return [ancestor_at(tree, x, m, slot=i + 1) for i, x in enumerate(xs)]


def partition_process(tree: MarkedTree, xs, m: int) -> Partition:
    """Partition of slots sharing a generation-m ancestor (virtual leaves apply)."""
    return Partition.from_labels(_level_labels(tree, xs, m))


@dataclass(frozen=True)
class GenealogySignature:
    """Split times with the partitions attained there.

    ``times`` is strictly increasing; ``collection`` has one more level
    than times (level 0 is the one-block partition, level j the partition
    from time j on). The last time is the tuple's first full split.
    """

    times: tuple
    collection: IncreasingCollection

    def __post_init__(self):
        if len(self.times) != self.collection.depth:
            raise SignatureError("need exactly one time per refinement step")
        if any(t2 <= t1 for t1, t2 in zip(self.times, self.times[1:])):
            raise SignatureError("times must be strictly increasing")
        if self.times and self.times[0] < 1:
            raise SignatureError("times must be >= 1")

    @property
    def split_count(self) -> int:
        return len(self.times)

    def to_json(self) -> str:
        return json.dumps(
            {
                "t": list(self.times),
                "xi": [[list(b) for b in p.blocks] for p in self.collection.levels],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "GenealogySignature":
        data = json.loads(text)
        levels = tuple(Partition.make(bs) for bs in data["xi"])
        return cls(tuple(data["t"]), IncreasingCollection(levels))


def coalescent_times(tree: MarkedTree, xs) -> GenealogySignature:
    """Extract the tuple's split times and attained partitions.

    The partition process is constant between block-count increases, so the
    signature is read off the sorted distinct pairwise ancestor depths.
    """
    _validate_tuple(tree, xs)
    k = len(xs)
    depths = sorted(
        {
            mrca_generation(tree, xs[i], xs[j])
            for i, j in itertools.combinations(range(k), 2)
        }
    )
    times = []
    levels = [Partition.one_block(k)]
    last = 1
    for d in depths:
        m = d + 1
        part = partition_process(tree, xs, m)
        if len(part) > last:
            times.append(m)
            levels.append(part)
            last = len(part)
    return GenealogySignature(tuple(times), IncreasingCollection(tuple(levels)))


def upsilon_member(tree: MarkedTree, xs, m: int, part: Partition) -> bool:
    """Level-m block condition: same generation-m ancestor within blocks,
    different ancestors across blocks (cross check skipped for one block)."""
    if part.k != len(xs):
        raise SignatureError("partition ground set does not match tuple length")
    labels = _level_labels(tree, xs, m)
    for b in part.blocks:
        first = labels[b[0] - 1]
        for i in b[1:]:
            if labels[i - 1] != first:
                return False
    if len(part) >= 2:
        reps = [labels[b[0] - 1] for b in part.blocks]
        if len(set(reps)) != len(reps):
            return False
    return True


def genealogy_indicator(tree: MarkedTree, xs, times, coll: IncreasingCollection) -> int:
    """Product over steps of the two level conditions around each time.

    1 exactly when the tuple's splits happen at the given times with the
    given partitions. Malformed (times, collection) pairs raise.
    """
    times = tuple(times)
    if len(times) != coll.depth:
        raise SignatureError("need one time per refinement step")
    if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
        raise SignatureError("times must be strictly increasing")
    for i, t in enumerate(times, start=1):
        if not upsilon_member(tree, xs, t - 1, coll.levels[i - 1]):
            return 0
        if not upsilon_member(tree, xs, t, coll.levels[i]):
            return 0
    return 1


# ---------------------------------------------------------------------------
# hereditary constraints
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constraint:
    """Named tuple functional with its heredity generation and sup bound."""

    name: str
    fn: object
    heredity_generation: float
    sup_norm: float = 1.0

    def __call__(self, tree, xs):
        return self.fn(tree, xs)


def constant_one(k: int = None) -> Constraint:
    return Constraint(name="one", fn=lambda tree, xs: 1.0, heredity_generation=1)


def make_f_lambda(lams) -> Constraint:
    """Adjacent-slot split bounds: slot i-1 and i must split below lams[i].

    lams has one entry per adjacent pair (length k-1); an entry of
    math.inf removes that pair's constraint.
    """
    lams = tuple(lams)

    def fn(tree, xs):
        for i in range(1, len(xs)):
            if mrca_generation(tree, xs[i - 1], xs[i]) >= lams[i - 1]:
                return 0.0
        return 1.0

    finite = [l for l in lams if math.isfinite(l)]
    heredity = max(finite) if finite else 1
    return Constraint(name=f"f_lambda{lams}", fn=fn, heredity_generation=heredity)


def make_f_m(m: int) -> Constraint:
    """Indicator of a full split by generation m."""

    def fn(tree, xs):
        return 1.0 if first_full_split(tree, xs) <= m else 0.0

    return Constraint(name=f"f_m{m}", fn=fn, heredity_generation=m)


def make_F_ell_s(ell: int, svec, k: int) -> Constraint:
    """Sum over all increasing collections of the signature indicator at
    fixed split times svec (length ell)."""
    svec = tuple(svec)
    if len(svec) != ell:
        raise SignatureError("need one split time per refinement step")
    colls = list(enumerate_increasing_collections(k, length=ell))

    def fn(tree, xs):
        total = 0.0
        for coll in colls:
            total += genealogy_indicator(tree, xs, svec, coll)
        return total

    return Constraint(name=f"F_{ell}_{svec}", fn=fn, heredity_generation=svec[-1])


def hereditary_check(
    constraint: Constraint,
    law,
    k: int,
    rng: np.random.Generator,
    trees: int = 30,
    depth: int = 6,
    tuples_per_tree: int = 40,
) -> dict:
    """Randomized heredity audit.

    Samples tuples with a full split by p for p at least the declared
    heredity generation, replaces every slot by its generation-p ancestor,
    and compares values. Reports the first counterexample found.
    """
    from .tree import generate

    g0 = constraint.heredity_generation
    if not math.isfinite(g0):
        return {"constraint": constraint.name, "hereditary": True, "checked": 0,
                "counterexample": None}
    g0 = max(1, int(g0))
    checked = 0
    for ti in range(trees):
        tree = generate(law, depth, rng=rng)
        for _ in range(tuples_per_tree):
            gens = rng.integers(g0, depth + 1, size=k)
            try:
                xs = [
                    int(rng.choice(tree.generation_ids(int(g)))) for g in gens
                ]
                _validate_tuple(tree, xs)
            except Exception:
                continue
            split = first_full_split(tree, xs)
            lo = int(min(tree.gen[x] for x in xs))
            for p in range(max(split, g0), lo + 1):
                ys = [ancestor_at(tree, x, p) for x in xs]
                checked += 1
                if constraint(tree, xs) != constraint(tree, ys):
                    return {
                        "constraint": constraint.name,
                        "hereditary": False,
                        "checked": checked,
                        "counterexample": {"tuple": xs, "p": p, "tree_index": ti},
                    }
    return {"constraint": constraint.name, "hereditary": True, "checked": checked,
            "counterexample": None}
