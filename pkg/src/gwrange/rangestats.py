"""Generalized range statistics over k-tuples of visited vertices.

The central object is the constrained tuple count over a generation band
of the visited set: the sum of a tuple functional over all ordered
k-tuples of distinct, pairwise non-ancestral vertices. Tuples are further
classified by how their vertices distribute over excursions (all distinct
excursions, all in one shared excursion, or mixed), and a quasi-independent
version fixes which excursion visits which slot. Evaluations only read
the trace and tree; tuple streams use a fixed deterministic order so
repeated runs accumulate identically.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import CombinatorialCapError, EmptySupportError, TupleError
from .tree import MarkedTree, enumerate_delta_k, is_ancestor
from .walk import RangeSlice, WalkTrace
from .genealogy import first_full_split

__all__ = [
    "RangeStat",
    "general_range",
    "classify_tuple_excursions",
    "excursion_class_masses",
    "quasi_independent_range",
    "weighted_range_A_l",
    "sample_uniform_tuple",
    "delta_k_count",
]

DEFAULT_TUPLE_CAP = 5_000_000

CLASS_DISTINCT = "distinct"
CLASS_SAME_SINGLE = "same-single"
CLASS_MIXED = "mixed"
CLASS_UNVISITED = "not-all-visited"


@dataclass(frozen=True)
class RangeStat:
    """A constrained band tuple count with its normalization and class split."""

    value: float
    tuple_count: int
    normalization: float
    constraint: str
    k: int
    class_masses: dict = None


def _pair_total(n: int, k: int) -> int:
    out = 1
    for c in range(k):
        out *= max(n - c, 0)
    return out


def delta_k_count(slice_: RangeSlice, k: int) -> int:
    """Exact number of admissible ordered k-tuples in the band.

    For k = 2 this is D(D-1) minus twice the number of ancestor pairs;
    larger k falls back to streaming.
    """
    ids = slice_.ids
    n = len(ids)
    if n < k:
        return 0
    if k == 2:
        anc_pairs = _ancestor_pair_count(slice_)
        return n * (n - 1) - 2 * anc_pairs
    return sum(1 for _ in enumerate_delta_k(slice_.tree, ids, k))


def _ancestor_pair_count(slice_: RangeSlice) -> int:
    tree = slice_.tree
    present = set(int(v) for v in slice_.ids)
    count = 0
    for v in slice_.ids:
        cur = int(v)
        g = int(tree.gen[cur])
        while g > slice_.lower:
            cur = int(tree.parent[cur])
            g -= 1
            if cur in present:
                count += 1
    return count


def general_range(
    slice_: RangeSlice,
    k: int,
    f=None,
    s: int = None,
    tuple_cap: int = DEFAULT_TUPLE_CAP,
    with_classes: bool = False,
) -> RangeStat:
    """Band tuple sum of f over admissible ordered k-tuples.

    Returns 0 when the band holds fewer than k vertices. ``s`` (the
    excursion count) fixes the normalization (s * width)^k; it defaults to
    the trace's excursion count.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if s is None:
        s = slice_.trace.s
    norm = float(s * slice_.width) ** k
    name = "one" if f is None else getattr(f, "name", "custom")
    n = len(slice_.ids)
    if n < k:
        return RangeStat(0.0, 0, norm, name, k, {} if with_classes else None)
    if _pair_total(n, k) > tuple_cap:
        raise CombinatorialCapError(
            f"{_pair_total(n, k):.3g} ordered tuples exceed cap {tuple_cap}"
        )
    tree = slice_.tree
    total = 0.0
    count = 0
    masses = {CLASS_DISTINCT: 0.0, CLASS_SAME_SINGLE: 0.0, CLASS_MIXED: 0.0}
    for tup in enumerate_delta_k(tree, slice_.ids, k):
        count += 1
        val = 1.0 if f is None else float(f(tree, tup))
        total += val
        if with_classes:
            cls = classify_tuple_excursions(slice_.trace, tup, s)
            masses[cls] += 1.0
    return RangeStat(total, count, norm, name, k, masses if with_classes else None)


def classify_tuple_excursions(trace: WalkTrace, xs, s: int = None) -> str:
    """Excursion class of a tuple: ``distinct`` when the slots admit
    pairwise different visiting excursions, ``same-single`` when all slots
    were visited only in one common excursion, ``mixed`` otherwise.

    Vertices visited in several excursions are handled through their full
    entry-excursion sets (the slower general path).
    """
    if s is None:
        s = trace.s
    sets = []
    for x in xs:
        if not trace.was_visited(x):
            return CLASS_UNVISITED
        i = trace.index_of(x)
        entries = trace.entry_excursions[i]
        entries = entries[entries <= s]
        if len(entries) == 0:
            return CLASS_UNVISITED
        sets.append(entries)
    if all(len(e) == 1 for e in sets):
        firsts = [int(e[0]) for e in sets]
        if len(set(firsts)) == len(firsts):
            return CLASS_DISTINCT
        if len(set(firsts)) == 1:
            return CLASS_SAME_SINGLE
        return CLASS_MIXED
    # precedence: a tuple admitting pairwise distinct excursions is
    # "distinct" even when it also shares one, so the three classes
    # partition the visited tuples
    if _has_distinct_assignment(sets):
        return CLASS_DISTINCT
    common = set(int(v) for v in sets[0])
    for e in sets[1:]:
        common &= set(int(v) for v in e)
    if common:
        return CLASS_SAME_SINGLE
    return CLASS_MIXED


def _has_distinct_assignment(sets) -> bool:
    """Bipartite matching slots -> excursions, brute force for small k."""
    k = len(sets)
    order = sorted(range(k), key=lambda i: len(sets[i]))
    used = set()

    def rec(pos):
        if pos == k:
            return True
        for j in sets[order[pos]]:
            j = int(j)
            if j not in used:
                used.add(j)
                if rec(pos + 1):
                    return True
                used.discard(j)
        return False

    return rec(0)


def excursion_class_masses(slice_: RangeSlice, s: int = None) -> dict:
    """Vectorized ordered-pair class masses over the band (k = 2).

    Returns counts for each class among admissible pairs, plus the total.
    """
    trace, tree = slice_.trace, slice_.tree
    if s is None:
        s = trace.s
    ids = slice_.ids
    n = len(ids)
    if n < 2:
        return {
            CLASS_DISTINCT: 0,
            CLASS_SAME_SINGLE: 0,
            CLASS_MIXED: 0,
            "total": 0,
        }
    anc = tree.ancestor_matrix(ids)
    gens = slice_.gens
    # ancestor mask: [i, j] true when vertex i is a strict ancestor of j
    cols = anc[:, gens].T  # [i, j] = ancestor of j at generation of i
    anc_mask = cols == ids[:, None]
    np.fill_diagonal(anc_mask, False)
    admissible = ~(anc_mask | anc_mask.T)
    np.fill_diagonal(admissible, False)

    single = slice_.excursion_counts() == 1
    firsts = slice_.first_excursions()
    same_first = firsts[:, None] == firsts[None, :]
    both_single = single[:, None] & single[None, :]

    distinct_mask = admissible & both_single & ~same_first
    same_single_mask = admissible & both_single & same_first
    leftover = admissible & ~both_single
    # pairs with a multi-excursion vertex: resolve the few of them exactly
    n_dist = int(distinct_mask.sum())
    n_same = int(same_single_mask.sum())
    n_mixed = 0
    li, lj = np.nonzero(leftover)
    for a, b in zip(li, lj):
        cls = classify_tuple_excursions(trace, (int(ids[a]), int(ids[b])), s)
        if cls == CLASS_DISTINCT:
            n_dist += 1
        elif cls == CLASS_SAME_SINGLE:
            n_same += 1
        else:
            n_mixed += 1
    total = int(admissible.sum())
    return {
        CLASS_DISTINCT: n_dist,
        CLASS_SAME_SINGLE: n_same,
        CLASS_MIXED: n_mixed,
        "total": total,
    }


def quasi_independent_range(slice_: RangeSlice, jvec, g=None) -> float:
    """Band tuple sum with slot i required to receive an entry in excursion j_i.

    The excursion indices must be pairwise distinct and within the trace.
    """
    jvec = tuple(int(j) for j in jvec)
    k = len(jvec)
    if len(set(jvec)) != k:
        raise TupleError("excursion indices must be pairwise distinct")
    if any(j < 1 or j > slice_.trace.s for j in jvec):
        raise TupleError("excursion index outside 1..s")
    trace, tree = slice_.trace, slice_.tree
    per_slot = []
    for j in jvec:
        hits = [
            int(v)
            for row, v in zip(slice_.rows, slice_.ids)
            if j in trace.entry_excursions[row]
        ]
        if not hits:
            return 0.0
        per_slot.append(hits)
    total = 0.0
    for tup in itertools.product(*per_slot):
        if len(set(tup)) != k:
            continue
        ok = True
        for a, b in itertools.combinations(tup, 2):
            lo, hi = (a, b) if tree.gen[a] <= tree.gen[b] else (b, a)
            if is_ancestor(tree, lo, hi):
                ok = False
                break
        if not ok:
            continue
        total += 1.0 if g is None else float(g(tree, tup))
    return total


def sum_quasi_independent(slice_: RangeSlice, k: int, g=None, warmup: int = None) -> float:
    """Sum of the quasi-independent range over all distinct excursion
    k-tuples, computed per tuple through the count of injective
    excursion assignments (a small permanent)."""
    trace, tree = slice_.trace, slice_.tree
    total = 0.0
    sets = {
        int(v): [int(e) for e in trace.entry_excursions[row]]
        for row, v in zip(slice_.rows, slice_.ids)
    }
    for tup in enumerate_delta_k(tree, slice_.ids, k):
        if warmup is not None and first_full_split(tree, tup) > warmup:
            continue
        val = 1.0 if g is None else float(g(tree, tup))
        if val == 0.0:
            continue
        total += val * _injective_assignments([sets[x] for x in tup])
    return total


def _injective_assignments(sets) -> int:
    """Number of ways to pick pairwise distinct representatives."""
    count = 0

    def rec(pos, used):
        nonlocal count
        if pos == len(sets):
            count += 1
            return
        for j in sets[pos]:
            if j not in used:
                rec(pos + 1, used | {j})

    rec(0, frozenset())
    return count


def weighted_range_A_l(
    tree: MarkedTree,
    k: int,
    level: int,
    f=None,
    beta=None,
    tuple_cap: int = DEFAULT_TUPLE_CAP,
) -> float:
    """Potential-weighted tuple sum over one generation:
    sum over ordered distinct k-tuples at ``level`` of f(x) * exp(-<beta, V(x)>).

    beta defaults to all ones. Distinct same-generation vertices are never
    ancestrally related, so admissibility is automatic.
    """
    if level > tree.depth:
        raise ValueError("level beyond the truncation depth")
    beta = (1.0,) * k if beta is None else tuple(beta)
    if len(beta) != k:
        raise ValueError("beta must have length k")
    ids = tree.generation_ids(level)
    n = len(ids)
    if n < k:
        return 0.0
    if f is None:
        return _unconstrained_level_sum(tree, ids, beta)
    if _pair_total(n, k) > tuple_cap:
        raise CombinatorialCapError(f"{_pair_total(n, k):.3g} tuples exceed cap")
    env = tree.exp_neg_v
    total = 0.0
    for tup in itertools.permutations(ids, k):
        val = 1.0 if f is None else float(f(tree, tup))
        if val == 0.0:
            continue
        w = val
        for bi, x in zip(beta, tup):
            w *= env[x] ** bi if bi != 1.0 else env[x]
        total += w
    return total


def _unconstrained_level_sum(tree, ids, beta) -> float:
    """Exact distinct-tuple sum over one generation by inclusion-exclusion.

    Sum over ordered distinct tuples of prod exp(-beta_i V) equals the sum
    over slot partitions of sign-weighted power sums: coincident slots in a
    block contribute the power sum of their total weight, with the Moebius
    factor (-1)^(|B|-1) (|B|-1)! per block.
    """
    from .genealogy import enumerate_partitions

    k = len(beta)
    V = tree.V[ids]
    powers = {}

    def power_sum(total):
        if total not in powers:
            powers[total] = float(np.exp(-total * V).sum())
        return powers[total]

    total = 0.0
    for part in enumerate_partitions(range(1, k + 1)):
        term = 1.0
        for block in part.blocks:
            term *= (-1.0) ** (len(block) - 1) * math.factorial(len(block) - 1)
            term *= power_sum(sum(beta[i - 1] for i in block))
        total += term
    return total


def sample_uniform_tuple(
    slice_: RangeSlice,
    k: int,
    rng: np.random.Generator,
    split_bound: int = None,
    max_attempts: int = 100_000,
):
    """Uniform draw from the admissible ordered k-tuples of the band,
    optionally conditioned on a full split by ``split_bound``.

    Exact rejection from ordered distinct-vertex draws. Raises when the
    band is too small or the conditioned support is verified empty.
    """
    ids = slice_.ids
    n = len(ids)
    if n < k:
        raise EmptySupportError(f"band holds {n} < k = {k} vertices")
    tree = slice_.tree
    for _ in range(max_attempts):
        pick = rng.choice(n, size=k, replace=False)
        tup = tuple(int(ids[i]) for i in pick)
        ok = True
        for a, b in itertools.combinations(tup, 2):
            lo, hi = (a, b) if tree.gen[a] <= tree.gen[b] else (b, a)
            if is_ancestor(tree, lo, hi):
                ok = False
                break
        if not ok:
            continue
        if split_bound is not None and first_full_split(tree, tup) > split_bound:
            continue
        return tup
    # verify emptiness before giving up
    for tup in enumerate_delta_k(tree, ids, k):
        if split_bound is None or first_full_split(tree, tup) <= split_bound:
            raise EmptySupportError(
                f"rejection failed after {max_attempts} attempts on nonempty support"
            )
    raise EmptySupportError("conditioned tuple set is empty")
