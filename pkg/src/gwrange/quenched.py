"""Exact quenched analytics: hitting probabilities and mean range formulas.

The closed forms here are rational expressions in exp(V) along ancestral
lines; they are evaluated in log-sum-exp form since potentials grow
linearly in the generation. An independent linear-system oracle solves the
same hitting problem as a harmonic function on the full truncated tree and
is used to cross-check the closed form. Everything here is a pure
function of an immutable tree.
"""

from __future__ import annotations

import math

import numpy as np

from .environment import EnvironmentLaw, sample_tilted_walk
from .errors import AncestryError, CombinatorialCapError, SolverError
from .tree import (
    MarkedTree,
    conductance_H,
    enumerate_delta_k,
    generate,
    is_ancestor,
    mrca_generation,
    save_snapshot,
)

__all__ = [
    "hit_before_return",
    "hit_before_return_oracle",
    "quenched_mean_quasi_independent",
    "phi",
]


def _log_path_cumsum(tree: MarkedTree, x: int) -> float:
    """log sum over root..x of exp(V(w))."""
    chain = tree.ancestor_chain(x)
    vals = tree.V[chain]
    m = vals.max()
    return float(m + math.log(np.exp(vals - m).sum()))


def hit_before_return(tree: MarkedTree, z: int, x: int) -> float:
    """Probability, from z on the ancestral line of x, of hitting x before
    the walk's first return to the reflecting vertex.

    z may be the root (the walk's start one step after reflection); z = x
    gives 1. Exact ratio of exponential path sums.
    """
    if not is_ancestor(tree, z, x):
        raise AncestryError(f"{z} is not on the ancestral line of {x}")
    log_den = _log_path_cumsum(tree, x)
    log_num = _log_path_cumsum(tree, z)
    return math.exp(log_num - log_den)


def hit_before_return_oracle(
    tree: MarkedTree,
    z: int,
    x: int,
    dense_limit: int = 2000,
    tol: float = 1e-12,
    max_iter: int = 200_000,
    dump_on_disagreement: str = None,
) -> float:
    """Same probability via the harmonic system h = P h, h(x)=1, h(reflector)=0.

    The system runs over every materialized vertex; at the truncation
    frontier the unmaterialized children contribute a self-loop (the walk
    returns from below with probability one without hitting x, which lies
    in the materialized part). Dense solve below ``dense_limit`` states,
    damped fixed-point iteration above.
    """
    if not is_ancestor(tree, z, x):
        raise AncestryError(f"{z} is not on the ancestral line of {x}")
    n = tree.size
    # transition rows: for node u, weights to parent and children
    up_w = tree.exp_neg_v.copy()
    if n <= dense_limit:
        A = np.zeros((n, n))
        b = np.zeros(n)
        for u in range(n):
            if u == x:
                A[u, u] = 1.0
                b[u] = 1.0
                continue
            kids = tree.children(u)
            w = np.concatenate(([up_w[u]], tree.exp_neg_v[kids]))
            if tree.is_frontier(u):
                down = tree.frontier_down_weight(u)
                total = up_w[u] + down
                A[u, u] = 1.0 - down / total  # self-loop: sub-excursion returns
                p = tree.parent[u]
                if p >= 0:
                    A[u, p] -= up_w[u] / total
                # parent = reflector contributes h=0
                continue
            total = w.sum()
            A[u, u] = 1.0
            p = tree.parent[u]
            if p >= 0:
                A[u, p] -= up_w[u] / total
            for j, c in enumerate(kids):
                A[u, c] -= tree.exp_neg_v[c] / total
        from scipy.linalg import solve

        h = solve(A, b)
        return float(h[z])
    # damped Jacobi sweep
    h = np.zeros(n)
    h[x] = 1.0
    damp = 0.5
    for it in range(max_iter):
        new = np.zeros(n)
        for u in range(n):
            if u == x:
                new[u] = 1.0
                continue
            kids = tree.children(u)
            if tree.is_frontier(u):
                down = tree.frontier_down_weight(u)
                total = up_w[u] + down
                val = down / total * h[u]
                p = tree.parent[u]
                if p >= 0:
                    val += up_w[u] / total * h[p]
                new[u] = val
                continue
            total = up_w[u] + tree.exp_neg_v[kids].sum()
            val = 0.0
            p = tree.parent[u]
            if p >= 0:
                val += up_w[u] / total * h[p]
            for c in kids:
                val += tree.exp_neg_v[c] / total * h[c]
            new[u] = val
        delta = float(np.abs(new - h).max())
        h = (1 - damp) * h + damp * new
        if delta < tol:
            return float(h[z])
    raise SolverError("harmonic iteration did not converge", residual=delta)


def cross_check(tree, z, x, tol=1e-9, dump_path=None) -> float:
    """|closed form - oracle|, dumping the tree when the gap exceeds tol."""
    a = hit_before_return(tree, z, x)
    b = hit_before_return_oracle(tree, z, x)
    gap = abs(a - b)
    if gap > tol and dump_path is not None:
        save_snapshot(tree, dump_path)
    return gap


def quenched_mean_quasi_independent(
    tree: MarkedTree,
    lower: int,
    upper: int,
    s: int,
    k: int,
    f=None,
    warmup: int = None,
    tuple_cap: int = 5_000_000,
) -> float:
    """Exact quenched mean of the distinct-excursion range sum.

    Equals s(s-1)...(s-k+1) times the band sum of f(x) * prod over slots of
    exp(-V)/H, restricted to tuples whose full split generation is at most
    ``warmup``. f defaults to 1; it must be hereditary for the asymptotics
    to apply but the identity itself is exact for any f.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    falling = 1.0
    for i in range(k):
        falling *= s - i
    if falling <= 0.0:
        return 0.0
    band = [
        int(v)
        for g in range(lower, min(upper, tree.depth) + 1)
        for v in tree.generation_ids(g)
    ]
    est = 1.0
    for c in range(k):
        est *= max(len(band) - c, 0)
    if est > tuple_cap:
        raise CombinatorialCapError(f"{est:.3g} tuples exceed cap {tuple_cap}")
    weight = {v: tree.exp_neg_v[v] / conductance_H(tree, v) for v in band}
    total = 0.0
    for tup in enumerate_delta_k(tree, band, k):
        if warmup is not None:
            split = 1 + max(
                mrca_generation(tree, tup[i], tup[j])
                for i in range(k)
                for j in range(i + 1, k)
            )
            if split > warmup:
                continue
        val = 1.0 if f is None else float(f(tree, tup))
        if val == 0.0:
            continue
        w = val
        for v in tup:
            w *= weight[v]
        total += w
    return falling * total


def phi(
    law: EnvironmentLaw,
    p: int,
    warmup: int,
    r: float,
    replicas: int = 20_000,
    rng: np.random.Generator = None,
    mode: str = "auto",
    depth_cap: int = 14,
):
    """Mean of exp(-V(x)) / ((r-1) exp(-V(x)) + H_x) over generation p - warmup.

    Returns (estimate, standard error). ``mode="tree"`` averages the sum
    over independent truncated trees, which is exact to the definition but
    only feasible for small depth; ``mode="tilted"`` transports the sum to
    the tilted one-dimensional walk (an exact identity), which scales to
    any depth. ``auto`` picks by depth.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    d = p - warmup
    if d < 0:
        raise ValueError("p must be >= warmup")
    if r < 1.0:
        raise ValueError("r must be >= 1")
    if d == 0:
        return 1.0 / ((r - 1.0) + 1.0), 0.0
    if mode == "auto":
        mode = "tree" if d <= depth_cap else "tilted"
    if mode == "tilted":
        paths = sample_tilted_walk(law, d, rng, replicas)
        end = paths[:, -1]
        h = np.exp(paths - end[:, None]).sum(axis=1)
        vals = 1.0 / ((r - 1.0) * np.exp(-end) + h)
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(replicas))
    if mode != "tree":
        raise ValueError(f"unknown mode {mode!r}")
    vals = np.empty(replicas)
    for i in range(replicas):
        t = generate(law, d, rng=rng)
        ids = t.generation_ids(d)
        acc = 0.0
        for x in ids:
            h = conductance_H(t, int(x))
            e = t.exp_neg_v[x]
            acc += e / ((r - 1.0) * e + h)
        vals[i] = acc
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(replicas))
