import itertools
import math

import numpy as np
import pytest

import gwrange as g
from gwrange import rng as rngmod
from gwrange.errors import CombinatorialCapError, EmptySupportError, TupleError
from gwrange.rangestats import (
    CLASS_DISTINCT,
    CLASS_MIXED,
    CLASS_SAME_SINGLE,
    sum_quasi_independent,
)
from gwrange.walk import range_slice, run_excursions


@pytest.fixture(scope="module")
def walked(law):
    tree = g.generate(law, 8, seed=700)
    trace = run_excursions(tree, 40, rngmod.stream(701, "w"))
    return tree, trace


class TestGeneralRange:
    def test_one_generation_count(self, walked):
        tree, trace = walked
        sl = range_slice(trace, tree, 4, 4)
        d = sl.size
        stat = g.general_range(sl, 2)
        assert stat.value == d * (d - 1)
        assert stat.tuple_count == d * (d - 1)
        assert g.delta_k_count(sl, 2) == d * (d - 1)

    def test_small_band_returns_zero(self, walked):
        tree, trace = walked
        sl = range_slice(trace, tree, tree.depth + 1, tree.depth + 2)
        assert g.general_range(sl, 2).value == 0.0

    def test_monotone_in_split_bound(self, walked):
        tree, trace = walked
        sl = range_slice(trace, tree, 3, 5)
        vals = [g.general_range(sl, 2, g.make_f_m(m)).value for m in (1, 2, 3, 4)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))

    def test_linearity(self, walked):
        tree, trace = walked
        sl = range_slice(trace, tree, 3, 5)
        f = g.make_f_m(2)
        lhs = g.general_range(
            sl, 2, lambda t, xs: 2.5 * f(t, xs) + 1.0
        ).value
        assert lhs == pytest.approx(
            2.5 * g.general_range(sl, 2, f).value + g.general_range(sl, 2).value,
            rel=1e-12,
        )

    def test_ancestor_pairs_excluded(self, walked):
        tree, trace = walked
        sl = range_slice(trace, tree, 3, 6)
        count = g.delta_k_count(sl, 2)
        assert count < sl.size * (sl.size - 1)  # band spans generations
        stat = g.general_range(sl, 2)
        assert stat.value == count

    def test_cap_refusal(self, walked):
        tree, trace = walked
        sl = range_slice(trace, tree, 2, 7)
        with pytest.raises(CombinatorialCapError):
            g.general_range(sl, 3, tuple_cap=10)

    def test_hereditary_factorization(self, walked):
        # restricting a hereditary constraint to tuples fully split by m and
        # reading it at the generation-m ancestors gives the same sum
        tree, trace = walked
        sl = range_slice(trace, tree, 4, 6)
        m = 4
        f = g.make_f_lambda([3])  # heredity generation 3 <= m
        direct = 0.0
        factorized = 0.0
        for tup in g.enumerate_delta_k(tree, sl.ids, 2):
            if g.first_full_split(tree, tup) <= m:
                direct += f(tree, tup)
            anc = tuple(g.ancestor_at(tree, x, m) for x in tup)
            if len(set(anc)) == 2:
                factorized += f(tree, anc)
        assert direct == factorized
        assert direct > 0


class TestClassification:
    def test_same_single(self, walked):
        tree, trace = walked
        rows = np.nonzero(trace.excursion_count == 1)[0]
        firsts = trace.first_excursion[rows]
        for exc in np.unique(firsts):
            cand = rows[firsts == exc]
            ids = trace.ids[cand]
            pairs = [
                (int(a), int(b))
                for a, b in itertools.combinations(ids, 2)
                if not g.is_ancestor(tree, *sorted((int(a), int(b)), key=lambda v: tree.gen[v]))
            ]
            if pairs:
                assert g.classify_tuple_excursions(trace, pairs[0]) == CLASS_SAME_SINGLE
                return
        pytest.skip("no same-excursion pair in this trace")

    def test_distinct(self, walked):
        tree, trace = walked
        rows = np.nonzero(trace.excursion_count == 1)[0]
        firsts = trace.first_excursion[rows]
        a = int(trace.ids[rows[np.argmin(firsts)]])
        b = int(trace.ids[rows[np.argmax(firsts)]])
        if g.is_ancestor(tree, *sorted((a, b), key=lambda v: tree.gen[v])):
            pytest.skip("ancestral pair")
        assert g.classify_tuple_excursions(trace, (a, b)) == CLASS_DISTINCT

    def test_mixed_triple_synthetic(self):
        # synthetic trace-level check through the public classifier:
        # indices (2, 2, 5) are neither all distinct nor all equal
        from gwrange.walk import WalkTrace

        ids = np.array([1, 2, 3], dtype=np.int64)
        trace = WalkTrace(
            s=6, steps=0, dives=0, return_steps=np.zeros(7, dtype=np.int64),
            ids=ids, gens=np.ones(3, dtype=np.int64),
            local_time=np.ones(3, dtype=np.int64),
            edge_local_time=np.ones(3, dtype=np.int64),
            excursion_count=np.ones(3, dtype=np.int64),
            first_excursion=np.array([2, 2, 5], dtype=np.int64),
            first_hit_step=np.zeros(3, dtype=np.int64),
            entry_excursions=[np.array([2]), np.array([2]), np.array([5])],
            root_local_time=6,
        )
        assert g.classify_tuple_excursions(trace, (1, 2, 3)) == CLASS_MIXED
        assert g.classify_tuple_excursions(trace, (1, 2)) == CLASS_SAME_SINGLE
        assert g.classify_tuple_excursions(trace, (1, 3)) == CLASS_DISTINCT

    def test_masses_partition_admissible_pairs(self, walked):
        tree, trace = walked
        sl = range_slice(trace, tree, 3, 6)
        masses = g.excursion_class_masses(sl)
        assert (
            masses[CLASS_DISTINCT] + masses[CLASS_SAME_SINGLE] + masses[CLASS_MIXED]
            == masses["total"]
        )
        assert masses["total"] == g.delta_k_count(sl, 2)

    def test_masses_match_streamed_classifier(self, walked):
        tree, trace = walked
        sl = range_slice(trace, tree, 4, 6)
        masses = g.excursion_class_masses(sl)
        counted = {CLASS_DISTINCT: 0, CLASS_SAME_SINGLE: 0, CLASS_MIXED: 0}
        for tup in g.enumerate_delta_k(tree, sl.ids, 2):
            counted[g.classify_tuple_excursions(trace, tup)] += 1
        for key in counted:
            assert counted[key] == masses[key], key


class TestQuasiIndependent:
    def test_repeated_indices_rejected(self, walked):
        tree, trace = walked
        sl = range_slice(trace, tree, 3, 5)
        with pytest.raises(TupleError):
            g.quasi_independent_range(sl, (2, 2))

    def test_out_of_range_rejected(self, walked):
        tree, trace = walked
        sl = range_slice(trace, tree, 3, 5)
        with pytest.raises(TupleError):
            g.quasi_independent_range(sl, (1, trace.s + 1))

    def test_two_vertex_example(self, law):
        # find an excursion pair with exactly the expected contribution
        tree = g.generate(law, 6, seed=702)
        trace = run_excursions(tree, 8, rngmod.stream(703, "w"))
        sl = range_slice(trace, tree, 2, 4)
        total = 0.0
        for j1, j2 in itertools.permutations(range(1, 9), 2):
            total += g.quasi_independent_range(sl, (j1, j2))
        assert total == sum_quasi_independent(sl, 2)

    def test_unvisited_excursion_contributes_zero(self, law):
        tree = g.generate(law, 6, seed=702)
        trace = run_excursions(tree, 8, rngmod.stream(703, "w"))
        sl = range_slice(trace, tree, 2, 4)
        entered = set()
        for row in sl.rows:
            entered.update(int(e) for e in trace.entry_excursions[row])
        idle = [j for j in range(1, 9) if j not in entered]
        if not idle:
            pytest.skip("every excursion touched the band")
        other = next(j for j in range(1, 9) if j != idle[0])
        assert g.quasi_independent_range(sl, (idle[0], other)) == 0.0

    def test_overcount_inequality(self, walked):
        # summed quasi-independent range dominates the range restricted to
        # distinct-excursion single-visit tuples, exactly, on full traces
        tree, trace = walked
        sl = range_slice(trace, tree, 3, 6)
        lhs = sum_quasi_independent(sl, 2)
        rhs = 0.0
        for tup in g.enumerate_delta_k(tree, sl.ids, 2):
            rows = [trace.index_of(x) for x in tup]
            if all(trace.excursion_count[r] == 1 for r in rows):
                if g.classify_tuple_excursions(trace, tup) == CLASS_DISTINCT:
                    rhs += 1.0
        assert lhs >= rhs


class TestWeightedLevelRange:
    def test_single_vertex_generation_zero(self, law):
        tree = g.tree_from_parents([-1, 0], [0.0, 0.2])
        assert g.weighted_range_A_l(tree, 2, 1) == 0.0

    def test_diagonal_mass_positive_and_decaying(self, law):
        # (W_l)^2 - pair sum = sum exp(-2V) >= 0, ensemble mean shrinks in l
        rng = rngmod.stream(704, "trees")
        means = []
        for level in (2, 6, 10):
            vals = []
            for _ in range(120):
                t = g.generate(law, level, rng=rng)
                w = g.additive_martingale(t, level)
                pair = g.weighted_range_A_l(t, 2, level)
                diff = w * w - pair
                assert diff >= -1e-15
                exact = float((t.exp_neg_v[t.generation_ids(level)] ** 2).sum())
                assert diff == pytest.approx(exact, rel=1e-9)
                vals.append(diff)
            means.append(np.mean(vals))
        assert means[2] < means[0]

    def test_beta_weighting(self, small_tree):
        val = g.weighted_range_A_l(small_tree, 2, 2, beta=(2, 1))
        env = small_tree.exp_neg_v
        ids = small_tree.generation_ids(2)
        expect = sum(
            env[x] ** 2 * env[y] for x, y in itertools.permutations(ids, 2)
        )
        assert val == pytest.approx(expect, rel=1e-12)


class TestUniformSampling:
    def test_two_vertex_frequencies(self, law, rng):
        tree = g.tree_from_parents([-1, 0, 0], [0.0, 0.2, 0.4])
        trace = run_excursions(tree, 200, rngmod.stream(705, "w"))
        sl = range_slice(trace, tree, 1, 1)
        assert sl.size == 2
        draws = 10_000
        first = 0
        for _ in range(draws):
            tup = g.sample_uniform_tuple(sl, 2, rng)
            if tup[0] == 1:
                first += 1
        freq = first / draws
        assert abs(freq - 0.5) <= 4 * math.sqrt(0.25 / draws)

    def test_band_too_small(self, walked):
        tree, trace = walked
        sl = range_slice(trace, tree, tree.depth + 1, tree.depth + 2)
        with pytest.raises(EmptySupportError):
            g.sample_uniform_tuple(sl, 2, np.random.default_rng(0))

    def test_conditioned_sampler_audit(self, walked, rng):
        tree, trace = walked
        sl = range_slice(trace, tree, 3, 5)
        for _ in range(300):
            tup = g.sample_uniform_tuple(sl, 2, rng, split_bound=2)
            assert g.first_full_split(tree, tup) <= 2

    def test_empty_conditioned_support(self, law):
        # the only band pair splits at generation 2: conditioning on a full
        # split by 1 leaves nothing
        tree = g.tree_from_parents([-1, 0, 1, 1], [0.0, 0.2, 0.4, 0.1])
        trace = run_excursions(tree, 300, rngmod.stream(706, "w"))
        sl = range_slice(trace, tree, 2, 2)
        if sl.size < 2:
            pytest.skip("band not fully visited")
        with pytest.raises(EmptySupportError):
            g.sample_uniform_tuple(sl, 2, np.random.default_rng(1), split_bound=1,
                                   max_attempts=200)
