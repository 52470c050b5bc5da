import math

import numpy as np
import pytest
from scipy import stats as sstats

import gwrange as g
from gwrange import rng as rngmod
from gwrange.errors import AncestryError, QueryError, ResourceLimitError
from gwrange.tree import VirtualLeaf, conductance_H_level


class TestGeneration:
    def test_depth_one_offspring_frequencies(self, law):
        rng = rngmod.stream(1, "gen")
        ones = 0
        draws = 10_000
        for _ in range(draws):
            counts, disp = law.sample_generation(rng, 1)
            assert counts[0] in (1, 3)
            if counts[0] == 1:
                ones += 1
                assert disp[0] == pytest.approx(-0.1)
            else:
                assert np.allclose(disp, law.b)
        freq = ones / draws
        assert abs(freq - 0.5) < 4 * math.sqrt(0.25 / draws)

    def test_truncation_contract(self, law):
        tree = g.generate(law, 5, seed=9)
        # no extinction for the default law: every interior node has children
        for x in range(tree.size):
            if tree.gen[x] < tree.depth:
                assert tree.n_children[x] in (1, 3)
            else:
                assert tree.n_children[x] == 0

    def test_mean_generation_sizes(self, law):
        trees = 1000
        sizes = np.empty((trees, 8))
        rng = rngmod.stream(3, "gen")
        for i in range(trees):
            t = g.generate(law, 7, rng=rng)
            sizes[i] = [t.generation_size(gn) for gn in range(8)]
        for gn in range(8):
            mean = sizes[:, gn].mean()
            se = sizes[:, gn].std(ddof=1) / math.sqrt(trees)
            assert abs(mean - 2.0**gn) <= max(4 * se, 1e-9), gn

    def test_offspring_marginal_chi_square(self, law):
        rng = rngmod.stream(4, "gen")
        counts, _ = law.sample_generation(rng, 10_000)
        observed = np.array([(counts == 1).sum(), (counts == 3).sum()])
        res = sstats.chisquare(observed, f_exp=[5000, 5000])
        assert res.pvalue > 0.01

    def test_node_cap(self, law):
        with pytest.raises(ResourceLimitError):
            g.generate(law, 40, seed=1)

    def test_seed_extends_realization(self, law):
        t1 = g.generate(law, 4, seed=77)
        t2 = g.generate(law, 6, seed=77)
        n = t1.size
        assert np.array_equal(t1.parent, t2.parent[:n])
        assert np.array_equal(t1.V, t2.V[:n])

    def test_extinction_rejection_reported(self):
        law = g.generic_law([(0.3, ()), (0.7, (0.2, 0.5))])
        tree = g.generate(law, 4, seed=5)
        assert tree.gen.max() == 4
        assert tree.regen_attempts >= 0


class TestPotential:
    def test_recompute_exact(self, medium_tree):
        t = medium_tree
        rng = np.random.default_rng(0)
        for x in rng.integers(0, t.size, 60):
            chain = t.ancestor_chain(int(x))
            v = 0.0
            for node in chain[1:]:
                v = v + t.disp[node]
            assert v == t.V[x]

    def test_root_values(self, small_tree):
        assert small_tree.V[0] == 0.0
        assert small_tree.gen[0] == 0
        assert small_tree.parent[0] == -1


class TestAncestry:
    def test_mrca_reflexive(self, small_tree):
        x = int(small_tree.generation_ids(4)[0])
        assert g.mrca(small_tree, x, x) == x

    def test_siblings_meet_at_parent(self, small_tree):
        t = small_tree
        for x in range(t.size):
            if t.n_children[x] == 3:
                kids = t.children(x)
                assert g.mrca(t, int(kids[0]), int(kids[1])) == x
                break

    def test_virtual_leaf_below_level(self, small_tree):
        x = int(small_tree.generation_ids(2)[0])
        out = g.ancestor_at(small_tree, x, 5, slot=4)
        assert out == VirtualLeaf(4)
        with pytest.raises(QueryError):
            g.ancestor_at(small_tree, x, 5)

    def test_ancestor_matrix_matches_chains(self, small_tree):
        ids = small_tree.generation_ids(5)[:8]
        mat = small_tree.ancestor_matrix(ids)
        for i, x in enumerate(ids):
            chain = small_tree.ancestor_chain(int(x))
            for gn, node in enumerate(chain):
                assert mat[i, gn] == node


class TestConductance:
    def test_root_value(self, small_tree):
        assert g.conductance_H(small_tree, 0) == pytest.approx(1.0, abs=1e-15)

    def test_two_term_path(self, small_tree):
        c = int(small_tree.children(0)[0])
        v = small_tree.V[c]
        assert g.conductance_H(small_tree, c) == pytest.approx(
            math.exp(-v) + 1.0, rel=1e-12
        )

    def test_always_at_least_one(self, medium_tree):
        ids = medium_tree.generation_ids(9)[:40]
        assert (conductance_H_level(medium_tree, ids) >= 1.0).all()

    def test_decomposition_identity(self, medium_tree):
        t = medium_tree
        rng = np.random.default_rng(8)
        for x in rng.choice(t.generation_ids(9), 20):
            x = int(x)
            chain = t.ancestor_chain(x)
            u = int(chain[rng.integers(1, len(chain))])
            lhs = g.conductance_H(t, x)
            rhs = (g.conductance_H(t, u) - 1.0) * math.exp(-(t.V[x] - t.V[u])) + (
                g.partial_H(t, u, x)
            )
            assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_partial_requires_ancestry(self, small_tree):
        a, b = (int(v) for v in small_tree.generation_ids(3)[:2])
        with pytest.raises(AncestryError):
            g.partial_H(small_tree, a, b)


class TestMartingale:
    def test_initial_value(self, small_tree):
        assert g.additive_martingale(small_tree, 0) == 1.0

    def test_mean_one_over_ensemble(self, law):
        trees = 1500
        vals = np.empty(trees)
        rng = rngmod.stream(11, "mart")
        for i in range(trees):
            t = g.generate(law, 6, rng=rng)
            vals[i] = g.additive_martingale(t, 6)
        se = vals.std(ddof=1) / math.sqrt(trees)
        assert abs(vals.mean() - 1.0) <= 4 * se

    def test_frozen_prefix_extension(self, law):
        tree = g.generate(law, 5, seed=31)
        w5 = g.additive_martingale(tree, 5)
        leaves = tree.generation_ids(5)
        rng = rngmod.stream(32, "ext")
        reps = 4000
        vals = np.empty(reps)
        for r in range(reps):
            counts, disp = law.sample_generation(rng, len(leaves))
            child_v = tree.V[np.repeat(leaves, counts)] + disp
            vals[r] = np.exp(-child_v).sum()
        se = vals.std(ddof=1) / math.sqrt(reps)
        assert abs(vals.mean() - w5) <= 4 * se


class TestDeltaEnumeration:
    def test_one_generation_count(self, small_tree):
        ids = small_tree.generation_ids(3)
        d = len(ids)
        tuples = list(g.enumerate_delta_k(small_tree, ids, 2))
        assert len(tuples) == d * (d - 1)

    def test_ancestor_pair_excluded(self, small_tree):
        u = int(small_tree.generation_ids(2)[0])
        c = int(small_tree.children(u)[0])
        assert list(g.enumerate_delta_k(small_tree, [u, c], 2)) == []

    def test_three_unrelated_pairs(self, small_tree):
        ids = list(small_tree.generation_ids(4)[:3])
        tuples = list(g.enumerate_delta_k(small_tree, ids, 2))
        assert len(tuples) == 6


class TestSnapshot:
    def test_round_trip(self, law, tmp_path):
        tree = g.generate(law, 4, seed=55)
        path = tmp_path / "tree.txt"
        g.save_snapshot(tree, path)
        back = g.load_snapshot(path)
        assert back.size == tree.size
        assert np.array_equal(back.parent, tree.parent)
        assert np.allclose(back.V, tree.V)
        assert back.law == law
