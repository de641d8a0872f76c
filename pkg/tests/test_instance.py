import numpy as np
import pytest
import scipy.stats

from bpdec import (Clause, DimacsError, Instance, PartialAssignment,
                   build_factor_graph, check_assignment, emit_dimacs,
                   emit_metadata, generate_random_ksat, parse_dimacs)

from conftest import FIG_DIMACS, naive_clause_satisfied


class TestGeneration:
    def test_empty_formula(self):
        inst = generate_random_ksat(4, 0, 3, seed=7)
        assert inst.m == 0 and inst.n == 4 and inst.alpha == 0.0

    def test_determinism_bit_identical(self):
        a = generate_random_ksat(8, 4, 3, seed=123)
        b = generate_random_ksat(8, 4, 3, seed=123)
        assert a == b
        assert emit_dimacs(a) == emit_dimacs(b)
        c = generate_random_ksat(8, 4, 3, seed=124)
        assert c != a

    def test_clause_shape(self):
        inst = generate_random_ksat(100, 700, 4, seed=1)
        assert inst.m == 700
        for c in inst.clauses:
            assert len(set(c.vars)) == 4
            assert all(b in (0, 1) for b in c.forbidden)
        # total degree is m*k by construction, so the mean degree is exact
        degs = np.bincount(inst.var_array().ravel(), minlength=100)
        assert degs.sum() == 2800
        assert degs.mean() == pytest.approx(28.0)

    def test_degree_distribution_poisson(self):
        # large-n degrees fit Poisson(alpha*k); chi-square at the 1% level
        n, alpha, k = 20000, 2.0, 3
        inst = generate_random_ksat(n, int(alpha * n), k, seed=11)
        degs = np.bincount(inst.var_array().ravel(), minlength=n)
        lam = alpha * k
        edges = [-0.5]
        while edges[-1] < lam + 6 * np.sqrt(lam):
            edges.append(edges[-1] + 1)
        edges[-1] = np.inf
        obs, _ = np.histogram(degs, bins=edges)
        probs = np.diff([scipy.stats.poisson.cdf(e, lam) for e in edges])
        keep = probs * n >= 5
        obs_k = np.append(obs[keep], obs[~keep].sum())
        exp_k = np.append(probs[keep], probs[~keep].sum()) * n
        stat = ((obs_k - exp_k) ** 2 / exp_k).sum()
        p = scipy.stats.chi2.sf(stat, len(obs_k) - 1)
        assert p > 0.01

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            generate_random_ksat(2, 1, 3, seed=0)   # n < k
        with pytest.raises(ValueError):
            generate_random_ksat(5, -1, 3, seed=0)
        with pytest.raises(ValueError):
            generate_random_ksat(5, 1, 1, seed=0)

    def test_bad_clause(self):
        with pytest.raises(ValueError):
            Clause((0, 0, 1), (0, 0, 0))
        with pytest.raises(ValueError):
            Clause((0, 1), (0, 2))
        with pytest.raises(ValueError):
            Instance(n=2, k=3, clauses=[Clause((0, 1, 2), (0, 0, 0))])


class TestFactorGraph:
    def test_worked_example_adjacency(self, loop_instance):
        g = build_factor_graph(loop_instance)
        # x3 (index 2) appears negated in clauses 0 and 3
        assert g.clauses_of(2) == [0, 3]
        assert g.forbidden_value(2, 0) == 1 and g.forbidden_value(2, 3) == 1
        assert g.pos_clauses(2) == [0, 3]      # satisfied by x3 = 0
        assert g.neg_clauses(2) == []
        assert g.agreeing_clauses(2, 0) == [3]
        assert g.disagreeing_clauses(2, 0) == []
        assert g.directed_edge_count == 2 * 4 * 3

    def test_single_clause_partitions_empty(self):
        inst = Instance(n=3, k=3, clauses=[Clause((0, 1, 2), (0, 0, 0))])
        g = build_factor_graph(inst)
        for i in range(3):
            assert g.agreeing_clauses(i, 0) == []
            assert g.disagreeing_clauses(i, 0) == []

    def test_partition_invariant_exhaustive(self):
        inst = generate_random_ksat(50, 200, 3, seed=5)
        g = build_factor_graph(inst)
        for i in range(inst.n):
            deg = g.degree(i)
            for a in g.clauses_of(i):
                agree = g.agreeing_clauses(i, a)
                disagree = g.disagreeing_clauses(i, a)
                assert len(agree) + len(disagree) + 1 == deg
                assert set(agree) | set(disagree) | {a} == set(g.clauses_of(i))
                assert not set(agree) & set(disagree)

    def test_forest_detection(self, loop_instance):
        assert not build_factor_graph(loop_instance).is_forest()
        chain = Instance(n=5, k=3, clauses=[Clause((0, 1, 2), (0, 1, 0)),
                                            Clause((2, 3, 4), (1, 0, 0))])
        assert build_factor_graph(chain).is_forest()


class TestDimacs:
    def test_literal_mapping(self):
        inst = parse_dimacs("p cnf 3 1\n1 -2 3 0\n")
        assert inst.clauses == [Clause((0, 1, 2), (0, 1, 0))]

    def test_roundtrip_random(self):
        inst = generate_random_ksat(30, 90, 4, seed=9)
        again = parse_dimacs(emit_dimacs(inst))
        assert again.clauses == inst.clauses and again.n == inst.n

    def test_roundtrip_canonicalizes(self):
        messy = "c comment\np cnf 3 1\n  1  -2   3  0\nc end\n"
        canon = emit_dimacs(parse_dimacs(messy))
        assert canon == "p cnf 3 1\n1 -2 3 0\n"
        assert emit_dimacs(parse_dimacs(canon)) == canon

    def test_worked_example_signs(self, loop_instance):
        assert loop_instance.n == 8 and loop_instance.m == 4
        assert loop_instance.clauses[0] == Clause((0, 1, 2), (0, 0, 1))
        assert loop_instance.clauses[3] == Clause((2, 6, 7), (1, 0, 1))
        assert emit_dimacs(loop_instance) == FIG_DIMACS

    def test_bytes_accepted(self):
        inst = parse_dimacs(b"p cnf 2 1\n1 2 0\n")
        assert inst.clauses == [Clause((0, 1), (0, 0))]

    def test_nonuniform_width_rejected(self):
        with pytest.raises(DimacsError, match="line 3.*non-uniform"):
            parse_dimacs("p cnf 4 2\n1 2 3 0\n1 2 0\n")

    def test_bad_token_line_number(self):
        with pytest.raises(DimacsError, match="line 2.*bad token"):
            parse_dimacs("p cnf 2 1\n1 x 0\n")

    def test_header_errors(self):
        with pytest.raises(DimacsError, match="missing problem line"):
            parse_dimacs("c nothing\n")
        with pytest.raises(DimacsError, match="before problem line"):
            parse_dimacs("1 2 0\np cnf 2 1\n")
        with pytest.raises(DimacsError, match="declared 2"):
            parse_dimacs("p cnf 2 2\n1 2 0\n")
        with pytest.raises(DimacsError, match="unterminated"):
            parse_dimacs("p cnf 2 1\n1 2\n")
        with pytest.raises(DimacsError, match="exceeds"):
            parse_dimacs("p cnf 2 1\n1 3 0\n")
        with pytest.raises(DimacsError, match="repeated"):
            parse_dimacs("p cnf 2 1\n1 -1 0\n")

    def test_metadata_sidecar(self):
        inst = generate_random_ksat(6, 3, 3, seed=42)
        meta = emit_metadata(inst)
        assert "seed=42\n" in meta and "k=3\n" in meta
        assert "generator=philox4x64-fisheryates-v1\n" in meta


class TestCheckAssignment:
    def test_empty_formula_satisfied(self):
        ok, bad = check_assignment(Instance(n=3, k=2, clauses=[]), [0, 1, 0])
        assert ok and bad is None

    def test_forbidden_tuple_hit(self):
        inst = Instance(n=4, k=3, clauses=[Clause((0, 1, 2), (0, 0, 0))])
        ok, bad = check_assignment(inst, [0, 0, 0, 1])
        assert not ok and bad == 0
        ok, _ = check_assignment(inst, [0, 0, 1, 1])
        assert ok

    def test_against_naive_evaluator(self):
        inst = generate_random_ksat(12, 30, 3, seed=3)
        rng = np.random.default_rng(0)
        for _ in range(200):
            x = rng.integers(0, 2, size=12).astype(np.uint8)
            ok, bad = check_assignment(inst, x)
            naive = [naive_clause_satisfied(c, x) for c in inst.clauses]
            assert ok == all(naive)
            if not ok:
                assert bad == naive.index(False)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            check_assignment(Instance(n=3, k=2, clauses=[]), [0, 1])


class TestPartialAssignment:
    def test_fix_and_query(self):
        pa = PartialAssignment(4)
        pa.fix(2, 1)
        assert pa.is_fixed(2) and pa.value_of(2) == 1 and pa.count == 1
        assert list(pa.fixed_indices()) == [2]
        assert pa.code[2] == 1 and pa.code[0] == -1

    def test_double_fix_rejected(self):
        pa = PartialAssignment(4)
        pa.fix(1, 0)
        with pytest.raises(ValueError):
            pa.fix(1, 1)
        with pytest.raises(ValueError):
            pa.fix(0, 2)

    def test_version_and_copy(self):
        pa = PartialAssignment(3)
        v0 = pa.version
        pa.fix(0, 1)
        assert pa.version == v0 + 1
        cp = pa.copy()
        cp.fix(1, 0)
        assert not pa.is_fixed(1) and cp.is_fixed(1)
