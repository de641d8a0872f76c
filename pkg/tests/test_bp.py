import numpy as np
import pytest
import scipy.stats

from bpdec import (BpParams, BpState, BroadcastSampler, Clause,
                   EnumerationBudgetError, Instance, PartialAssignment,
                   SolutionTable, bp_sweep, broadcast_sample,
                   brute_force_marginals, build_factor_graph, clause_fn_tanh,
                   generate_random_ksat, marginal, run_bp,
                   random_tree_instance)

from conftest import consistent_fixing, dual_enumeration_marginals, sample_test_trees


def converge(inst, fixed=None, params=None):
    graph = build_factor_graph(inst)
    fixed = fixed or PartialAssignment(inst.n)
    params = params or BpParams()
    state = BpState(graph)
    state, conv, sweeps = run_bp(state, graph, fixed, params)
    return state, graph, fixed, conv, sweeps


class TestClauseFunction:
    def test_zero_messages(self):
        # k=3 at flat messages: B = 1/4, tanh = B/(2-B) = 1/7
        assert clause_fn_tanh([0.0, 0.0]) == pytest.approx(1 / 7, abs=1e-15)

    def test_satisfied_neighbor_kills_warning(self):
        assert clause_fn_tanh([1.0, -0.7]) == 0.0
        assert clause_fn_tanh([0.3, 1.0, 0.2]) == 0.0

    def test_hard_limit_exact_one(self):
        assert clause_fn_tanh([-1.0, -1.0]) == 1.0

    def test_regularized_near_one(self):
        eps = 1e-4
        expect = (1 - eps) / (1 + eps)
        assert clause_fn_tanh([-1.0, -1.0], eps) == pytest.approx(expect, rel=1e-12)

    def test_monotone_in_epsilon(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            vals = rng.uniform(-1, 1, size=rng.integers(1, 5))
            outs = [clause_fn_tanh(vals, e) for e in (0.0, 1e-6, 1e-4, 1e-2, 0.3)]
            assert all(a >= b - 1e-15 for a, b in zip(outs, outs[1:]))

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            clause_fn_tanh([1.2, 0.0])
        with pytest.raises(ValueError):
            clause_fn_tanh([0.0], epsilon=1.0)
        with pytest.raises(ValueError):
            clause_fn_tanh([])


class TestSweep:
    def test_empty_formula_converges_immediately(self):
        inst = Instance(n=4, k=3, clauses=[])
        state, graph, fixed, conv, sweeps = converge(inst)
        assert conv and sweeps == 1
        assert np.all(state.h_field == 0.0)

    def test_single_clause_first_sweep(self):
        inst = Instance(n=3, k=3, clauses=[Clause((0, 1, 2), (0, 0, 0))])
        graph = build_factor_graph(inst)
        state = BpState(graph)
        bp_sweep(state, graph, PartialAssignment(3), BpParams())
        assert np.allclose(state.tanh_u, 1 / 7, atol=1e-15)

    def test_single_clause_marginal(self):
        inst = Instance(n=3, k=3, clauses=[Clause((0, 1, 2), (0, 0, 0))])
        state, graph, fixed, conv, _ = converge(inst)
        assert conv
        nu0, nu1 = marginal(state, graph, fixed, 0)
        assert nu1 == pytest.approx(4 / 7, abs=1e-12)
        assert nu0 + nu1 == 1.0

    def test_isolated_variable_marginal(self):
        inst = Instance(n=2, k=3, clauses=[])
        state, graph, fixed, _, _ = converge(inst)
        assert marginal(state, graph, fixed, 1) == (0.5, 0.5)

    def test_marginal_of_fixed_variable_rejected(self):
        inst = Instance(n=2, k=3, clauses=[])
        fixed = PartialAssignment(2)
        fixed.fix(0, 1)
        state, graph, fixed, _, _ = converge(inst, fixed)
        with pytest.raises(ValueError):
            marginal(state, graph, fixed, 0)

    def test_already_converged_returns_after_one_sweep(self):
        inst = generate_random_ksat(40, 80, 3, seed=1)
        state, graph, fixed, conv, _ = converge(inst)
        assert conv
        _, conv2, sweeps2 = run_bp(state, graph, fixed, BpParams())
        assert conv2 and sweeps2 == 1

    def test_terminates_within_r_max(self):
        inst = generate_random_ksat(500, 3500, 4, seed=2)
        state, graph, fixed, conv, sweeps = converge(inst)
        assert sweeps <= 200
        assert conv  # this density converges comfortably from a cold start

    def test_monotone_hardening_of_fixed_variables(self):
        inst = generate_random_ksat(30, 90, 3, seed=4)
        graph = build_factor_graph(inst)
        fixed = PartialAssignment(30)
        fixed.fix(5, 1)
        fixed.fix(7, 0)
        state = BpState(graph)
        params = BpParams()
        th2d = state.tanh_h.reshape(graph.m, graph.k)
        for _ in range(30):
            bp_sweep(state, graph, fixed, params)
            th2d = state.tanh_h.reshape(graph.m, graph.k)
            for i in (5, 7):
                for c in graph.clauses_of(i):
                    j = list(graph.var_of[c]).index(i)
                    expect = 1.0 if fixed.value_of(i) != graph.forb[c, j] else -1.0
                    assert th2d[c, j] == expect

    def test_hard_clash_resolved_with_epsilon_not_raised(self):
        # x0=0 violates clause 0 which then pushes x1 up; x2=0 violates
        # clause 1 which pushes x1 down: clashing hard support at x1
        inst = Instance(n=3, k=2, clauses=[Clause((0, 1), (0, 0)),
                                           Clause((1, 2), (1, 0))])
        graph = build_factor_graph(inst)
        fixed = PartialAssignment(3)
        fixed.fix(0, 0)
        fixed.fix(2, 0)
        state = BpState(graph)
        params = BpParams(epsilon=1e-4)
        for _ in range(5):
            bp_sweep(state, graph, fixed, params)
        tu2d = state.tanh_u.reshape(graph.m, graph.k)
        expect = (1 - 1e-4) / (1 + 1e-4)
        assert tu2d[0, 1] == pytest.approx(expect, rel=1e-9)
        assert tu2d[1, 0] == pytest.approx(expect, rel=1e-9)
        assert abs(state.h_field[1]) <= 1e-9  # symmetric clash cancels


class TestTreeExactness:
    def test_unconditioned(self):
        for inst in sample_test_trees(12, seed=5):
            state, graph, fixed, conv, _ = converge(inst)
            assert conv
            marg, count = brute_force_marginals(inst)
            assert count > 0
            for i in range(inst.n):
                nu0, _ = marginal(state, graph, fixed, i)
                assert abs(nu0 - marg[i, 0]) < 1e-9

    def test_with_consistent_fixing(self):
        rng = np.random.default_rng(8)
        for inst in sample_test_trees(8, seed=6):
            fixed, _ = consistent_fixing(inst, 0.3, rng)
            marg, count = brute_force_marginals(inst, fixed)
            assert count > 0
            state, graph, fixed, conv, _ = converge(inst, fixed)
            assert conv
            for i in range(inst.n):
                if not fixed.is_fixed(i):
                    nu0, _ = marginal(state, graph, fixed, i)
                    assert abs(nu0 - marg[i, 0]) < 1e-9

    def test_warm_start_matches_cold_start(self):
        rng = np.random.default_rng(9)
        for inst in sample_test_trees(5, seed=7, min_vars=4):
            fixed, sol = consistent_fixing(inst, 0.2, rng)
            state, graph, _, conv, _ = converge(inst, fixed)
            assert conv
            free = [i for i in range(inst.n) if not fixed.is_fixed(i)]
            extra = int(rng.choice(free))
            fixed.fix(extra, int(sol[extra]))
            # warm continuation vs a cold run under the extended fixing
            _, conv_w, _ = run_bp(state, graph, fixed, BpParams())
            cold, _, _, conv_c, _ = converge(inst, fixed)
            assert conv_w and conv_c
            assert np.max(np.abs(state.h_field - cold.h_field)) < 1e-8

    def test_loopy_example_close_but_not_exact(self, loop_instance):
        state, graph, fixed, conv, _ = converge(loop_instance)
        assert conv
        marg, count = brute_force_marginals(loop_instance)
        assert count == 152
        errs = [abs(marginal(state, graph, fixed, i)[0] - marg[i, 0])
                for i in range(8)]
        assert max(errs) < 2e-3   # one cycle: close, provably not exact


class TestBruteForce:
    def test_empty_formula(self):
        marg, count = brute_force_marginals(Instance(n=3, k=2, clauses=[]))
        assert count == 8
        assert np.allclose(marg, 0.5)

    def test_unit_clause_conditioning_implies(self):
        inst = Instance(n=3, k=3, clauses=[Clause((0, 1, 2), (1, 1, 0))])
        fixed = PartialAssignment.from_dict(3, {0: 1, 1: 1})
        marg, count = brute_force_marginals(inst, fixed)
        assert count == 1
        assert marg[2, 1] == 1.0 and marg[2, 0] == 0.0

    def test_against_dual_enumerator(self, loop_instance):
        marg, count = brute_force_marginals(loop_instance)
        marg2, count2 = dual_enumeration_marginals(loop_instance)
        assert count == count2
        assert np.allclose(marg, marg2, atol=1e-12)

    def test_unsatisfiable_conditioning(self):
        inst = Instance(n=2, k=2, clauses=[Clause((0, 1), (0, 0))])
        fixed = PartialAssignment.from_dict(2, {0: 0, 1: 0})
        marg, count = brute_force_marginals(inst, fixed)
        assert count == 0
        assert np.isnan(marg[0, 0])

    def test_budget_refused(self):
        with pytest.raises(EnumerationBudgetError):
            brute_force_marginals(Instance(n=29, k=2, clauses=[]))

    def test_solution_table_roundtrip(self):
        inst = generate_random_ksat(10, 15, 3, seed=6)
        table = SolutionTable.enumerate(inst)
        marg, count = brute_force_marginals(inst)
        assert table.count == count
        for row in table.bits[:: max(1, count // 7)]:
            assert table.index_of(row) >= 0


class TestBroadcastSampling:
    def test_single_clause_uniform_over_satisfying(self):
        inst = Instance(n=3, k=3, clauses=[Clause((0, 1, 2), (0, 0, 0))])
        sampler = BroadcastSampler(inst)
        x = sampler.sample_many(np.random.default_rng(3), 35000)
        codes = x[:, 0] * 4 + x[:, 1] * 2 + x[:, 2]
        counts = np.bincount(codes, minlength=8)
        assert counts[0] == 0
        p = scipy.stats.chisquare(counts[1:]).pvalue
        assert p > 0.01

    def test_isolated_variables_fair_bits(self):
        inst = Instance(n=4, k=3, clauses=[])
        x = BroadcastSampler(inst).sample_many(np.random.default_rng(4), 20000)
        for i in range(4):
            p = scipy.stats.binomtest(int(x[:, i].sum()), 20000, 0.5).pvalue
            assert p > 0.005
        # and columns are independent fair bits jointly
        codes = x @ (1 << np.arange(4))
        assert scipy.stats.chisquare(np.bincount(codes, minlength=16)).pvalue > 0.01

    def test_tree_empirical_marginals_match_bp(self):
        inst = sample_test_trees(1, seed=12, depths=(2,), min_vars=8)[0]
        state, graph, fixed, conv, _ = converge(inst)
        assert conv
        sampler = BroadcastSampler(inst)
        r = 40000
        x = sampler.sample_many(np.random.default_rng(5), r)
        for i in range(inst.n):
            nu0, _ = marginal(state, graph, fixed, i)
            se = max(np.sqrt(nu0 * (1 - nu0) / r), 1e-4)
            assert abs((x[:, i] == 0).mean() - nu0) < 4 * se

    def test_single_sample_path_agrees_distributionally(self):
        inst = Instance(n=3, k=3, clauses=[Clause((0, 1, 2), (0, 0, 0))])
        rng = np.random.default_rng(6)
        codes = []
        for _ in range(7000):
            x = broadcast_sample(inst, rng)
            codes.append(x[0] * 4 + x[1] * 2 + x[2])
        counts = np.bincount(codes, minlength=8)
        assert counts[0] == 0
        assert scipy.stats.chisquare(counts[1:]).pvalue > 0.01

    def test_every_sample_satisfies(self):
        inst = sample_test_trees(1, seed=13, depths=(3,), min_vars=6)[0]
        sampler = BroadcastSampler(inst)
        x = sampler.sample_many(np.random.default_rng(7), 500)
        var_arr, forb_arr = inst.var_array(), inst.forbidden_array()
        violated = np.all(x[:, var_arr.ravel()].reshape(500, inst.m, inst.k)
                          == forb_arr, axis=2)
        assert not violated.any()

    def test_loopy_input_rejected(self, loop_instance):
        with pytest.raises(ValueError):
            BroadcastSampler(loop_instance)
        with pytest.raises(ValueError):
            broadcast_sample(loop_instance, np.random.default_rng(0))
