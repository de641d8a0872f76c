"""Shared fixtures and independent oracles for the test suite."""

import numpy as np
import pytest

from bpdec import (Instance, PartialAssignment, parse_dimacs,
                   random_tree_instance)

FIG_DIMACS = "p cnf 8 4\n1 2 -3 0\n-2 4 5 0\n5 6 8 0\n-3 7 -8 0\n"


@pytest.fixture
def loop_instance():
    """The worked 8-variable, 4-clause example formula (contains one cycle)."""
    return parse_dimacs(FIG_DIMACS)


def naive_clause_satisfied(clause, x):
    """Slot-by-slot re-evaluation, kept deliberately naive."""
    for v, z in zip(clause.vars, clause.forbidden):
        if x[v] != z:
            return True
    return False


def dual_enumeration_marginals(inst, fixed=None):
    """Second independent enumerator, iterating bits in the opposite order.

    Free variable j takes bit (code >> (n_free - 1 - j)), the reverse of the
    production enumerator's mapping, and clauses are re-checked per
    assignment with the naive evaluator.
    """
    free = [i for i in range(inst.n)
            if fixed is None or not fixed.is_fixed(i)]
    nf = len(free)
    assert nf <= 22, "dual enumerator is for small oracles"
    x = np.zeros(inst.n, dtype=np.uint8)
    if fixed is not None:
        for i in fixed.fixed_indices():
            x[i] = fixed.value[i]
    ones = np.zeros(inst.n, dtype=np.int64)
    count = 0
    for code in range(1 << nf):
        for j, v in enumerate(free):
            x[v] = (code >> (nf - 1 - j)) & 1
        if all(naive_clause_satisfied(c, x) for c in inst.clauses):
            count += 1
            ones += x
    marg = np.full((inst.n, 2), np.nan)
    if count:
        marg[:, 1] = ones / count
        marg[:, 0] = 1.0 - marg[:, 1]
    return marg, count


def sample_test_trees(count, seed, k_values=(3, 4), depths=(1, 2, 3, 4),
                      min_vars=2, max_vars=18):
    """Reproducible list of small tree instances spanning depths and widths."""
    out = []
    attempt = 0
    rng = np.random.default_rng(seed)
    while len(out) < count:
        k = int(rng.choice(k_values))
        depth = int(rng.choice(depths))
        alpha = float(rng.uniform(0.15, 0.9)) / (k - 1)
        inst = random_tree_instance(alpha, k, depth, seed=seed * 100003 + attempt,
                                    max_vars=max_vars)
        attempt += 1
        if inst.n >= min_vars:
            out.append(inst)
    return out


def consistent_fixing(inst, frac, rng, solutions=None):
    """Fix a random fraction of variables to their values in a random solution."""
    from bpdec import SolutionTable
    table = solutions or SolutionTable.enumerate(inst)
    assert table.count > 0
    sol = table.bits[rng.integers(table.count)]
    fixed = PartialAssignment(inst.n)
    for i in range(inst.n):
        if rng.random() < frac:
            fixed.fix(i, int(sol[i]))
    return fixed, sol
