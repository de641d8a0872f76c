"""The BP-guided decimation loop with frozen-set instrumentation.

Each step: run BP to its stopping criterion (warm-started), pick a free
variable uniformly at random, actuate its warning-implied value if it has
one, otherwise draw from the BP marginal; then fix it, propagate warnings,
and stop with FAIL on contradiction.  The idealized variant replaces the
BP marginal with the exact conditional marginal from an enumerated
solution table and skips BP entirely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .bp import BpParams, BpState, SolutionTable, marginal, run_bp
from .instance import PartialAssignment, build_factor_graph, check_assignment
from .wp import WpState

SOLUTION = "solution"
CONTRADICTION = "contradiction"


@dataclass
class DecimationParams:
    bp: BpParams = field(default_factory=BpParams)
    seed: int = 0
    idealized: bool = False
    record_trace: bool = True


@dataclass
class StepRecord:
    t: int
    variable: int
    value: int
    was_implied: bool
    frozen: int
    newly_frozen: int
    bp_sweeps: int


@dataclass
class DecimationTrace:
    n: int
    m: int
    k: int
    seed: int
    idealized: bool
    status: str
    order: list
    frozen_counts: list
    steps: list
    assignment: np.ndarray | None = None
    t_star: int | None = None
    total_sweeps: int = 0

    @property
    def succeeded(self):
        return self.status == SOLUTION

    def to_csv(self, fileobj):
        fileobj.write("t,variable,value,was_implied,frozen,newly_frozen,bp_sweeps\n")
        for s in self.steps:
            fileobj.write(f"{s.t},{s.variable},{s.value},{int(s.was_implied)},"
                          f"{s.frozen},{s.newly_frozen},{s.bp_sweeps}\n")

    def summary(self, params=None):
        out = {
            "status": self.status,
            "n": self.n,
            "m": self.m,
            "k": self.k,
            "seed": self.seed,
            "idealized": self.idealized,
            "t_star": self.t_star,
            "steps_taken": len(self.order),
            "total_bp_sweeps": self.total_sweeps,
        }
        if params is not None:
            out["bp_params"] = {"delta": params.bp.delta, "r_max": params.bp.r_max,
                                "epsilon": params.bp.epsilon}
        return out

    def summary_json(self, params=None):
        return json.dumps(self.summary(params), sort_keys=True)


def decimate(inst, params, graph=None, solution_table=None):
    """Run one decimation on ``inst``; FAIL is reported as a trace, not raised.

    ``graph`` and ``solution_table`` may be passed in to amortize their
    construction over many runs on the same instance.
    """
    n = inst.n
    if graph is None:
        graph = build_factor_graph(inst)
    rng = np.random.Generator(np.random.Philox(key=np.uint64(params.seed)))
    fixed = PartialAssignment(n)
    wp = WpState(graph, fixed)
    table = active = None
    bp_state = None
    if params.idealized:
        table = solution_table if solution_table is not None \
            else SolutionTable.enumerate(inst)
        if table.count == 0:
            raise ValueError("idealized decimation needs a satisfiable instance")
        active = np.ones(table.count, dtype=bool)
        n_active = table.count
    else:
        bp_state = BpState(graph)

    remaining = np.arange(n, dtype=np.int64)
    rem_len = n
    order = []
    frozen_counts = []
    steps = []
    total_sweeps = 0
    status = SOLUTION
    t_star = None

    for t in range(1, n + 1):
        sweeps = 0
        if not params.idealized:
            _, _, sweeps = run_bp(bp_state, graph, fixed, params.bp)
            total_sweeps += sweeps
        r = int(rng.integers(rem_len))
        i = int(remaining[r])
        remaining[r] = remaining[rem_len - 1]
        rem_len -= 1
        if wp.is_implied(i):
            x = wp.implied_value(i)
            was_implied = True
        else:
            was_implied = False
            if params.idealized:
                col = table.bits[:, i]
                c0 = int(np.count_nonzero(active & (col == 0)))
                nu0 = c0 / n_active
            else:
                nu0, _ = marginal(bp_state, graph, fixed, i)
            x = 0 if rng.random() < nu0 else 1
        fixed.fix(i, x)
        if params.idealized:
            active &= table.bits[:, i] == x
            n_active = int(np.count_nonzero(active))
            assert n_active > 0, "conditioned solution set emptied unexpectedly"
        contradiction = wp.fix(i)
        order.append(i)
        prev = frozen_counts[-1] if frozen_counts else 0
        frozen_counts.append(wp.frozen_count)
        if params.record_trace:
            steps.append(StepRecord(t, i, x, was_implied, wp.frozen_count,
                                    wp.frozen_count - prev, sweeps))
        if contradiction:
            status = CONTRADICTION
            t_star = t
            break

    assignment = None
    if status == SOLUTION:
        assignment = fixed.value.copy()
        ok, bad = check_assignment(inst, assignment)
        assert ok, f"decimation produced a non-solution (clause {bad})"
    return DecimationTrace(n=n, m=inst.m, k=inst.k, seed=params.seed,
                           idealized=params.idealized, status=status,
                           order=order, frozen_counts=frozen_counts,
                           steps=steps, assignment=assignment, t_star=t_star,
                           total_sweeps=total_sweeps)


def frozen_fraction_curve(trace, n=None):
    """Empirical (theta, frozen fraction) polyline up to the halting step."""
    n = n or trace.n
    return [((t + 1) / n, w / n) for t, w in enumerate(trace.frozen_counts)]


def idealized_uniformity_test(inst, runs, rng, solution_table=None):
    """Chi-square p-value of idealized-decimation outputs vs uniformity.

    Enumerates the solution set (must not exceed 2^12 solutions), runs the
    idealized algorithm ``runs`` times, and tests the observed solution
    frequencies against the uniform distribution.
    """
    table = solution_table if solution_table is not None \
        else SolutionTable.enumerate(inst, max_solutions=1 << 12)
    if table.count == 0:
        raise ValueError("instance is unsatisfiable")
    graph = build_factor_graph(inst)
    counts = np.zeros(table.count, dtype=np.int64)
    for _ in range(runs):
        params = DecimationParams(seed=int(rng.integers(2**63)),
                                  idealized=True, record_trace=False)
        trace = decimate(inst, params, graph=graph, solution_table=table)
        counts[table.index_of(trace.assignment)] += 1
    if table.count == 1:
        assert counts[0] == runs
        return 1.0
    return float(scipy.stats.chisquare(counts).pvalue)
