"""Belief propagation on k-SAT factor graphs, in the tanh message domain.

Messages live on directed edges: ``tanh_u`` (clause to variable, in [0, 1])
and ``tanh_h`` (variable to clause, in [-1, 1], log-likelihood of the
variable *satisfying* that clause).  A sweep is synchronous: every clause
message is recomputed from the current variable messages, then every
variable message from the new clause messages.  Fixed variables override
their outgoing messages with +-1.  Hard messages (tanh_u = 1 within
1-2^-40) are absorbing; when a variable receives hard support on both
sides, the clashing messages are recomputed with a small epsilon in the
clause function, never surfacing an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .instance import PartialAssignment, build_factor_graph

HARD_TANH = 1.0 - 2.0**-40


class EnumerationBudgetError(ValueError):
    """Brute-force enumeration would exceed the configured budget."""


@dataclass
class BpParams:
    """Stopping tolerance, sweep cap, and the disambiguation epsilon."""

    delta: float = 1e-10
    r_max: int = 200
    epsilon: float = 1e-4

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.r_max < 1:
            raise ValueError("r_max must be at least 1")
        if not 0 <= self.epsilon < 1:
            raise ValueError("epsilon must lie in [0, 1)")


def clause_fn_tanh(tanh_h_values, epsilon=0.0):
    """tanh of the clause function applied to the incoming tanh messages.

    Computed as B/(2-B) with B = (1-eps) * prod(1-t_i) / 2^(k-1), which is
    tanh(-0.5*log(1-B)) without ever forming the log, so B -> 1 cleanly
    returns 1.0 (a hard message) instead of overflowing.
    """
    if not 0 <= epsilon < 1:
        raise ValueError("epsilon must lie in [0, 1)")
    b = 1.0 - epsilon
    count = 0
    for t in tanh_h_values:
        if not -1.0 <= t <= 1.0:
            raise ValueError("tanh messages must lie in [-1, 1]")
        b *= (1.0 - t) * 0.5
        count += 1
    if count == 0:
        raise ValueError("clause function needs at least one incoming message")
    return b / (2.0 - b)


class BpState:
    """Message arrays for one factor graph, flat (m*k,) edge layout."""

    def __init__(self, graph):
        mk = graph.m * graph.k
        self.graph = graph
        self.tanh_h = np.zeros(mk)
        self.tanh_u = np.zeros(mk)
        self.h_field = np.zeros(graph.n)
        self.iteration = 0
        self._th2 = np.zeros(mk)
        self._tu2 = np.zeros(mk)
        self._field2 = np.zeros(graph.n)
        self._scr_t = np.zeros(mk)
        self._scr_p = np.zeros(mk)
        self._scr_m = np.zeros(mk)

    def messages_2d(self):
        """(tanh_h, tanh_u) reshaped to (m, k) views for inspection."""
        m, k = self.graph.m, self.graph.k
        return self.tanh_h.reshape(m, k), self.tanh_u.reshape(m, k)

    def dump_messages_csv(self, path):
        """Diagnostic dump: one row per directed edge pair."""
        g = self.graph
        with open(path, "w") as f:
            f.write("clause,slot,variable,forbidden,tanh_h,tanh_u\n")
            for c in range(g.m):
                for j in range(g.k):
                    e = c * g.k + j
                    f.write(f"{c},{j},{g.var_of[c, j]},{g.forb[c, j]},"
                            f"{self.tanh_h[e]!r},{self.tanh_u[e]!r}\n")


@njit(cache=True)
def _sweep_kernel(k, edge_sgn, edge_forb, var_ptr, var_edges, fixed_code,
                  th, tu, field, th_new, tu_new, field_new,
                  scratch_t, scratch_p, scratch_m, inv_norm, eps, hard):
    n = field.shape[0]
    m = (th.shape[0] // k) if k else 0
    in_range = True
    # clause -> variable messages from the current variable messages
    for c in range(m):
        base = c * k
        pref = 1.0
        for j in range(k):
            tu_new[base + j] = pref       # stash the prefix product
            pref *= 1.0 - th[base + j]
        suf = 1.0
        for j in range(k - 1, -1, -1):
            b = tu_new[base + j] * suf * inv_norm
            val = b / (2.0 - b)
            if not 0.0 <= val <= 1.0:
                in_range = False
            tu_new[base + j] = val
            suf *= 1.0 - th[base + j]
    # variable -> clause messages and per-variable fields from the new
    # clause messages.  The tanh of a sum of atanh terms is computed in
    # product form, (prod(1+t) - prod(1-t)) / (prod(1+t) + prod(1-t)):
    # hard messages (t = +-1) contribute an exact zero factor and are
    # absorbing, per-edge exclusion uses prefix/suffix products, and a
    # clash of hard support on both sides (detected up front or as a
    # vanishing denominator) is resolved by recomputing the variable's
    # incoming messages with epsilon and retrying
    sup = 0.0
    for v in range(n):
        lo = var_ptr[v]
        hi = var_ptr[v + 1]
        if lo == hi:
            field_new[v] = 0.0
            continue
        fc = fixed_code[v]
        for _attempt in range(2):
            ok = True
            hard_pos = False
            hard_neg = False
            for e in range(lo, hi):
                t = edge_sgn[e] * tu_new[var_edges[e]]
                scratch_t[e] = t
                if t >= hard:
                    hard_pos = True
                elif t <= -hard:
                    hard_neg = True
            if hard_pos and hard_neg:
                ok = False
            if ok:
                pp = 1.0
                mm = 1.0
                for e in range(lo, hi):
                    scratch_p[e] = pp            # stash prefix products
                    scratch_m[e] = mm
                    t = scratch_t[e]
                    pp *= 1.0 + t
                    mm *= 1.0 - t
                    # joint power-of-two rescale: the (p - m)/(p + m)
                    # ratio is exactly invariant, and p*m <= 1 rules out
                    # both factors being large at once
                    if pp > 1e130 or mm > 1e130:
                        pp *= 2.0**-432
                        mm *= 2.0**-432
                    elif pp < 1e-130 and mm < 1e-130:
                        pp *= 2.0**432
                        mm *= 2.0**432
                den = pp + mm
                if den <= 0.0:
                    ok = False
                else:
                    acc = (pp - mm) / den
            if ok:
                sp = 1.0
                sm = 1.0
                for e in range(hi - 1, lo - 1, -1):
                    idx = var_edges[e]
                    if fc >= 0:
                        th_new[idx] = 1.0 if fc != edge_forb[e] else -1.0
                    else:
                        pe = scratch_p[e] * sp
                        me = scratch_m[e] * sm
                        den = pe + me
                        if den <= 0.0:
                            ok = False
                            break
                        val = edge_sgn[e] * (pe - me) / den
                        if not -1.0 <= val <= 1.0:
                            in_range = False
                        th_new[idx] = val
                    t = scratch_t[e]
                    sp *= 1.0 + t
                    sm *= 1.0 - t
                    if sp > 1e130 or sm > 1e130:
                        sp *= 2.0**-432
                        sm *= 2.0**-432
                    elif sp < 1e-130 and sm < 1e-130:
                        sp *= 2.0**432
                        sm *= 2.0**432
            if ok:
                field_new[v] = acc
                d = abs(acc - field[v])
                if d > sup:
                    sup = d
                break
            for e in range(lo, hi):
                idx = var_edges[e]
                b = 2.0 * tu_new[idx] / (1.0 + tu_new[idx])
                b *= 1.0 - eps
                tu_new[idx] = b / (2.0 - b)
    return sup, in_range


class _GraphCache:
    """Var-grouped flat views of a FactorGraph shared by the sweep kernel."""

    def __init__(self, graph):
        self.edge_sgn = np.where(graph.edge_forb == 1, 1.0, -1.0)
        self.edge_forb = np.ascontiguousarray(graph.edge_forb)
        self.var_ptr = graph.var_ptr
        self.var_edges = graph.var_edges


def _cache(graph):
    cache = getattr(graph, "_bp_cache", None)
    if cache is None:
        cache = _GraphCache(graph)
        graph._bp_cache = cache
    return cache


def bp_sweep(state, graph, fixed, params):
    """One synchronous sweep; returns sup_i |tanh h_i - previous tanh h_i|."""
    c = _cache(graph)
    inv_norm = 2.0 ** (1 - graph.k)
    sup, in_range = _sweep_kernel(
        graph.k, c.edge_sgn, c.edge_forb, c.var_ptr, c.var_edges,
        fixed.code, state.tanh_h, state.tanh_u, state.h_field,
        state._th2, state._tu2, state._field2,
        state._scr_t, state._scr_p, state._scr_m,
        inv_norm, params.epsilon, HARD_TANH)
    state.tanh_h, state._th2 = state._th2, state.tanh_h
    state.tanh_u, state._tu2 = state._tu2, state.tanh_u
    state.h_field, state._field2 = state._field2, state.h_field
    state.iteration += 1
    assert in_range, "a message left its range ([0,1] for tanh_u, [-1,1] for tanh_h)"
    return sup


def run_bp(state, graph, fixed, params):
    """Sweep until the field change drops below delta or r_max is hit.

    Messages are retained in ``state``, so successive calls warm-start.
    Returns (state, converged, sweeps_used).
    """
    sweeps = 0
    converged = False
    for _ in range(params.r_max):
        sup = bp_sweep(state, graph, fixed, params)
        sweeps += 1
        if sup < params.delta:
            converged = True
            break
    return state, converged, sweeps


def marginal(state, graph, fixed, i):
    """BP marginal estimate (nu0, nu1) for a non-fixed variable."""
    if fixed.is_fixed(i):
        raise ValueError(f"variable {i} is fixed; its marginal is degenerate")
    t = state.h_field[i]
    nu0 = 0.5 * (1.0 + t)
    return nu0, 1.0 - nu0


def _free_vars(inst, fixed):
    if fixed is None:
        return np.arange(inst.n, dtype=np.int64)
    return np.flatnonzero(~fixed.in_u).astype(np.int64)


def _enumeration_blocks(inst, fixed, free, chunk_bits=16):
    """Yield (assignments, satisfied) blocks over all completions of U."""
    n, m = inst.n, inst.m
    nf = len(free)
    var_arr = inst.var_array()
    forb_arr = inst.forbidden_array()
    total = 1 << nf
    step = 1 << min(chunk_bits, nf)
    base = np.zeros(n, dtype=np.uint8)
    if fixed is not None:
        base[fixed.in_u] = fixed.value[fixed.in_u]
    for start in range(0, total, step):
        count = min(step, total - start)
        codes = np.arange(start, start + count, dtype=np.uint64)
        block = np.broadcast_to(base, (count, n)).copy()
        for j, v in enumerate(free):
            block[:, v] = (codes >> np.uint64(j)) & np.uint64(1)
        if m:
            sat = ~np.all(block[:, var_arr.ravel()].reshape(count, m, inst.k)
                          == forb_arr, axis=2).any(axis=1)
        else:
            sat = np.ones(count, dtype=bool)
        yield block, sat


def brute_force_marginals(inst, fixed=None, max_free=28):
    """Exact conditional marginals by enumeration.

    Returns (marginals, solution_count) where marginals is (n, 2) with
    rows (nu0, nu1); rows are NaN when solution_count is 0.  Refuses more
    than ``max_free`` free variables.
    """
    free = _free_vars(inst, fixed)
    if len(free) > max_free:
        raise EnumerationBudgetError(
            f"{len(free)} free variables exceed the enumeration budget of {max_free}")
    ones = np.zeros(inst.n, dtype=np.float64)
    count = 0
    for block, sat in _enumeration_blocks(inst, fixed, free):
        count += int(sat.sum())
        if sat.any():
            ones += block[sat].sum(axis=0)
    marg = np.full((inst.n, 2), np.nan)
    if count:
        marg[:, 1] = ones / count
        marg[:, 0] = 1.0 - marg[:, 1]
    return marg, count


class SolutionTable:
    """All solutions of a small instance, for exact conditional sampling."""

    def __init__(self, bits):
        self.bits = bits            # (count, n) uint8
        self.count = bits.shape[0]
        self._index = {row.tobytes(): i for i, row in enumerate(bits)}

    @classmethod
    def enumerate(cls, inst, max_free=28, max_solutions=1 << 20):
        free = _free_vars(inst, None)
        if len(free) > max_free:
            raise EnumerationBudgetError(
                f"{len(free)} free variables exceed the enumeration budget of {max_free}")
        rows = []
        total = 0
        for block, sat in _enumeration_blocks(inst, None, free):
            total += int(sat.sum())
            if total > max_solutions:
                raise EnumerationBudgetError(
                    f"solution count exceeds {max_solutions}")
            if sat.any():
                rows.append(block[sat])
        bits = np.concatenate(rows) if rows else np.zeros((0, inst.n), np.uint8)
        return cls(np.ascontiguousarray(bits))

    def index_of(self, assignment):
        return self._index[np.asarray(assignment, dtype=np.uint8).tobytes()]


class BroadcastSampler:
    """Uniform solution sampling on a tree (or forest) formula.

    Converges BP once, then draws each sample top-down: the root from its
    marginal, and for every clause the remaining variables jointly from the
    clause-conditional law given the already-drawn side.
    """

    def __init__(self, inst):
        graph = build_factor_graph(inst)
        if not graph.is_forest():
            raise ValueError("broadcast sampling requires a tree (forest) factor graph")
        self.inst = inst
        self.graph = graph
        n, m, k = graph.n, graph.m, graph.k
        params = BpParams(delta=1e-13, r_max=2 * (n + m) + 20)
        state = BpState(graph)
        _, converged, _ = run_bp(state, graph, PartialAssignment(n), params)
        assert converged, "BP failed to converge on a tree"
        self.state = state
        self.root_p0 = 0.5 * (1.0 + state.h_field)
        th = state.tanh_h
        # BFS over the forest: roots, then per-clause conditional tables
        seen_var = np.zeros(n, dtype=bool)
        seen_cl = np.zeros(m, dtype=bool)
        self.roots = []
        self.plan = []          # (clause, parent_var, child_vars, cum0, cum1)
        ncomb = 1 << (k - 1)
        combos = np.arange(ncomb, dtype=np.uint32)
        combo_bits = np.stack([(combos >> t) & 1 for t in range(k - 1)], axis=1)
        for start in range(n):
            if seen_var[start]:
                continue
            self.roots.append(start)
            seen_var[start] = True
            queue = [start]
            while queue:
                v = queue.pop(0)
                lo, hi = graph.var_ptr[v], graph.var_ptr[v + 1]
                for e in range(lo, hi):
                    c = int(graph.edge_clause[e])
                    if seen_cl[c]:
                        continue
                    seen_cl[c] = True
                    slots = [int(s) for s in graph.var_of[c]]
                    jp = slots.index(v)
                    child_slots = [j for j in range(k) if j != jp]
                    child_vars = np.array([slots[j] for j in child_slots],
                                          dtype=np.int64)
                    # per-child cavity law given this clause removed
                    w = np.ones(ncomb)
                    for t, j in enumerate(child_slots):
                        tmsg = th[c * k + j]
                        z = graph.forb[c, j]
                        p_forb = 0.5 * (1.0 - tmsg)
                        p_bit1 = p_forb if z == 1 else 1.0 - p_forb
                        w *= np.where(combo_bits[:, t] == 1, p_bit1, 1.0 - p_bit1)
                    forb_combo = 0
                    for t, j in enumerate(child_slots):
                        forb_combo |= int(graph.forb[c, j]) << t
                    w_violating = w.copy()
                    w_violating[forb_combo] = 0.0   # parent on its forbidden value
                    zp = int(graph.forb[c, jp])
                    w0, w1 = (w_violating, w) if zp == 0 else (w, w_violating)
                    cum0 = np.cumsum(w0)
                    cum1 = np.cumsum(w1)
                    assert cum0[-1] > 0 and cum1[-1] > 0
                    cum0 /= cum0[-1]
                    cum1 /= cum1[-1]
                    self.plan.append((c, v, child_vars, cum0, cum1))
                    for w_ in child_vars:
                        if not seen_var[w_]:
                            seen_var[w_] = True
                            queue.append(int(w_))
        self._combo_bits = combo_bits.astype(np.uint8)

    def sample(self, rng):
        """One uniformly random solution as a length-n bit vector."""
        x = np.zeros(self.inst.n, dtype=np.uint8)
        for r in self.roots:
            x[r] = 0 if rng.random() < self.root_p0[r] else 1
        for _, parent, child_vars, cum0, cum1 in self.plan:
            cum = cum0 if x[parent] == 0 else cum1
            combo = int(np.searchsorted(cum, rng.random(), side="right"))
            combo = min(combo, len(cum) - 1)
            x[child_vars] = self._combo_bits[combo]
        return x

    def sample_many(self, rng, count):
        """(count, n) array of independent uniform solutions."""
        x = np.zeros((count, self.inst.n), dtype=np.uint8)
        for r in self.roots:
            x[:, r] = rng.random(count) >= self.root_p0[r]
        for _, parent, child_vars, cum0, cum1 in self.plan:
            u = rng.random(count)
            pv = x[:, parent]
            combo = np.empty(count, dtype=np.int64)
            m0 = pv == 0
            combo[m0] = np.searchsorted(cum0, u[m0], side="right")
            combo[~m0] = np.searchsorted(cum1, u[~m0], side="right")
            np.clip(combo, 0, len(cum0) - 1, out=combo)
            x[:, child_vars] = self._combo_bits[combo]
        return x


def broadcast_sample(inst, rng):
    """Draw one uniformly random solution of a tree formula."""
    return BroadcastSampler(inst).sample(rng)
