"""Warning propagation and unit-clause peeling.

Both compute the direct-implication closure of a partial assignment.
Messages are binary; a warning ``u[c, j] = 1`` means clause ``c`` implies
the variable in slot ``j`` to take its satisfying value ``1 - forb[c, j]``.
Messages only ever flip 0 -> 1, so any update order reaches the same
minimal fixed point.

A variable is *committed* to a value if it is fixed to it or a warning
forces it.  A contradiction means some variable is committed to both
values (this covers two opposing warnings as well as a warning pushing a
fixed variable against its assignment).  Propagation continues past a
contradiction, keeping the fixed point order-independent.
"""

from __future__ import annotations

from collections import deque

import numpy as np

FREE, IMPLIED_0, IMPLIED_1, CONTRADICTED = 0, 1, 2, 3


class WpState:
    """Warning-propagation state; supports incremental fixing."""

    def __init__(self, graph, fixed):
        self.graph = graph
        self.fixed = fixed
        mk = graph.m * graph.k
        self.h_warn = np.zeros(mk, dtype=np.uint8)
        self.u_warn = np.zeros(mk, dtype=np.uint8)
        self.cnt_h = np.zeros(graph.m, dtype=np.int32)
        self.committed = np.zeros((graph.n, 2), dtype=bool)
        self.contradiction = False
        self.implied_order = []
        self.implied_count = 0
        self.flips = 0
        self._pending = deque()

    # -- queries ---------------------------------------------------------

    def is_implied(self, i):
        """True iff variable i (not fixed) is forced by the warnings."""
        return not self.fixed.in_u[i] and bool(self.committed[i].any())

    def implied_value(self, i):
        c0, c1 = self.committed[i]
        if c0 and c1:
            raise ValueError(f"variable {i} is contradicted")
        if c0:
            return 0
        if c1:
            return 1
        raise ValueError(f"variable {i} is not implied")

    def implied_status(self):
        """Per-variable code: FREE / IMPLIED_0 / IMPLIED_1 / CONTRADICTED."""
        both = self.committed.all(axis=1)
        out = np.zeros(self.graph.n, dtype=np.uint8)
        out[both] = CONTRADICTED
        free_mask = ~self.fixed.in_u & ~both
        out[free_mask & self.committed[:, 0]] = IMPLIED_0
        out[free_mask & self.committed[:, 1]] = IMPLIED_1
        return out

    @property
    def frozen_count(self):
        """|W| = fixed plus warning-implied variables."""
        return self.fixed.count + self.implied_count

    def dump_warnings_csv(self, path):
        g = self.graph
        with open(path, "w") as f:
            f.write("clause,slot,variable,forbidden,h_warn,u_warn\n")
            for c in range(g.m):
                for j in range(g.k):
                    e = c * g.k + j
                    f.write(f"{c},{j},{g.var_of[c, j]},{g.forb[c, j]},"
                            f"{self.h_warn[e]},{self.u_warn[e]}\n")

    # -- propagation -----------------------------------------------------

    def _commit(self, v, val, from_warning):
        if self.committed[v, val]:
            return
        self.committed[v, val] = True
        if self.committed[v, 1 - val]:
            self.contradiction = True
        elif from_warning and not self.fixed.in_u[v]:
            self.implied_order.append(int(v))
            self.implied_count += 1
        g = self.graph
        lo, hi = g.var_ptr[v], g.var_ptr[v + 1]
        for e in range(lo, hi):
            idx = g.var_edges[e]
            if g.edge_forb[e] == val and not self.h_warn[idx]:
                self._pending.append(int(idx))

    def _raise_h(self, idx):
        if self.h_warn[idx]:
            return
        self.h_warn[idx] = 1
        self.flips += 1
        g = self.graph
        c = idx // g.k
        base = c * g.k
        self.cnt_h[c] += 1
        if self.cnt_h[c] == g.k - 1:
            for j in range(g.k):
                if not self.h_warn[base + j]:
                    self._fire_u(c, j)
                    break
        elif self.cnt_h[c] == g.k:
            for j in range(g.k):
                self._fire_u(c, j)

    def _fire_u(self, c, j):
        idx = c * self.graph.k + j
        if self.u_warn[idx]:
            return
        self.u_warn[idx] = 1
        self.flips += 1
        v = int(self.graph.var_of[c, j])
        self._commit(v, 1 - int(self.graph.forb[c, j]), from_warning=True)

    def _drain(self, order="lifo", rng=None):
        pending = self._pending
        while pending:
            if order == "lifo":
                idx = pending.pop()
            elif order == "fifo":
                idx = pending.popleft()
            else:
                r = rng.integers(len(pending))
                pending.rotate(-int(r))
                idx = pending.popleft()
            self._raise_h(idx)

    def fix(self, i, order="lifo", rng=None):
        """Propagate the consequences of the (already recorded) fixing of i.

        Returns True iff the closure now contains a contradiction.
        """
        self._commit(i, int(self.fixed.value[i]), from_warning=False)
        self._drain(order=order, rng=rng)
        return self.contradiction


def wp_fixed_point(graph, fixed, order="lifo", rng=None):
    """Run warning propagation to its minimal fixed point.

    Returns (state, contradiction).  ``order`` selects the worklist
    discipline; the fixed point does not depend on it.
    """
    state = WpState(graph, fixed)
    for i in fixed.fixed_indices():
        state._commit(int(i), int(fixed.value[i]), from_warning=False)
    state._drain(order=order, rng=rng)
    return state, state.contradiction


def wp_fixed_point_rounds(graph, fixed):
    """Synchronous-rounds warning propagation (for schedule checks)."""
    m, k, n = graph.m, graph.k, graph.n
    forb = graph.forb
    vars_flat = graph.var_of.ravel()
    forb_flat = forb.ravel()
    fixed_committed = np.zeros((n, 2), dtype=bool)
    fixed_committed[fixed.in_u, fixed.value[fixed.in_u]] = True
    h = np.zeros((m, k), dtype=bool)
    u = np.zeros((m, k), dtype=bool)
    while True:
        s = h.sum(axis=1, keepdims=True)
        u_new = (s - h) == (k - 1)
        imp = np.zeros((n, 2), dtype=bool)
        np.logical_or.at(imp, (vars_flat, 1 - forb_flat), u_new.ravel())
        committed = imp | fixed_committed
        h_new = committed[vars_flat, forb_flat].reshape(m, k)
        if np.array_equal(h_new, h) and np.array_equal(u_new, u):
            break
        h, u = h_new, u_new
    contradiction = bool(committed.all(axis=1).any())
    return u, committed, contradiction


def schedule_invariance_check(graph, fixed, trials, rng):
    """True iff WP reaches the identical fixed point under many schedules."""
    if trials < 2:
        raise ValueError("need at least 2 trials")
    ref, _ = wp_fixed_point(graph, fixed, order="lifo")
    runs = [wp_fixed_point(graph, fixed, order="fifo")[0]]
    for _ in range(trials):
        runs.append(wp_fixed_point(graph, fixed, order="random", rng=rng)[0])
    for st in runs:
        if not (np.array_equal(st.u_warn, ref.u_warn)
                and np.array_equal(st.h_warn, ref.h_warn)
                and np.array_equal(st.committed, ref.committed)
                and st.contradiction == ref.contradiction):
            return False
    u_r, committed_r, contra_r = wp_fixed_point_rounds(graph, fixed)
    return (np.array_equal(u_r.ravel(), ref.u_warn.astype(bool))
            and np.array_equal(committed_r, ref.committed)
            and contra_r == ref.contradiction)


class UcpResult:
    def __init__(self, implied_status, contradiction, peel_order, committed):
        self.implied_status = implied_status
        self.contradiction = contradiction
        self.peel_order = peel_order
        self.committed = committed

    def implied_values(self):
        """Mapping variable -> forced value over the cleanly implied set."""
        out = {}
        for v in np.flatnonzero(self.implied_status == IMPLIED_0):
            out[int(v)] = 0
        for v in np.flatnonzero(self.implied_status == IMPLIED_1):
            out[int(v)] = 1
        return out


def ucp_closure(inst, fixed):
    """Unit-clause peeling: shrink clauses on violating commitments.

    A slot dies when its variable commits to the slot's forbidden value;
    a clause with one live slot left implies that slot's variable.  Clauses
    are not removed on satisfaction: a satisfied clause's implication is a
    no-op commit, which keeps the closure identical to warning propagation
    even past a contradiction.

    Returns (implied dict, contradiction, peel_order) bundled in UcpResult.
    """
    n, m, k = inst.n, inst.m, inst.k
    var_of = inst.var_array()
    forb = inst.forbidden_array()
    edges_of = [[] for _ in range(n)]
    for c in range(m):
        for j in range(k):
            edges_of[var_of[c, j]].append((c, j))
    committed = np.zeros((n, 2), dtype=bool)
    dead = np.zeros(m, dtype=np.int32)
    slot_dead = np.zeros((m, k), dtype=bool)
    fired = np.zeros((m, k), dtype=bool)
    contradiction = False
    peel_order = []
    queue = deque()

    def commit(v, val, by_unit):
        nonlocal contradiction
        if committed[v, val]:
            return
        committed[v, val] = True
        if committed[v, 1 - val]:
            contradiction = True
        elif by_unit and not fixed.in_u[v]:
            peel_order.append(int(v))
        queue.append((v, val))

    for i in fixed.fixed_indices():
        commit(int(i), int(fixed.value[i]), by_unit=False)
    while queue:
        v, val = queue.popleft()
        for c, j in edges_of[v]:
            if forb[c, j] != val or slot_dead[c, j]:
                continue
            slot_dead[c, j] = True
            dead[c] += 1
            if dead[c] == k - 1:
                for j2 in range(k):
                    if not slot_dead[c, j2] and not fired[c, j2]:
                        fired[c, j2] = True
                        commit(int(var_of[c, j2]), 1 - int(forb[c, j2]), by_unit=True)
            elif dead[c] == k:
                for j2 in range(k):
                    if not fired[c, j2]:
                        fired[c, j2] = True
                        commit(int(var_of[c, j2]), 1 - int(forb[c, j2]), by_unit=True)

    both = committed.all(axis=1)
    status = np.zeros(n, dtype=np.uint8)
    status[both] = CONTRADICTED
    free_mask = ~fixed.in_u & ~both
    status[free_mask & committed[:, 0]] = IMPLIED_0
    status[free_mask & committed[:, 1]] = IMPLIED_1
    return UcpResult(status, contradiction, peel_order, committed)


def wp_closure_batch(graph, in_u, values):
    """Direct-implication closure of many partial assignments at once.

    ``in_u`` is the shared fixed set (n,) and ``values`` an (R, n) array of
    assignments (only the U columns are read).  Synchronous rounds over all
    R closures simultaneously.  Returns (implied (R, n) bool,
    contradiction (R,) bool).
    """
    m, k, n = graph.m, graph.k, graph.n
    r_count = values.shape[0]
    vars_flat = graph.var_of.ravel()
    forb_flat = graph.forb.ravel().astype(np.int64)
    fixed0 = in_u[None, :] & (values == 0)
    fixed1 = in_u[None, :] & (values == 1)
    h = np.zeros((r_count, m, k), dtype=bool)
    u = np.zeros((r_count, m, k), dtype=bool)
    # edge groups keyed by (variable, implied value), for OR-reduceat
    keys = vars_flat * 2 + (1 - forb_flat)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    starts = np.flatnonzero(np.r_[True, sorted_keys[1:] != sorted_keys[:-1]])
    group_key = sorted_keys[starts]
    imp0 = np.zeros((r_count, n), dtype=bool)
    imp1 = np.zeros((r_count, n), dtype=bool)
    while True:
        s = h.sum(axis=2, keepdims=True)
        u_new = (s - h) == (k - 1)
        flat = u_new.reshape(r_count, m * k)[:, order]
        grouped = np.logical_or.reduceat(flat, starts, axis=1)
        imp0[:] = False
        imp1[:] = False
        sel0 = group_key % 2 == 0
        imp0[:, group_key[sel0] // 2] = grouped[:, sel0]
        imp1[:, group_key[~sel0] // 2] = grouped[:, ~sel0]
        committed0 = imp0 | fixed0
        committed1 = imp1 | fixed1
        pressure = np.where(forb_flat[None, :] == 0,
                            committed0[:, vars_flat], committed1[:, vars_flat])
        h_new = pressure.reshape(r_count, m, k)
        if np.array_equal(h_new, h):
            break
        h = h_new
        u = u_new
    implied = (imp0 | imp1) & ~in_u[None, :]
    contradiction = (committed0 & committed1).any(axis=1)
    return implied, contradiction
