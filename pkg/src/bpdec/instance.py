"""Random k-SAT instances, DIMACS exchange, and factor-graph indexing.

A clause forbids exactly one assignment of its k variables: clause ``a``
with variables ``(i_1,...,i_k)`` and forbidden bits ``(z_1,...,z_k)`` is
satisfied by ``x`` iff ``(x_{i_1},...,x_{i_k}) != (z_1,...,z_k)``.
DIMACS literal ``+i`` maps to forbidden bit 0 (clause satisfied by x_i=1)
and ``-i`` to forbidden bit 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GENERATOR_ID = "philox4x64-fisheryates-v1"


class DimacsError(ValueError):
    """Malformed or unsupported DIMACS input."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class Clause:
    """One k-SAT constraint: ``vars`` distinct indices, ``forbidden`` bits."""

    vars: tuple
    forbidden: tuple

    def __post_init__(self):
        if len(self.vars) != len(self.forbidden):
            raise ValueError("vars and forbidden must have equal length")
        if len(set(self.vars)) != len(self.vars):
            raise ValueError("clause variables must be distinct")
        if any(b not in (0, 1) for b in self.forbidden):
            raise ValueError("forbidden entries must be bits")


@dataclass(eq=False)
class Instance:
    """A k-SAT formula over ``n`` variables with uniform clause width ``k``."""

    n: int
    k: int
    clauses: list
    seed: int | None = None
    _var_arr: np.ndarray | None = field(default=None, repr=False)
    _forb_arr: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("clause width k must be >= 2")
        if self.n < 0:
            raise ValueError("variable count must be non-negative")
        for c in self.clauses:
            if len(c.vars) != self.k:
                raise ValueError("all clauses must have width k")
            if any(not (0 <= v < self.n) for v in c.vars):
                raise ValueError("clause references variable out of range")

    @property
    def m(self):
        return len(self.clauses)

    @property
    def alpha(self):
        return self.m / self.n if self.n else 0.0

    def var_array(self):
        """Clause-variable indices as an (m, k) int32 array."""
        if self._var_arr is None:
            arr = np.array([c.vars for c in self.clauses], dtype=np.int32)
            self._var_arr = arr.reshape(self.m, self.k)
        return self._var_arr

    def forbidden_array(self):
        """Forbidden bits as an (m, k) uint8 array."""
        if self._forb_arr is None:
            arr = np.array([c.forbidden for c in self.clauses], dtype=np.uint8)
            self._forb_arr = arr.reshape(self.m, self.k)
        return self._forb_arr

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (self.n, self.k, self.clauses, self.seed) == (
            other.n, other.k, other.clauses, other.seed)


def generate_random_ksat(n, m, k, seed):
    """Draw ``m`` clauses uniformly: a k-subset of variables plus k fair bits.

    The variable subset of each clause is sampled without replacement via a
    partial Fisher-Yates shuffle driven by a Philox counter-based generator,
    so identical ``(n, m, k, seed)`` reproduces the instance bit for bit.
    Repeated clauses across the formula are allowed.
    """
    if k < 2:
        raise ValueError("clause width k must be >= 2")
    if n < k:
        raise ValueError("need n >= k to sample k distinct variables")
    if m < 0:
        raise ValueError("clause count must be non-negative")
    if m * k > 2**40:
        raise ValueError("instance too large: edge count overflows the build budget")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    clauses = []
    if m:
        # column j of swaps: uniform target in [j, n) for every clause
        swaps = np.empty((m, k), dtype=np.int64)
        for j in range(k):
            swaps[:, j] = rng.integers(j, n, size=m)
        bits = rng.integers(0, 2, size=(m, k), dtype=np.uint8)
        pool = np.arange(n, dtype=np.int64)
        for c in range(m):
            row = swaps[c]
            for j in range(k):
                pool[j], pool[row[j]] = pool[row[j]], pool[j]
            clauses.append(Clause(tuple(int(v) for v in pool[:k]),
                                  tuple(int(b) for b in bits[c])))
            for j in range(k - 1, -1, -1):
                pool[j], pool[row[j]] = pool[row[j]], pool[j]
    return Instance(n=n, k=k, clauses=clauses, seed=seed)


class PartialAssignment:
    """Fixed variables (the set U) and their values.

    Mutable but append-only: variables can be fixed once and never unfixed.
    ``version`` increments on every fix so caches can invalidate cheaply.
    """

    def __init__(self, n):
        self.n = n
        self.in_u = np.zeros(n, dtype=bool)
        self.value = np.zeros(n, dtype=np.uint8)
        self.code = np.full(n, -1, dtype=np.int8)  # -1 free, else the value
        self.count = 0
        self.version = 0

    @classmethod
    def from_dict(cls, n, values):
        pa = cls(n)
        for i, v in values.items():
            pa.fix(i, v)
        return pa

    def fix(self, i, value):
        if value not in (0, 1):
            raise ValueError("assignment value must be a bit")
        if self.in_u[i]:
            raise ValueError(f"variable {i} is already fixed")
        self.in_u[i] = True
        self.value[i] = value
        self.code[i] = value
        self.count += 1
        self.version += 1

    def is_fixed(self, i):
        return bool(self.in_u[i])

    def value_of(self, i):
        if not self.in_u[i]:
            raise ValueError(f"variable {i} is not fixed")
        return int(self.value[i])

    def fixed_indices(self):
        return np.flatnonzero(self.in_u)

    def copy(self):
        pa = PartialAssignment(self.n)
        pa.in_u[:] = self.in_u
        pa.value[:] = self.value
        pa.code[:] = self.code
        pa.count = self.count
        pa.version = self.version
        return pa


class FactorGraph:
    """Indexed adjacency of an Instance.

    Edge ``(c, j)`` connects clause ``c`` to the variable in its slot ``j``
    and carries the forbidden bit ``forb[c, j]``.  For a variable ``i`` the
    clause set splits into the clauses satisfied by x_i = 0 (forbidden bit 1)
    and those satisfied by x_i = 1 (forbidden bit 0); ``sign`` is +1 on the
    former and -1 on the latter.
    """

    def __init__(self, inst):
        self.instance = inst
        self.n = inst.n
        self.k = inst.k
        self.m = inst.m
        self.var_of = np.ascontiguousarray(inst.var_array())
        self.forb = np.ascontiguousarray(inst.forbidden_array())
        self.sign = np.where(self.forb == 1, 1.0, -1.0)
        flat = self.var_of.ravel()
        order = np.argsort(flat, kind="stable").astype(np.int64)
        ptr = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(ptr, flat + 1, 1)
        self.var_ptr = np.cumsum(ptr)
        self.var_edges = order            # flat edge ids (c*k + j), grouped by variable
        self.edge_forb = self.forb.ravel()[order]
        self.edge_clause = (order // self.k).astype(np.int64)

    @property
    def directed_edge_count(self):
        return 2 * self.m * self.k

    def degree(self, i):
        return int(self.var_ptr[i + 1] - self.var_ptr[i])

    def clauses_of(self, i):
        """Clause indices adjacent to variable ``i`` (slot order of discovery)."""
        lo, hi = self.var_ptr[i], self.var_ptr[i + 1]
        return [int(c) for c in self.edge_clause[lo:hi]]

    def forbidden_value(self, i, a):
        """z(i, a): the value of x_i in clause a's forbidden assignment."""
        lo, hi = self.var_ptr[i], self.var_ptr[i + 1]
        for e in range(lo, hi):
            if self.edge_clause[e] == a:
                return int(self.edge_forb[e])
        raise ValueError(f"variable {i} does not appear in clause {a}")

    def pos_clauses(self, i):
        """Clauses satisfied by x_i = 0 (forbidden bit 1)."""
        lo, hi = self.var_ptr[i], self.var_ptr[i + 1]
        sel = self.edge_forb[lo:hi] == 1
        return [int(c) for c in self.edge_clause[lo:hi][sel]]

    def neg_clauses(self, i):
        """Clauses satisfied by x_i = 1 (forbidden bit 0)."""
        lo, hi = self.var_ptr[i], self.var_ptr[i + 1]
        sel = self.edge_forb[lo:hi] == 0
        return [int(c) for c in self.edge_clause[lo:hi][sel]]

    def agreeing_clauses(self, i, a):
        """Clauses b != a that agree with a on the value satisfying x_i."""
        z = self.forbidden_value(i, a)
        lo, hi = self.var_ptr[i], self.var_ptr[i + 1]
        return [int(c) for e in range(lo, hi)
                if (c := self.edge_clause[e]) != a and self.edge_forb[e] == z]

    def disagreeing_clauses(self, i, a):
        """Clauses that disagree with a on the value satisfying x_i."""
        z = self.forbidden_value(i, a)
        lo, hi = self.var_ptr[i], self.var_ptr[i + 1]
        return [int(c) for e in range(lo, hi)
                if (c := self.edge_clause[e]) != a and self.edge_forb[e] != z]

    def is_forest(self):
        """True iff the bipartite factor graph contains no cycle."""
        parent = list(range(self.n + self.m))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for c in range(self.m):
            cnode = self.n + c
            for j in range(self.k):
                a, b = find(int(self.var_of[c, j])), find(cnode)
                if a == b:
                    return False
                parent[a] = b
        return True


def build_factor_graph(inst):
    """Materialize adjacency and the per-edge sign/forbidden-bit indexing."""
    return FactorGraph(inst)


def check_assignment(inst, x):
    """Return (satisfied, first violated clause index or None)."""
    x = np.asarray(x, dtype=np.uint8)
    if x.shape != (inst.n,):
        raise ValueError(f"assignment must have length {inst.n}")
    if inst.m == 0:
        return True, None
    hit = np.all(x[inst.var_array()] == inst.forbidden_array(), axis=1)
    idx = int(np.argmax(hit))
    if hit[idx]:
        return False, idx
    return True, None


def parse_dimacs(text):
    """Parse DIMACS CNF with uniform clause width into an Instance."""
    if isinstance(text, bytes):
        text = text.decode("ascii")
    n = m = None
    k = None
    clauses = []
    pending_vars, pending_forb = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        if line.startswith("p"):
            if n is not None:
                raise DimacsError("duplicate problem line", lineno)
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise DimacsError("problem line must be 'p cnf <vars> <clauses>'", lineno)
            try:
                n, m = int(parts[2]), int(parts[3])
            except ValueError:
                raise DimacsError("non-integer counts in problem line", lineno) from None
            if n < 0 or m < 0:
                raise DimacsError("negative counts in problem line", lineno)
            continue
        if n is None:
            raise DimacsError("clause data before problem line", lineno)
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise DimacsError(f"bad token {tok!r}", lineno) from None
            if lit == 0:
                if k is None:
                    k = len(pending_vars)
                    if k < 2:
                        raise DimacsError("clauses of width < 2 are unsupported", lineno)
                elif len(pending_vars) != k:
                    raise DimacsError(
                        f"non-uniform clause width ({len(pending_vars)} vs {k})", lineno)
                if len(set(pending_vars)) != len(pending_vars):
                    raise DimacsError("repeated variable inside a clause", lineno)
                clauses.append(Clause(tuple(pending_vars), tuple(pending_forb)))
                pending_vars, pending_forb = [], []
            else:
                v = abs(lit) - 1
                if v >= n:
                    raise DimacsError(f"literal {lit} exceeds declared variable count", lineno)
                pending_vars.append(v)
                pending_forb.append(0 if lit > 0 else 1)
    if pending_vars:
        raise DimacsError("unterminated clause at end of input")
    if n is None:
        raise DimacsError("missing problem line")
    if len(clauses) != m:
        raise DimacsError(f"declared {m} clauses but found {len(clauses)}")
    if k is None:
        k = 2 if m == 0 else k  # width is unconstrained for empty formulas
    return Instance(n=n, k=k, clauses=clauses, seed=None)


def emit_dimacs(inst):
    """Serialize an Instance as DIMACS CNF (clauses and literals in stored order)."""
    out = [f"p cnf {inst.n} {inst.m}"]
    for c in inst.clauses:
        lits = [str(v + 1) if z == 0 else str(-(v + 1))
                for v, z in zip(c.vars, c.forbidden)]
        out.append(" ".join(lits) + " 0")
    return "\n".join(out) + "\n"


def emit_metadata(inst, extra=None):
    """Flat key=value sidecar describing how an instance was generated."""
    pairs = {
        "format": "bpdec-meta-v1",
        "generator": GENERATOR_ID,
        "n": inst.n,
        "m": inst.m,
        "k": inst.k,
    }
    if inst.seed is not None:
        pairs["seed"] = inst.seed
    if extra:
        pairs.update(extra)
    return "".join(f"{k}={v}\n" for k, v in pairs.items())
