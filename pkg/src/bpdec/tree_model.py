"""Density evolution for the decimation tree model.

The model tracks pairs of messages along a Poisson(alpha*k)-branching tree
formula: a real BP message ``u`` and a freezing probability ``u_hat`` in
[0, 1].  One level of the distributional recursion turns a sample of
(u, u_hat) pairs into (h, h_hat) pairs (Poisson(alpha*k/2) incoming edges
on each side, a theta-biased coin for "this variable was fixed"), and then
back into (u, u_hat) pairs (k-1 fresh draws through a clause).  The
frozen-fraction curve, its vertical-tangent threshold in alpha, the
large-k closed forms, and the single-instance freeze probability all
derive from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .bp import BpParams, BpState, run_bp
from .instance import Clause, Instance, PartialAssignment, build_factor_graph

_POISSON_TABLES = {}


class PoissonSampler:
    """Exact inversion sampling of Poisson(lam) via a cumulative table."""

    def __init__(self, lam):
        assert 0 <= lam < 30, "inversion table is for means below 30"
        probs = [math.exp(-lam)]
        i = 0
        while probs[-1] > 0 and sum(probs) < 1.0 - 1e-16:
            i += 1
            probs.append(probs[-1] * lam / i)
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        self.cdf = cdf

    def sample(self, rng, size):
        return np.searchsorted(self.cdf, rng.random(size), side="left")


def poisson_sampler(lam):
    key = round(float(lam), 12)
    if key not in _POISSON_TABLES:
        _POISSON_TABLES[key] = PoissonSampler(key)
    return _POISSON_TABLES[key]


@dataclass
class Population:
    """Sample of N (u, u_hat) pairs plus the derived sample of its last step."""

    alpha: float
    k: int
    theta: float
    size: int
    level: int
    u: np.ndarray
    u_hat: np.ndarray
    rng: np.random.Generator
    seed: int | None = None
    tanh_h_sample: np.ndarray | None = None
    h_hat_sample: np.ndarray | None = None
    minus_prod_sample: np.ndarray | None = None
    theta_last: float | None = None

    @classmethod
    def initial(cls, alpha, k, theta, size, seed):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
        return cls(alpha=alpha, k=k, theta=theta, size=size, level=0,
                   u=np.zeros(size), u_hat=np.zeros(size), rng=rng, seed=seed)


@njit(cache=True)
def _de_kernel(u, uh, lp, lm, idx_a, zeta, idx_b, k, inv_norm,
               tanh_h, h_hat, minus_prod, u_out, uh_out):
    n = u.shape[0]
    pos = 0
    for j in range(n):
        s = 0.0
        for _ in range(lp[j]):
            s += u[idx_a[pos]]
            pos += 1
        p = 1.0
        for _ in range(lm[j]):
            t = idx_a[pos]
            pos += 1
            s -= u[t]
            p *= 1.0 - uh[t]
        tanh_h[j] = math.tanh(s)
        minus_prod[j] = p
        h_hat[j] = 1.0 - zeta[j] * p
    pos = 0
    for j in range(n):
        b = inv_norm
        w = 1.0
        for _ in range(k - 1):
            t = idx_b[pos]
            pos += 1
            b *= 1.0 - tanh_h[t]
            w *= 0.5 * (1.0 - tanh_h[t]) * h_hat[t]
        a = 1.0 - b
        if a < 1e-300:
            a = 1e-300
        u_out[j] = -0.5 * math.log(a)
        uh_out[j] = w


def de_step(pop):
    """Advance the population one level; returns the level+1 population.

    Two phases: the full (h, h_hat) sample is materialized from the current
    (u, u_hat) sample, then the new (u, u_hat) sample is drawn from it.
    Index draws are uniform with replacement, fresh for every output element.
    """
    n = pop.size
    rng = pop.rng
    sampler = poisson_sampler(pop.alpha * pop.k / 2.0)
    lp = sampler.sample(rng, n).astype(np.int64)
    lm = sampler.sample(rng, n).astype(np.int64)
    total = int(lp.sum() + lm.sum())
    idx_a = rng.integers(0, n, size=total) if total else np.zeros(0, np.int64)
    zeta = (rng.random(n) >= pop.theta).astype(np.float64)
    idx_b = rng.integers(0, n, size=(pop.k - 1) * n)
    tanh_h = np.empty(n)
    h_hat = np.empty(n)
    minus_prod = np.empty(n)
    u_out = np.empty(n)
    uh_out = np.empty(n)
    _de_kernel(pop.u, pop.u_hat, lp, lm, idx_a, zeta, idx_b,
               pop.k, 2.0 ** (1 - pop.k), tanh_h, h_hat, minus_prod,
               u_out, uh_out)
    assert u_out.min() >= 0.0, "BP-side message went negative"
    assert 0.0 <= uh_out.min() and uh_out.max() <= 1.0, "u_hat left [0, 1]"
    assert 0.0 <= h_hat.min() and h_hat.max() <= 1.0, "h_hat left [0, 1]"
    return Population(alpha=pop.alpha, k=pop.k, theta=pop.theta, size=n,
                      level=pop.level + 1, u=u_out, u_hat=uh_out, rng=rng,
                      seed=pop.seed, tanh_h_sample=tanh_h, h_hat_sample=h_hat,
                      minus_prod_sample=minus_prod, theta_last=pop.theta)


@dataclass
class PhiEstimate:
    """Monte-Carlo estimate of the frozen-root probability at one level."""

    phi: float
    std_err: float
    e_h_hat: float
    level: int
    n_samples: int
    converged: bool | None = None
    phi_mid: float | None = None


def phi_estimate(pop):
    """Estimate from the population's materialized (h, h_hat) sample.

    The fixing coin is integrated out analytically: each element
    contributes (1 - tanh h_j) * (1 - (1-theta) * prod_j), whose mean over
    the coin equals the plain (1 - tanh h_j) * h_hat_j estimator but with
    less variance, and which makes phi *exactly* theta at alpha=0 and
    exactly 0 at theta=0.  The population itself keeps its raw coin draws.
    """
    if pop.tanh_h_sample is None:
        raise ValueError("population has no derived sample yet (level 0)")
    th = pop.theta_last
    h_hat_mean = th + (1.0 - th) * (1.0 - pop.minus_prod_sample)
    g = (1.0 - pop.tanh_h_sample) * h_hat_mean
    phi = float(g.mean())
    se = float(g.std(ddof=1) / math.sqrt(pop.size))
    e_h_hat = float(h_hat_mean.mean())
    return PhiEstimate(phi=phi, std_err=se, e_h_hat=e_h_hat,
                       level=pop.level, n_samples=pop.size)


def phi_tree(alpha, k, theta, pop_size=100_000, levels=300, seed=0):
    """Frozen fraction of the tree model at fixing fraction theta.

    Iterates the recursion ``levels`` times from the all-zero population and
    reports the estimate, its standard error, the companion freezing mean,
    and a stationarity flag comparing the estimate at levels/2.
    """
    if pop_size < 1000:
        raise ValueError("population size must be at least 1000")
    if levels < 1:
        raise ValueError("need at least one level")
    pop = Population.initial(alpha, k, theta, pop_size, seed)
    mid_level = max(1, levels // 2)
    mid = None
    for _ in range(levels):
        pop = de_step(pop)
        if pop.level == mid_level:
            mid = phi_estimate(pop)
    est = phi_estimate(pop)
    est.phi_mid = mid.phi
    est.converged = abs(est.phi - mid.phi) < 3.0 * est.std_err
    return est


def sweep_phi_theta(alpha, k, thetas, pop_size=100_000, seed=0,
                    levels_first=200, levels_step_max=120, block=10,
                    tol_factor=3.0, tol_abs=1e-3):
    """Warm-started upward theta sweep; returns one PhiEstimate per theta.

    The population is carried from each theta to the next (lower-branch
    tracking); after each theta switch the recursion runs in blocks until
    the estimate is stationary or the per-step level cap is reached.
    """
    thetas = list(thetas)
    if any(b <= a for a, b in zip(thetas, thetas[1:])):
        raise ValueError("theta grid must be strictly increasing")
    pop = Population.initial(alpha, k, thetas[0], pop_size, seed)
    out = []
    for pos, theta in enumerate(thetas):
        pop.theta = theta
        budget = levels_first if pos == 0 else levels_step_max
        ran = 0
        warm = min(budget, levels_first if pos == 0 else block)
        for _ in range(warm):
            pop = de_step(pop)
        ran += warm
        prev = phi_estimate(pop)
        while ran + block <= budget:
            for _ in range(block):
                pop = de_step(pop)
            ran += block
            cur = phi_estimate(pop)
            if abs(cur.phi - prev.phi) < max(tol_factor * cur.std_err, tol_abs):
                prev = cur
                break
            prev = cur
        out.append(prev)
    return out


@dataclass
class SpinodalResult:
    alpha_spin: float | None
    theta_star: float | None
    uncertainty: float | None
    metadata: dict

    def to_dict(self):
        return {"alpha_spin": self.alpha_spin, "theta_star": self.theta_star,
                "uncertainty": self.uncertainty, **self.metadata}


def _detect_jump(thetas, phis, jump_floor, slope_factor, slope_window):
    """First grid point whose rise cannot be explained by the local slope."""
    for j in range(1, len(thetas)):
        dth = thetas[j] - thetas[j - 1]
        dphi = phis[j] - phis[j - 1]
        lo = max(1, j - 2 - slope_window)
        hist = [(phis[t] - phis[t - 1]) / (thetas[t] - thetas[t - 1])
                for t in range(lo, max(lo, j - 2))]
        slope = max(np.median(hist) if hist else 1.0, 1.0)
        threshold = max(jump_floor, slope_factor * slope * dth)
        if dphi > threshold:
            return j, threshold
    return None, None


def spinodal_search(alpha_lo, alpha_hi, k, pop_size=100_000, levels=300,
                    theta_grid=None, seed=0, resolution=0.05,
                    jump_floor=0.04, slope_factor=10.0, slope_window=5,
                    levels_step_max=120):
    """Bisect on alpha for the onset of a discontinuity in phi(theta).

    Each alpha is probed with a warm-started upward theta sweep (lower
    branch); a jump larger than max(jump_floor, slope_factor * trailing
    median slope * spacing) flags the discontinuity.  Returns alpha_spin as
    the final bracket midpoint, the jump location theta_star at the
    smallest jumping alpha, and the bracket half-width as uncertainty;
    alpha_spin is None when no jump exists up to alpha_hi.
    """
    if not alpha_lo < alpha_hi:
        raise ValueError("need alpha_lo < alpha_hi")
    if theta_grid is None:
        theta_grid = np.round(np.arange(0.0, 0.7001, 0.01), 10)
    theta_grid = np.asarray(theta_grid, dtype=float)
    scans = []

    def probe(alpha, idx):
        scan_seed = int(np.random.SeedSequence((seed, idx)).generate_state(1)[0])
        ests = sweep_phi_theta(alpha, k, theta_grid, pop_size=pop_size,
                               seed=scan_seed, levels_first=levels,
                               levels_step_max=levels_step_max)
        phis = [e.phi for e in ests]
        j, thr = _detect_jump(theta_grid, phis, jump_floor, slope_factor,
                              slope_window)
        theta_at = float(theta_grid[j]) if j is not None else None
        scans.append({"alpha": alpha, "jump": j is not None,
                      "theta": theta_at, "threshold": thr})
        return j is not None, theta_at

    lo_jump, _ = probe(alpha_lo, 0)
    if lo_jump:
        raise ValueError("alpha_lo already exhibits a jump; widen the bracket down")
    hi_jump, theta_star = probe(alpha_hi, 1)
    meta = {"k": k, "pop_size": pop_size, "levels": levels, "seed": seed,
            "theta_spacing": float(theta_grid[1] - theta_grid[0]),
            "jump_floor": jump_floor, "slope_factor": slope_factor,
            "scans": scans}
    if not hi_jump:
        return SpinodalResult(None, None, None, meta)
    lo, hi = alpha_lo, alpha_hi
    idx = 2
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        jump, theta_at = probe(mid, idx)
        idx += 1
        if jump:
            hi, theta_star = mid, theta_at
        else:
            lo = mid
    meta["bracket"] = [lo, hi]
    return SpinodalResult(0.5 * (lo + hi), theta_star, 0.5 * (hi - lo), meta)


def phi_hat_large_k(theta, alpha, k, tol=1e-13, max_iter=5_000_000):
    """Smallest root of the large-k self-consistency equation.

    Fixed-point iteration of x -> theta + (1-theta)*(1 - exp(-alpha*k*
    x^(k-1)/2^k)) from 0; the map is monotone, so the iteration converges
    to the smallest solution in [0, 1].
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    c = alpha * k / 2.0**k
    x = 0.0
    for _ in range(max_iter):
        x_new = theta + (1.0 - theta) * (1.0 - math.exp(-c * x ** (k - 1)))
        if abs(x_new - x) <= tol:
            return x_new
        x = x_new
    return x


def alpha_spin_hat(k):
    """Closed-form large-k threshold (2^k/k) * ((k-1)/(k-2))^(k-2)."""
    if k < 3:
        raise ValueError("the closed form is degenerate below k = 3")
    return (2.0**k / k) * ((k - 1.0) / (k - 2.0)) ** (k - 2)


def exactness_check(estimate, alpha, k, theta):
    """Residual of the exact stationarity relation between E[h_hat] and phi."""
    rhs = theta + (1.0 - theta) * (
        1.0 - math.exp(-alpha * k * estimate.phi ** (k - 1) / 2.0**k))
    return abs(estimate.e_h_hat - rhs)


def random_tree_instance(alpha, k, depth, seed, max_vars=None, max_tries=200):
    """Poisson(alpha*k)-branching random tree formula of the given depth.

    Every variable up to depth-1 sprouts Poisson(alpha*k) clauses, each
    bringing k-1 fresh variables; forbidden bits are fair coins.  When
    ``max_vars`` is given, oversized draws are rejected and resampled.
    """
    sampler = poisson_sampler(alpha * k)
    for attempt in range(max_tries):
        sub = int(np.random.SeedSequence((seed, attempt)).generate_state(1)[0])
        rng = np.random.Generator(np.random.Philox(key=np.uint64(sub)))
        n = 1
        clauses = []
        frontier = [0]
        too_big = False
        for _ in range(depth):
            nxt = []
            for v in frontier:
                for _ in range(int(sampler.sample(rng, 1)[0])):
                    children = list(range(n, n + k - 1))
                    n += k - 1
                    bits = tuple(int(b) for b in rng.integers(0, 2, size=k))
                    clauses.append(Clause((v, *children), bits))
                    nxt.extend(children)
                    if max_vars is not None and n > max_vars:
                        too_big = True
                        break
                if too_big:
                    break
            if too_big:
                break
            frontier = nxt
        if not too_big:
            return Instance(n=n, k=k, clauses=clauses, seed=sub)
    raise ValueError(f"no tree within max_vars={max_vars} after {max_tries} tries")


def freeze_probability_tree_instance(inst, u_vars, i):
    """Probability that variable i is directly implied when the variables
    in ``u_vars`` are fixed to their values in a uniformly random solution.

    Solves the freezing-message recursion on the tree jointly with the
    converged BP messages and combines the two one-sided implication
    probabilities weighted by the marginal of i.
    """
    graph = build_factor_graph(inst)
    if not graph.is_forest():
        raise ValueError("tree formula required")
    in_u = np.zeros(inst.n, dtype=bool)
    in_u[list(u_vars)] = True
    if in_u[i]:
        raise ValueError("target variable must not be fixed")
    n, m, k = inst.n, inst.m, inst.k
    params = BpParams(delta=1e-13, r_max=2 * (n + m) + 20)
    state = BpState(graph)
    _, converged, _ = run_bp(state, graph, PartialAssignment(n), params)
    assert converged
    if m == 0:
        return 0.0
    th = state.tanh_h.reshape(m, k)
    forb = graph.forb
    vars_flat = graph.var_of.ravel()
    forb_flat = forb.ravel()
    g_half = 0.5 * (1.0 - th)
    hh = np.where(in_u[graph.var_of], 1.0, 0.0)
    uh = np.zeros((m, k))
    for _ in range(10 * (n + m) + 50):
        g = g_half * hh
        pref = np.ones((m, k))
        pref[:, 1:] = np.cumprod(g[:, :-1], axis=1)
        suf = np.ones((m, k))
        suf[:, :-1] = np.cumprod(g[:, ::-1], axis=1)[:, ::-1][:, 1:]
        uh_new = pref * suf
        prod = np.ones((n, 2))
        np.multiply.at(prod, (vars_flat, forb_flat), (1.0 - uh_new).ravel())
        hh_new = np.where(in_u[graph.var_of], 1.0,
                          1.0 - prod[graph.var_of, 1 - forb])
        if (np.abs(uh_new - uh).max() < 1e-14
                and np.abs(hh_new - hh).max() < 1e-14):
            uh, hh = uh_new, hh_new
            break
        uh, hh = uh_new, hh_new
    prod = np.ones((n, 2))
    np.multiply.at(prod, (vars_flat, forb_flat), (1.0 - uh).ravel())
    nu0 = 0.5 * (1.0 + state.h_field[i])
    return float(nu0 * (1.0 - prod[i, 1]) + (1.0 - nu0) * (1.0 - prod[i, 0]))
