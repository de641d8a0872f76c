"""Experiment orchestration: seeded sweeps over instances with CSV/JSON output.

Every output embeds the full configuration and the per-run seed derivation
(SeedSequence spawn keys off the base seed), and contains nothing
time- or host-dependent, so re-running a config reproduces the bytes.
"""

from __future__ import annotations

import io
import json
import math

import numpy as np

from . import __version__
from .bp import BpParams
from .decimation import DecimationParams, decimate
from .instance import build_factor_graph, generate_random_ksat
from .tree_model import (exactness_check, phi_tree, spinodal_search,
                         sweep_phi_theta)

SEED_RULE = "seedsequence-spawnkey-v1"


def derive_seed(base, *key):
    """Collision-free 64-bit sub-seed for (base, key...)."""
    ss = np.random.SeedSequence((int(base),) + tuple(int(x) for x in key))
    return int(ss.generate_state(1, np.uint64)[0])


def wilson_interval(successes, trials, z=1.959963984540054):
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("need at least one trial")
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    return max(0.0, center - half), min(1.0, center + half)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(fileobj, header, rows, meta):
    fileobj.write(f"# bpdec-version={__version__}\n")
    fileobj.write(f"# seed-derivation={SEED_RULE}\n")
    for key in sorted(meta):
        fileobj.write(f"# {key}={_fmt(meta[key])}\n")
    fileobj.write(",".join(header) + "\n")
    for row in rows:
        fileobj.write(",".join(_fmt(v) for v in row) + "\n")


def render_csv(header, rows, meta):
    buf = io.StringIO()
    write_csv(buf, header, rows, meta)
    return buf.getvalue()


def render_json(payload):
    return json.dumps({"bpdec_version": __version__,
                       "seed_derivation": SEED_RULE, **payload},
                      sort_keys=True, indent=1) + "\n"


def _decimation_run(n, alpha, k, base_seed, run_idx, bp_params, record_trace=True):
    m = int(round(alpha * n))
    inst = generate_random_ksat(n, m, k, derive_seed(base_seed, 0, run_idx))
    params = DecimationParams(bp=bp_params, seed=derive_seed(base_seed, 1, run_idx),
                              record_trace=record_trace)
    return inst, decimate(inst, params)


def phi_curve(k, n, alpha, runs, seed, bp_params=None, pop_size=100_000,
              levels=300, theta_grid=None):
    """Empirical frozen-fraction curves vs the tree-model curve.

    Returns (csv_text, info).  One decimation per run; the tree curve is
    evaluated on the same theta grid with a warm-started sweep.
    """
    bp_params = bp_params or BpParams()
    if theta_grid is None:
        theta_grid = np.round(np.arange(0.0, 1.0001, 0.02), 10)
    theta_grid = np.asarray(theta_grid, dtype=float)
    emp = []
    outcomes = []
    for r in range(runs):
        _, trace = _decimation_run(n, alpha, k, seed, r, bp_params)
        col = []
        for th in theta_grid:
            t = int(round(th * n))
            if t == 0:
                col.append(0.0)
            elif t <= len(trace.frozen_counts):
                col.append(trace.frozen_counts[t - 1] / n)
            else:
                col.append(None)
        emp.append(col)
        outcomes.append({"run": r, "status": trace.status, "t_star": trace.t_star,
                         "total_bp_sweeps": trace.total_sweeps})
    tree_seed = derive_seed(seed, 2)
    tree = sweep_phi_theta(alpha, k, theta_grid, pop_size=pop_size,
                           seed=tree_seed, levels_first=levels)
    rows = []
    sup_dist = [0.0] * runs
    for gi, th in enumerate(theta_grid):
        vals = [emp[r][gi] for r in range(runs)]
        present = [v for v in vals if v is not None]
        mean_emp = sum(present) / len(present) if present else None
        rows.append([float(th), tree[gi].phi, tree[gi].std_err, mean_emp] + vals)
        for r in range(runs):
            if vals[r] is not None:
                sup_dist[r] = max(sup_dist[r], abs(vals[r] - tree[gi].phi))
    header = (["theta", "tree_phi", "tree_std_err", "mean_empirical"]
              + [f"run_{r}" for r in range(runs)])
    meta = {"kind": "phi-curve", "k": k, "n": n, "alpha": alpha, "runs": runs,
            "base_seed": seed, "pop_size": pop_size, "levels": levels,
            "delta": bp_params.delta, "r_max": bp_params.r_max,
            "epsilon": bp_params.epsilon,
            "outcomes": json.dumps(outcomes, sort_keys=True),
            "sup_distance": json.dumps([round(s, 12) for s in sup_dist])}
    info = {"outcomes": outcomes, "sup_distance": sup_dist,
            "tree": tree, "theta_grid": theta_grid}
    return render_csv(header, rows, meta), info


def success_prob(k, n_list, alphas, runs, seed, bp_params=None):
    """Success fraction with Wilson intervals per (alpha, n) grid point."""
    bp_params = bp_params or BpParams()
    rows = []
    results = {}
    for ai, alpha in enumerate(alphas):
        for ni, n in enumerate(n_list):
            point_seed = derive_seed(seed, ai, ni)
            succ = 0
            for r in range(runs):
                _, trace = _decimation_run(n, alpha, k, point_seed, r, bp_params,
                                           record_trace=False)
                succ += trace.succeeded
            lo, hi = wilson_interval(succ, runs)
            rows.append([alpha, n, runs, succ, succ / runs, lo, hi])
            results[(alpha, n)] = succ
    header = ["alpha", "n", "runs", "successes", "success_fraction",
              "wilson_low", "wilson_high"]
    meta = {"kind": "success-prob", "k": k, "n_list": ",".join(map(str, n_list)),
            "alphas": ",".join(repr(a) for a in alphas), "runs": runs,
            "base_seed": seed, "delta": bp_params.delta,
            "r_max": bp_params.r_max, "epsilon": bp_params.epsilon}
    return render_csv(header, rows, meta), results


def halting_time(k, n, alphas, runs, seed, bp_params=None):
    """Mean and std of t*/n over unsuccessful runs per alpha."""
    bp_params = bp_params or BpParams()
    rows = []
    results = {}
    for ai, alpha in enumerate(alphas):
        point_seed = derive_seed(seed, ai)
        fracs = []
        for r in range(runs):
            _, trace = _decimation_run(n, alpha, k, point_seed, r, bp_params,
                                       record_trace=False)
            if not trace.succeeded:
                fracs.append(trace.t_star / n)
        if fracs:
            mean = float(np.mean(fracs))
            std = float(np.std(fracs, ddof=1)) if len(fracs) > 1 else 0.0
            rows.append([alpha, n, runs, len(fracs), mean, std])
        else:
            rows.append([alpha, n, runs, 0, None, None])
        results[alpha] = fracs
    header = ["alpha", "n", "runs", "failed_runs", "mean_halt_fraction",
              "std_halt_fraction"]
    meta = {"kind": "halting-time", "k": k, "n": n,
            "alphas": ",".join(repr(a) for a in alphas), "runs": runs,
            "base_seed": seed, "delta": bp_params.delta,
            "r_max": bp_params.r_max, "epsilon": bp_params.epsilon}
    return render_csv(header, rows, meta), results


def density_evolution(k, alpha, theta_grid, pop_size=100_000, levels=300, seed=0):
    """Tree-model phi with self-consistency residual, one row per theta."""
    rows = []
    ests = []
    for ti, theta in enumerate(theta_grid):
        est = phi_tree(alpha, k, theta, pop_size=pop_size, levels=levels,
                       seed=derive_seed(seed, ti))
        res = exactness_check(est, alpha, k, theta)
        rows.append([float(theta), est.phi, est.std_err, est.e_h_hat, res,
                     est.level, est.n_samples, int(bool(est.converged))])
        ests.append(est)
    header = ["theta", "phi", "std_err", "e_h_hat", "residual", "levels", "N",
              "converged"]
    meta = {"kind": "density-evolution", "k": k, "alpha": alpha,
            "pop_size": pop_size, "levels": levels, "base_seed": seed}
    return render_csv(header, rows, meta), ests


def spinodal(k, alpha_lo, alpha_hi, pop_size=100_000, levels=300, seed=0,
             theta_grid=None, resolution=0.05):
    """JSON spinodal report from the bisection search."""
    result = spinodal_search(alpha_lo, alpha_hi, k, pop_size=pop_size,
                             levels=levels, theta_grid=theta_grid, seed=seed,
                             resolution=resolution)
    payload = {"kind": "spinodal", "k": k, "alpha_lo": alpha_lo,
               "alpha_hi": alpha_hi, "resolution": resolution,
               **result.to_dict()}
    return render_json(payload), result
