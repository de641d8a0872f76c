"""Command-line interface.

Subcommands: gen, solve, phi-curve, success-prob, halting-time,
density-evolution, spinodal, selftest.  Exit codes: 0 success,
10 decimation FAIL (solve), 2 usage error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__, experiments
from .bp import BpParams, brute_force_marginals, run_bp, BpState, marginal
from .decimation import DecimationParams, decimate
from .instance import (PartialAssignment, build_factor_graph, check_assignment,
                       emit_dimacs, emit_metadata, generate_random_ksat,
                       parse_dimacs)
from .tree_model import alpha_spin_hat
from .wp import schedule_invariance_check, ucp_closure, wp_fixed_point

EXIT_OK = 0
EXIT_FAIL = 10


def _parse_grid(text):
    """'a:b:step' or comma-separated values as a float list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError("grid must be start:stop:step or a,b,c")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise argparse.ArgumentTypeError("grid step must be positive")
        return list(np.round(np.arange(start, stop + 0.5 * step, step), 10))
    return [float(p) for p in text.split(",") if p]


def _parse_int_list(text):
    return [int(p) for p in text.split(",") if p]


def _add_bp_flags(p):
    p.add_argument("--delta", type=float, default=1e-10)
    p.add_argument("--rmax", type=int, default=200)
    p.add_argument("--epsilon", type=float, default=1e-4)


def _bp_params(args):
    return BpParams(delta=args.delta, r_max=args.rmax, epsilon=args.epsilon)


def _write_out(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w") as f:
            f.write(text)
    except OSError as exc:
        raise SystemExit(f"cannot write {path}: {exc}") from exc


def build_parser():
    ap = argparse.ArgumentParser(prog="bpdec",
                                 description="BP-guided decimation for random k-SAT")
    ap.add_argument("--version", action="version", version=f"bpdec {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a random instance as DIMACS")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")

    p = sub.add_parser("solve", help="decimate a DIMACS instance")
    p.add_argument("path", help="DIMACS file or - for stdin")
    p.add_argument("--seed", type=int, default=0)
    _add_bp_flags(p)
    p.add_argument("--trace-out", default=None, help="write the step trace CSV here")
    p.add_argument("--dump-messages", default=None,
                   help="debug: dump final BP messages CSV here")

    p = sub.add_parser("phi-curve", help="frozen-fraction curve vs tree model")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pop-size", type=int, default=100_000)
    p.add_argument("--levels", type=int, default=300)
    p.add_argument("--theta-grid", type=_parse_grid, default=None)
    _add_bp_flags(p)
    p.add_argument("--out", default="-")

    p = sub.add_parser("success-prob", help="success probability over an alpha grid")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--n", type=_parse_int_list, default=[500, 1000, 2000])
    p.add_argument("--alpha", type=_parse_grid, required=True)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    _add_bp_flags(p)
    p.add_argument("--out", default="-")

    p = sub.add_parser("halting-time", help="t*/n statistics over failed runs")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--alpha", type=_parse_grid, required=True)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    _add_bp_flags(p)
    p.add_argument("--out", default="-")

    p = sub.add_parser("density-evolution", help="tree-model phi(theta) table")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--theta-grid", type=_parse_grid,
                   default=[0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    p.add_argument("--pop-size", type=int, default=100_000)
    p.add_argument("--levels", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")

    p = sub.add_parser("spinodal", help="bisect for the vertical-tangent threshold")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--alpha-lo", type=float, default=7.5)
    p.add_argument("--alpha-hi", type=float, default=8.5)
    p.add_argument("--pop-size", type=int, default=100_000)
    p.add_argument("--levels", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--theta-grid", type=_parse_grid, default=None)
    p.add_argument("--resolution", type=float, default=0.05)
    p.add_argument("--out", default="-")

    p = sub.add_parser("selftest", help="fast built-in consistency checks")
    return ap


def _cmd_gen(args):
    if (args.m is None) == (args.alpha is None):
        raise SystemExit("gen: give exactly one of --m or --alpha")
    m = args.m if args.m is not None else int(round(args.alpha * args.n))
    inst = generate_random_ksat(args.n, m, args.k, args.seed)
    _write_out(args.out, emit_dimacs(inst))
    if args.out not in (None, "-"):
        _write_out(args.out + ".meta", emit_metadata(inst))
    return EXIT_OK


def _cmd_solve(args):
    try:
        if args.path == "-":
            text = sys.stdin.read()
        else:
            with open(args.path) as f:
                text = f.read()
    except OSError as exc:
        raise SystemExit(f"cannot read {args.path}: {exc}") from exc
    inst = parse_dimacs(text)
    params = DecimationParams(bp=_bp_params(args), seed=args.seed)
    trace = decimate(inst, params)
    if args.trace_out:
        with open(args.trace_out, "w") as f:
            trace.to_csv(f)
    if trace.succeeded:
        lits = " ".join(str(i + 1) if v else str(-(i + 1))
                        for i, v in enumerate(trace.assignment))
        print("s SATISFIABLE")
        print(f"v {lits} 0")
        return EXIT_OK
    print("s UNKNOWN")
    print(f"c contradiction after fixing {trace.t_star} of {inst.n} variables")
    return EXIT_FAIL


def _cmd_phi_curve(args):
    csv_text, _ = experiments.phi_curve(
        args.k, args.n, args.alpha, args.runs, args.seed,
        bp_params=_bp_params(args), pop_size=args.pop_size,
        levels=args.levels, theta_grid=args.theta_grid)
    _write_out(args.out, csv_text)
    return EXIT_OK


def _cmd_success_prob(args):
    csv_text, _ = experiments.success_prob(
        args.k, args.n, args.alpha, args.runs, args.seed,
        bp_params=_bp_params(args))
    _write_out(args.out, csv_text)
    return EXIT_OK


def _cmd_halting_time(args):
    csv_text, _ = experiments.halting_time(
        args.k, args.n, args.alpha, args.runs, args.seed,
        bp_params=_bp_params(args))
    _write_out(args.out, csv_text)
    return EXIT_OK


def _cmd_density_evolution(args):
    csv_text, _ = experiments.density_evolution(
        args.k, args.alpha, args.theta_grid, pop_size=args.pop_size,
        levels=args.levels, seed=args.seed)
    _write_out(args.out, csv_text)
    return EXIT_OK


def _cmd_spinodal(args):
    json_text, _ = experiments.spinodal(
        args.k, args.alpha_lo, args.alpha_hi, pop_size=args.pop_size,
        levels=args.levels, seed=args.seed, theta_grid=args.theta_grid,
        resolution=args.resolution)
    _write_out(args.out, json_text)
    return EXIT_OK


def _cmd_selftest(args):
    import numpy.testing as npt
    from .bp import clause_fn_tanh
    failures = 0

    def check(name, fn):
        nonlocal failures
        try:
            fn()
            print(f"selftest: {name}: PASS")
        except Exception as exc:  # noqa: BLE001 - report and count
            failures += 1
            print(f"selftest: {name}: FAIL ({exc})")

    def _clause_fn():
        npt.assert_allclose(clause_fn_tanh([0.0, 0.0]), 1.0 / 7.0, rtol=1e-15)
        assert clause_fn_tanh([1.0, -0.3]) == 0.0

    def _closed_form():
        assert alpha_spin_hat(4) == 9.0

    def _roundtrip():
        inst = generate_random_ksat(30, 60, 3, seed=5)
        assert parse_dimacs(emit_dimacs(inst)).clauses == inst.clauses

    def _wp_ucp():
        rng = np.random.default_rng(1)
        for trial in range(5):
            inst = generate_random_ksat(40, 160, 3, seed=trial)
            graph = build_factor_graph(inst)
            fixed = PartialAssignment(inst.n)
            for i in rng.choice(inst.n, size=12, replace=False):
                fixed.fix(int(i), int(rng.integers(2)))
            wp, contra = wp_fixed_point(graph, fixed)
            ucp = ucp_closure(inst, fixed)
            assert contra == ucp.contradiction
            assert (wp.implied_status() == ucp.implied_status).all()
            assert schedule_invariance_check(graph, fixed, 3, rng)

    def _tree_exact():
        from .tree_model import random_tree_instance
        inst = random_tree_instance(0.5, 3, 3, seed=11, max_vars=20)
        graph = build_factor_graph(inst)
        fixed = PartialAssignment(inst.n)
        state = BpState(graph)
        _, conv, _ = run_bp(state, graph, fixed, BpParams())
        assert conv
        marg, count = brute_force_marginals(inst)
        assert count > 0
        for i in range(inst.n):
            nu0, _ = marginal(state, graph, fixed, i)
            assert abs(nu0 - marg[i, 0]) < 1e-9

    def _solve_small():
        inst = generate_random_ksat(50, 100, 3, seed=3)
        trace = decimate(inst, DecimationParams(seed=1))
        assert trace.succeeded
        assert check_assignment(inst, trace.assignment)[0]

    check("clause-function", _clause_fn)
    check("closed-form-threshold", _closed_form)
    check("dimacs-roundtrip", _roundtrip)
    check("wp-equals-ucp", _wp_ucp)
    check("tree-exactness", _tree_exact)
    check("solve-small", _solve_small)
    print(f"selftest: {'OK' if failures == 0 else 'FAILED'}")
    return EXIT_OK if failures == 0 else 1


_HANDLERS = {
    "gen": _cmd_gen,
    "solve": _cmd_solve,
    "phi-curve": _cmd_phi_curve,
    "success-prob": _cmd_success_prob,
    "halting-time": _cmd_halting_time,
    "density-evolution": _cmd_density_evolution,
    "spinodal": _cmd_spinodal,
    "selftest": _cmd_selftest,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    return _HANDLERS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
