"""BP-guided decimation for random k-SAT with a tree-model analysis suite."""

__version__ = "0.1.0"

from .instance import (Clause, DimacsError, FactorGraph, Instance,
                       PartialAssignment, build_factor_graph,
                       check_assignment, emit_dimacs, emit_metadata,
                       generate_random_ksat, parse_dimacs)
from .bp import (BpParams, BpState, BroadcastSampler, EnumerationBudgetError,
                 SolutionTable, bp_sweep, broadcast_sample,
                 brute_force_marginals, clause_fn_tanh, marginal, run_bp)
from .wp import (WpState, schedule_invariance_check, ucp_closure,
                 wp_closure_batch, wp_fixed_point)
from .decimation import (DecimationParams, DecimationTrace, decimate,
                         frozen_fraction_curve, idealized_uniformity_test)
from .tree_model import (PhiEstimate, Population, alpha_spin_hat, de_step,
                         exactness_check, freeze_probability_tree_instance,
                         phi_estimate, phi_hat_large_k, phi_tree,
                         random_tree_instance, spinodal_search,
                         sweep_phi_theta)

__all__ = [
    "Clause", "DimacsError", "FactorGraph", "Instance", "PartialAssignment",
    "build_factor_graph", "check_assignment", "emit_dimacs", "emit_metadata",
    "generate_random_ksat", "parse_dimacs",
    "BpParams", "BpState", "BroadcastSampler", "EnumerationBudgetError",
    "SolutionTable", "bp_sweep", "broadcast_sample", "brute_force_marginals",
    "clause_fn_tanh", "marginal", "run_bp",
    "WpState", "schedule_invariance_check", "ucp_closure", "wp_closure_batch",
    "wp_fixed_point",
    "DecimationParams", "DecimationTrace", "decimate",
    "frozen_fraction_curve", "idealized_uniformity_test",
    "PhiEstimate", "Population", "alpha_spin_hat", "de_step",
    "exactness_check", "freeze_probability_tree_instance", "phi_estimate",
    "phi_hat_large_k", "phi_tree", "random_tree_instance", "spinodal_search",
    "sweep_phi_theta",
]
