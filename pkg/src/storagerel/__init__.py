"""Phase-type reliability models of RAID/MDS disk groups.

Weibull-distributed disk clocks are approximated by small phase-type
distributions, a lumped continuous-time Markov chain of the group is built,
and its transient loss probability is solved by uniformization. An
event-driven simulator with the original clocks serves as the reference.
"""

__version__ = "0.1.0"

from .distributions import ErlangSpec, MomentTriple, PhaseTypeSpec, ThreeStateParams, WeibullSpec
from .phfit import (
    ErlangApproximation,
    FitError,
    FitReport,
    FourStateApproximation,
    FourStateParams,
    ThreeStateApproximation,
    fit_erlang,
    fit_four_state,
    fit_three_state,
    repair_infeasible_fit,
)
from .ctmc import (
    DdfSeries,
    DiskLocalModel,
    LumpedChain,
    StateSpaceTooLarge,
    build_lumped_chain,
    build_naive_chain,
    loss_probability,
    read_triplets,
    uniformize,
)
from .raid import (
    FitPlan,
    MarkovReliabilityModel,
    SystemConfig,
    build_disk_model,
    fit_system,
    mds_loss_predicate,
    shape_sensitivity_sweep,
)
from .sim import MonteCarloReliability, estimate_ddf, estimate_ddf_phasetype, simulate_group

__all__ = [
    "__version__",
    "WeibullSpec", "PhaseTypeSpec", "ErlangSpec", "ThreeStateParams", "MomentTriple",
    "ThreeStateApproximation", "ErlangApproximation", "FourStateApproximation", "FourStateParams",
    "FitError", "FitReport", "fit_three_state", "fit_erlang", "fit_four_state", "repair_infeasible_fit",
    "DiskLocalModel", "LumpedChain", "DdfSeries", "StateSpaceTooLarge", "build_lumped_chain",
    "build_naive_chain", "uniformize", "loss_probability", "read_triplets",
    "FitPlan", "SystemConfig", "MarkovReliabilityModel", "build_disk_model", "fit_system",
    "mds_loss_predicate", "shape_sensitivity_sweep",
    "MonteCarloReliability", "estimate_ddf", "estimate_ddf_phasetype", "simulate_group",
]
