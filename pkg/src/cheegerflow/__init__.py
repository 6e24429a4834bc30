"""
Gradient flows of p-Cheeger energies on weighted graphs and Finsler grids.

Discrete calculus (``space``), energies and subgradient certificates
(``functionals``), the certified implicit Euler step (``resolvent``), flows
and their checks (``flow``), the Anzellotti pairing (``pairing``), large-time
asymptotics (``asymptotics``) and experiment plumbing (``harness``).
"""

from .asymptotics import (
    AsymptoticsReport,
    EigenEstimate,
    analyze,
    asymptotic_profile,
    extinction_time,
    ground_state_check,
    lambda1,
    rayleigh_quotient,
    verify_decay_bounds,
    verify_sharper_bound,
)
from .flow import (
    FlowConfig,
    FlowTrajectory,
    check_comparison,
    check_evi,
    check_tv_regularity,
    check_variational_solution,
    evolve,
    mass_series,
)
from .functionals import (
    SubgradientCertificate,
    dual_objective,
    duality_gap,
    energy,
    resolvent_objective,
    subgradient_membership,
    verify_certificate,
)
from .harness import ExperimentConfig, GeneratorSpec, generate, run
from .pairing import (
    PairingResult,
    gauss_green_residual,
    pairing,
    pairing_coarea,
    theta_levelset_identity,
    theta_monotone_invariance,
)
from .resolvent import ResolventError, ResolventSolution, resolvent_step
from .space import FinslerGridSpace, WeightedGraphSpace, path_graph, two_point_space

__version__ = "0.1.0"
