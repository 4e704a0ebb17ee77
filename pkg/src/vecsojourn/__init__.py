"""Sojourn times of vector-valued Gaussian random fields over high thresholds.

Quadratic-program reduction of the exceedance region, variogram and
covariance models, exact grid simulation, Berman-function estimators for the
limit law, and simulation checks of the limit theorems at finite levels.
"""

from .berman import (
    BermanEstimate,
    LimitFieldSpec,
    estimate_B_doublesum,
    estimate_B_expmix,
    estimate_B_expmix_refined,
    estimate_F_w,
    richardson_extrapolate,
    simulate_J,
)
from .config import RunManifest, Scenario, emit_results, load_config
from .errors import (
    AllNonpositive,
    AssumptionB2ResidualTooLarge,
    Degenerate,
    DimUnsupported,
    EmptySample,
    MismatchedConfig,
    NotFactorizable,
    NotSPD,
    NumericalError,
    ParseError,
    RareEventInfeasible,
    SavageViolated,
    ScaleMismatch,
    TruncationInsufficient,
    ValidationError,
    VecSojournError,
    WindowExceedsGrid,
)
from .gauss_sim import GridSpec, conditional_residual_field, orthant_tail, sample_field, sample_tail_conditioned
from .qp import QPSolution, brute_force_pi, min_ratio_dual, solve_pi
from .sojourn import EmpiricalDF, ScalingFunction, empirical_df, sojourn_time, theta, windowed_sojourn
from .structure import CovModel, VariogramModel, check_validity, eval_RV, eval_V, gram_psd_check, verify_B2
from .verify import VerificationReport, tail_sandwich, verify_theorem1, verify_theorem2_ratio

__version__ = "0.1.0"
