"""Fairness-aware multi-target multi-user ISAC simulator and optimizer.

Closed-form sensing (SCNR, Fisher information, CRB) and RSMA communication
metrics under bounded CSI error, plus an SCA + SDR + penalty optimizer for
joint beamforming, common-rate splitting, and sensing power allocation, with
SDMA/NOMA/OMA and equality-aware baselines.
"""

from .algorithm import Solution, certify_solution, run_algorithm1
from .arrays import ula_steering, ula_steering_derivative
from .baselines import pareto_sweep, solve_baseline
from .beams import extract_rank1, rank1_residual, zero_forcing_init
from .config import SystemConfig, dbm_to_watt, desk_profile, paper_profile, watt_to_dbm
from .conic import ConicSubproblem, SolverSettings, solve_conic
from .mle import mle_mse_oracle
from .rates import (BeamformerSet, RatesReport, noma_rates, oma_rates,
                    rsma_rates, transmit_covariance)
from .scenario import (Scenario, TargetSet, UserChannel, build_scenario,
                       sample_csi_error, sample_rician_channel,
                       scenario_from_json, scenario_to_json)
from .sca import (build_schur_lmi, fairness_power_bounds,
                  geometric_mean_tangent, linearize_rate_constraint,
                  penalty_objective, penalty_value)
from .sensing import (CrbReport, FimBundle, beampattern, crb_from_fim,
                      echo_scnr, fim_blocks, unit_scnr)
from .subproblem import ScaState, assemble_subproblem

__version__ = "0.1.0"

__all__ = [
    "BeamformerSet", "ConicSubproblem", "CrbReport", "FimBundle",
    "RatesReport", "Scenario", "ScaState", "Solution", "SolverSettings",
    "SystemConfig", "TargetSet", "UserChannel", "assemble_subproblem",
    "beampattern", "build_scenario", "build_schur_lmi", "certify_solution",
    "crb_from_fim", "dbm_to_watt", "desk_profile", "echo_scnr",
    "extract_rank1", "fairness_power_bounds", "fim_blocks",
    "geometric_mean_tangent", "linearize_rate_constraint", "mle_mse_oracle",
    "noma_rates", "oma_rates", "paper_profile", "pareto_sweep",
    "penalty_objective", "penalty_value", "rank1_residual", "rsma_rates",
    "run_algorithm1", "sample_csi_error", "sample_rician_channel",
    "scenario_from_json", "scenario_to_json", "solve_baseline", "solve_conic",
    "transmit_covariance", "ula_steering", "ula_steering_derivative",
    "unit_scnr", "watt_to_dbm", "zero_forcing_init",
]
