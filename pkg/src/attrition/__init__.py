"""Solver and simulator toolkit for two-player exit games over diffusions."""

from .diffusion import (
    DiffusionSpec,
    FundamentalPair,
    fundamental_solutions,
    resolve_truncation,
    scale_density,
    speed_density,
)
from .equilibrium import (
    Atom,
    EquilibriumReport,
    IndifferenceHazard,
    MixedEquilibrium,
    NonExistenceCertificate,
    Strategy,
    StrategyProfile,
    analyze,
    candidate_exit_rate,
    deterministic_mixed_mpe,
    kappa_theta,
    mixed_mpe_analysis,
    pure_mpe_strong_exits,
    pure_mpe_weak_exits,
)
from .forms import Form, affine, constant, exponential, poly, power
from .oracle import GridModel, build_grid, dp_best_response, dp_single_player
from .payoffs import FirmSpec, GameModel, ValidationReport, break_even_state, validate
from .simulate import OutcomeSet, SimConfig, estimate_values, indifference_diagnostic, play_game, simulate_paths
from .stopping import (
    ThresholdSolution,
    curve_table,
    expected_profit,
    optimal_threshold,
    single_player_value,
    stop_coefficient,
    stop_coefficient_slope,
)

__version__ = "0.1.0"
