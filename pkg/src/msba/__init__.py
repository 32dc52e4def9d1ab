"""Multi-stage bonus allocation for on-demand delivery orders."""

from .core import (AcceptanceCurve, ConfigurationError, DomainError, InvalidArgumentError, MsbaError, OrderArrays,
                   OrderProfile, ProbBounds, StagePlan, acceptance_prob, inverse_bonus, lifecycle_accept_prob,
                   lifecycle_expected_spend, prob_bounds)
from .controller import AdjustmentParams, PacedConfig, PacingState, paced_run, realtime_multiplier, retarget_daily
from .fitting import (CalibrationTable, DegenerateFitError, ObservationSet, apply_calibration, calibrate_bins,
                      fit_logistic)
from .lddp import LddpSolver, MultiplierSchedule, StageDataset, run_lddp
from .online import BonusGrid, Decision, decide, decide_batch
from .simulator import (Msba, NoBonus, SingleStage, SyntheticConfig, Unified, evaluate_expected, generate_orders,
                        simulate)
from .single_stage import StageProblem, StageSolution, inner_min, solve

__version__ = "0.1.0"
