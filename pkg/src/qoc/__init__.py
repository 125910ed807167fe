"""Optimal control of n-level quantum systems via the real reduction.

The package models a system as a coupling graph over energy levels, removes
the drift by passing to the interaction picture, reduces minimizers to real
controls on the real sphere, solves the reduced problem by direct
transcription with exact adjoint gradients, and classifies extremals
(resonance, weak resonance, abnormality) along the way.
"""
from .costs import (COST_KINDS, CostSpec, constant_speed_residual,
                    evaluate_all_costs, evaluate_cost, in_constraint_set,
                    load_cost_spec, save_cost_spec)
from .dynamics import (AdmissiblePair, ControlGrid, StateTrajectory, TimeGrid,
                       eliminate_drift, embed_real_control, load_control,
                       propagate_drift, propagate_driftless, propagate_real,
                       restore_drift, save_control, save_trajectory_csv,
                       suggest_steps)
from .errors import (ConvergenceError, DimensionExceededError,
                     InvalidControlError, MixedWindowError,
                     NotControllableError, PhaseUndefinedError, QocError,
                     ResidualExceededError, SupportOverlapError,
                     WindowNotFoundError)
from .optimizer import (IndexPartition, PenaltyState, PMPLift, SolveOptions,
                        SolveResult, abnormal_covector_probe, adjoint_gradient,
                        classify_extremal, distribution_rank,
                        find_clean_window, partition_indexes, pmp_residual,
                        solve_reduced, spanning_tree)
from .resonance import (DEFAULT_EPS, IntervalDecomposition, ResonanceVerdict,
                        UVDecomposition, classify_resonance,
                        counterexample_pair, decompose_intervals,
                        eigenstate_bridge, resonance_transform, rot_alpha,
                        uv_decompose)
from .system import (BoundarySpec, Edge, LevelSystem, canonical_edge,
                     connected_components, is_controllable, lie_rank_oracle,
                     load_system, save_system, validate_system)

__version__ = "0.1.0"
