"""Reinforcement-learning state preparation for trapped molecular ions.

Simulates blue-sideband pulse dynamics and projective motional measurements
on a molecular level structure, wraps them as a Markov decision process with
optional black-body-radiation noise, trains a deep-Q agent on it, and
extracts decision trees and episode statistics.
"""

from .levels import (CahConstants, LevelLabel, LevelTable, PopulationState,
                     boltzmann_populations, build_cah_hamiltonian, cah_label,
                     diagonalize_to_levels, format_label, h3o_label,
                     load_level_table, save_level_table)
from .pulses import (DipoleCoupling, DipoleCouplingSet, MergeRule, PulseLibrary,
                     PulseSpec, TrapConfig, build_pulse_library, load_rabi_table,
                     pi_pulse_duration, raman_rabi_rate)
from .propagator import (TransitionMatrixPair, UnitaryEvolution, compile_library,
                         compile_pulse, compile_transition_matrices, evolve_pulse,
                         interaction_hamiltonian, laboratory_hamiltonian,
                         load_transition_matrices, measurement_probabilities,
                         propagate_steps, save_transition_matrices)
from .thermal import (BbrGenerator, EinsteinTable, bbr_propagate, bbr_rates,
                      load_einstein_table, planck_energy_density,
                      purity_degradation_bounds)
from .env import (EnvConfig, EpisodeRecord, StatePrepEnv, StepOutcome, overlap,
                  run_episode, sweeping_policy, write_episode_log)
from .agent import (DqnConfig, EvaluationStats, Mlp, ReplayBuffer, ReplayEntry,
                    epsilon, evaluate, forward, load_checkpoint,
                    loss_and_gradient, save_checkpoint, select_action,
                    soft_update, td_target, train)
from .analysis import (DecisionTree, DecisionTreeNode, belief_q,
                       export_curve_csv, export_tree_dot, extract_decision_tree,
                       family_fraction, plot_curves, pulses_to_fraction,
                       read_curve_csv, success_curve, terminal_histogram)
from .presets import (PresetBundle, cah_desk, desk_einstein_table, h3o,
                      load_preset, toy_three_state, toy_transition_matrices)

__version__ = "0.1.0"
