"""Tabular policy extraction from implicit Q-learning critics.

Build a gridworld, log a behavior dataset, fit an expectile critic, and
turn it into a policy with one of several weighting rules. A brute-force
simplex oracle checks the closed-form rules.
"""

__version__ = "0.1.0"

from .critic import CriticConfig, ValueTables, expectile_loss, solve_state_expectile, train_critic
from .dataset import (BehaviorModel, CorruptionConfig, Transition, TransitionDataset, corrupt,
                      enumerate_transitions, estimate_behavior, generate_dataset)
from .errors import (AlignExtractError, ConfigurationError, DatasetFormatError, DegenerateStateError,
                     InfeasibleError, NumericError, PipelineError)
from .extraction import (ExtractedPolicy, WeightSpec, extract_action_sampled, extract_policy_full,
                         extract_policy_sampled, mix_weights, weight_align_hard, weight_align_soft,
                         weight_awr, weight_idql_expectile)
from .mdp import (Mdp, build_gridworld, epsilon_mixture, exact_policy_evaluation, exact_q_from_v,
                  greedy_policy, optimal_q, policy_return, uniform_policy)
from .multipliers import (LINEAR, LOG, MultiplierFit, MultiplierTable, Regularizer, multiplier_residuals,
                          solve_beta_log, solve_multiplier_table, solve_multipliers,
                          solve_multipliers_gradient)
from .oracle import KktReport, SimplexInstance, kkt_check, kl_rows, oracle_ipf, oracle_ipf_soft
from .seeding import derive_seed, substream
