"""Tabular distributional dynamic programming and learning built on one-step
Bellman operators and the categorical (Cramér) projection."""

from .distributions import (
    AtomicDistribution,
    CategoricalDistribution,
    DistributionCollection,
    cramer_project,
    dirac,
    distribution_from_json,
    kl_divergence,
    mean,
    mixture,
    pushforward_affine,
    stochastically_dominates,
    sup_wasserstein,
    wasserstein,
)
from .dp import (
    AtomBudgetExceeded,
    IterationTrace,
    OscillationReport,
    RangeConditionError,
    detect_oscillation,
    iterate,
    one_step_fixed_point_eval,
    one_step_fixed_point_opt,
    projected_fixed_points,
    solve_q_pi,
    solve_q_star,
    trace_atoms_to_csv,
    trace_distances_to_csv,
)
from .learning import (
    ExplorationSchedule,
    LearnerState,
    LearningRecord,
    StepSizeSchedule,
    cdrl_step,
    os_cdrl_step,
    project_dirac_sparse,
    run_learning,
    target_microbenchmark,
)
from .mdp import (
    EpisodicEnv,
    Policy,
    TabularMdp,
    Transition,
    make_frozen_lake,
    make_toy_mdp,
    sample_step,
)
from .operators import (
    bellman_eval,
    bellman_opt,
    distr_bellman_eval,
    distr_bellman_opt,
    greedy_policy,
    os_distr_eval,
    os_distr_opt,
    projected,
    random_atomic,
    random_collection,
    random_grid,
    random_mdp,
    random_policy,
)

__version__ = "0.1.0"
