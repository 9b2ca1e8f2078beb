"""Model-selection strategies: exhaustive search, per-query oracle and a GRPO-trained policy."""

from .grpo import (
    GrpoConfig,
    evaluate_policy,
    greedy_mask,
    group_advantages,
    grpo_step,
    kl_to_reference,
    surrogate_objective,
    train_policy,
)
from .policy import Policy, Selection, sample_selection, sample_trajectory
from .search import CombinationCandidate, GridSearchResult, enumerate_candidates, grid_search, per_sample_oracle

__all__ = [
    "CombinationCandidate",
    "GridSearchResult",
    "GrpoConfig",
    "Policy",
    "Selection",
    "enumerate_candidates",
    "evaluate_policy",
    "greedy_mask",
    "grid_search",
    "group_advantages",
    "grpo_step",
    "kl_to_reference",
    "per_sample_oracle",
    "sample_selection",
    "sample_trajectory",
    "surrogate_objective",
    "train_policy",
]
