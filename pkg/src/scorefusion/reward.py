"""Rewards for model-selection episodes.

An episode is a :class:`TrajectoryTranscript`: a sequence of turns, the tool
calls made (one biometric model per call) and the final identity answer.
Four rewards score it:

* format: per-turn structure check averaged over turns,
* tool success: fraction of tool calls that executed,
* accuracy: 1 if the answered identity is the ground truth,
* metric: ``rank1 + mAP + TAR - FNIR`` of ACT fusion over the whole training
  set, using a selection mask built around the episode's model combination.

The total is a weighted sum, unit weights by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .fusion import act_fuse_dataset, contribution_tensor
from .metrics import NonMatedTrial, build_nonmated_trials, evaluate_report
from .scorespace import Dataset, SelectionMask

Action = Literal["tool_call", "answer", "malformed"]


@dataclass(frozen=True)
class Turn:
    has_think: bool
    action: Action


@dataclass(frozen=True)
class ToolCall:
    model_name: str
    succeeded: bool = True


@dataclass(frozen=True)
class TrajectoryTranscript:
    turns: tuple[Turn, ...]
    tool_calls: tuple[ToolCall, ...] = ()
    final_answer: str | None = None
    mode: Literal["cot", "da"] = "cot"

    def __post_init__(self):
        if self.mode not in ("cot", "da"):
            raise ValueError(f"mode must be 'cot' or 'da', got {self.mode!r}")
        object.__setattr__(self, "turns", tuple(self.turns))
        object.__setattr__(self, "tool_calls", tuple(self.tool_calls))

    def selected_models(self) -> list[str]:
        """Names of successfully called models in call order; the first is the anchor."""
        return [c.model_name for c in self.tool_calls if c.succeeded]

    def check(self, turn_limit: int | None = None) -> None:
        if turn_limit is not None and len(self.turns) > turn_limit:
            raise ValueError(f"{len(self.turns)} turns exceed the limit of {turn_limit}")
        names = self.selected_models()
        if len(set(names)) != len(names):
            raise ValueError(f"model selected more than once: {names}")


@dataclass(frozen=True)
class RewardConfig:
    gamma: float = 0.8
    bernoulli_p: float = 0.5
    w_format: float = 1.0
    w_tool: float = 1.0
    w_acc: float = 1.0
    w_metric: float = 1.0
    k: int = 10
    far: float = 0.01
    fpir: float = 0.01
    trial_fraction: float = 0.2
    n_trials: int = 10
    base_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.bernoulli_p <= 1.0:
            raise ValueError(f"bernoulli_p must lie in [0, 1], got {self.bernoulli_p}")
        for w in (self.w_format, self.w_tool, self.w_acc, self.w_metric):
            if not np.isfinite(w) or w < 0:
                raise ValueError("reward weights must be finite and non-negative")

    def trials(self, d: Dataset) -> list[NonMatedTrial]:
        return build_nonmated_trials(d.query_labels, d.gallery_labels, self.trial_fraction, self.n_trials, self.base_seed)


def format_reward(t: TrajectoryTranscript) -> float:
    if not t.turns:
        return 0.0
    # the action field admits one action per turn; two or none is "malformed"
    ok = [turn.action in ("tool_call", "answer") and (turn.has_think or t.mode == "da") for turn in t.turns]
    return sum(ok) / len(ok)


def tool_success_reward(t: TrajectoryTranscript) -> float:
    """Successful calls over total calls; 0 when no call was made."""
    if not t.tool_calls:
        return 0.0
    return sum(c.succeeded for c in t.tool_calls) / len(t.tool_calls)


def accuracy_reward(answer: str | None, truth: str) -> int:
    return int(answer is not None and answer == truth)


def augment_selection_mask(
    subset: Sequence[int],
    anchor: int,
    n_queries: int,
    n_models: int,
    gamma: float,
    p: float,
    seed,
) -> SelectionMask:
    """Expand one model combination into a per-query mask.

    Each row keeps ``subset`` with probability ``gamma``; otherwise every entry
    is an independent Bernoulli(``p``) draw.  The anchor column is always set.
    """
    if anchor not in subset:
        raise ValueError(f"anchor {anchor} not in subset {list(subset)}")
    rng = np.random.default_rng(seed)
    base = np.zeros(n_models, dtype=bool)
    base[list(subset)] = True
    keep = rng.random(n_queries) < gamma
    random_rows = rng.random((n_queries, n_models)) < p
    mask = np.where(keep[:, None], base[None, :], random_rows)
    mask[:, anchor] = True
    return SelectionMask(mask, np.full(n_queries, anchor))


@dataclass
class MetricRewardContext:
    """Per-dataset state reused across many metric-reward evaluations."""

    dataset: Dataset
    cfg: RewardConfig
    contributions: np.ndarray = field(init=False)
    trials: list[NonMatedTrial] = field(init=False)

    def __post_init__(self):
        self.contributions = contribution_tensor(self.dataset, self.cfg.k)
        self.trials = self.cfg.trials(self.dataset)


def metric_based_reward(
    d: Dataset,
    mask: SelectionMask,
    cfg: RewardConfig,
    context: MetricRewardContext | None = None,
) -> float:
    """``rank1 + mAP + TAR - mean FNIR`` (fractions) of ACT fusion under ``mask``."""
    if context is None:
        context = MetricRewardContext(d, cfg)
    fused = act_fuse_dataset(d, mask, cfg.k, contributions=context.contributions)
    report = evaluate_report(fused, d.query_labels, d.gallery_labels, cfg.far, cfg.fpir, context.trials)
    return report.overall


@dataclass(frozen=True)
class RewardBreakdown:
    format: float
    tool: float
    accuracy: float
    metric: float
    total: float


METRIC_FLOOR = -1.0


def reward_breakdown(
    t: TrajectoryTranscript,
    truth: str,
    d: Dataset,
    cfg: RewardConfig,
    seed=0,
    context: MetricRewardContext | None = None,
) -> RewardBreakdown:
    """All four rewards plus the weighted total.

    The metric reward's mask is drawn with ``augment_selection_mask(..., seed)``
    around the episode's successful calls.  An episode without any successful
    call gets the metric reward's lower bound.
    """
    r_f = format_reward(t)
    r_tool = tool_success_reward(t)
    r_acc = accuracy_reward(t.final_answer, truth)
    names = t.selected_models()
    if names:
        idx = [d.model_index(n) for n in names]
        mask = augment_selection_mask(idx, idx[0], d.n_queries, d.n_models, cfg.gamma, cfg.bernoulli_p, seed)
        r_mat = metric_based_reward(d, mask, cfg, context)
    else:
        r_mat = METRIC_FLOOR
    total = cfg.w_format * r_f + cfg.w_tool * r_tool + cfg.w_acc * r_acc + cfg.w_metric * r_mat
    return RewardBreakdown(r_f, r_tool, float(r_acc), r_mat, total)


def total_reward(
    t: TrajectoryTranscript,
    truth: str,
    d: Dataset,
    cfg: RewardConfig,
    seed=0,
    context: MetricRewardContext | None = None,
) -> float:
    return reward_breakdown(t, truth, d, cfg, seed, context).total
