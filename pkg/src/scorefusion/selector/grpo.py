"""Group-relative policy optimization of the selection policy.

For every training query the current policy samples a group of ``N``
episodes, each episode is scored with the total reward, and rewards are
standardized within the group to get advantages.  The update ascends

    mean_i min(r_i A_i, clip(r_i, 1 - eps, 1 + eps) A_i) - beta * KL(pi || pi_ref)

averaged over the batch, where ``r_i`` is the episode's probability ratio
between the current parameters and those it was sampled with.  The KL term
is computed in closed form between the anchor categorical and continuation
Bernoulli distributions (without the call-budget truncation).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, log_expit, log_softmax

from ..fusion import act_fuse_dataset, act_fuse_query
from ..metrics import MetricReport, NonMatedTrial, evaluate_report
from ..reward import MetricRewardContext, RewardConfig, reward_breakdown
from ..scorespace import Dataset, SelectionMask
from .policy import Policy, Selection, sample_selection, selection_to_transcript

log = logging.getLogger(__name__)

DEGENERATE_STD = 1e-12


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 6
    beta: float = 0.04
    clip_eps: float = 0.2
    learning_rate: float = 0.5
    lr_schedule: str = "linear"
    steps: int = 200
    batch_size: int = 4
    updates_per_batch: int = 1
    turn_limit: int = 4
    mode: str = "cot"
    answer_rule: str = "anchor"
    seed: int = 0

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.turn_limit < 2:
            raise ValueError("turn_limit must be >= 2")
        if self.lr_schedule not in ("linear", "constant"):
            raise ValueError("lr_schedule must be 'linear' or 'constant'")
        if self.mode not in ("cot", "da"):
            raise ValueError("mode must be 'cot' or 'da'")
        if self.answer_rule not in ("anchor", "fused"):
            raise ValueError("answer_rule must be 'anchor' or 'fused'")
        if self.batch_size < 1 or self.steps < 0 or self.updates_per_batch < 1:
            raise ValueError("batch_size and updates_per_batch must be >= 1, steps >= 0")

    def learning_rate_at(self, step: int) -> float:
        if self.lr_schedule == "constant" or self.steps == 0:
            return self.learning_rate
        return self.learning_rate * (1.0 - step / self.steps)


def group_advantages(rewards: Sequence[float]) -> np.ndarray:
    """Standardize rewards within a group (population std); all zeros for a flat group."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("a group needs at least two rewards")
    std = r.std()
    if std < DEGENERATE_STD:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def kl_to_reference(policy: Policy, x) -> tuple[float, np.ndarray]:
    """Closed-form ``KL(policy || reference)`` at features ``x`` and its gradient w.r.t. ``policy.params``.

    Every continuation head is counted as if it were always consulted, so the
    call budget's truncation is ignored and the value is an approximation.
    """
    xb = policy.inputs(x)
    ref_a, ref_c = policy.reference
    z, z_ref = xb @ policy.anchor_weights, xb @ ref_a
    u, u_ref = xb @ policy.continue_weights, xb @ ref_c
    logp, logq = log_softmax(z), log_softmax(z_ref)
    p = np.exp(logp)
    kl_cat = float(np.sum(p * (logp - logq)))
    sig = expit(u)
    kl_b = sig * (log_expit(u) - log_expit(u_ref)) + (1 - sig) * (log_expit(-u) - log_expit(-u_ref))
    # E_anchor[sum over non-anchor models of their Bernoulli KL]
    expected_b = kl_b.sum() - float(p @ kl_b)
    value = kl_cat + expected_b

    d_z = p * (logp - logq - kl_cat) - p * (kl_b - float(p @ kl_b))
    d_u = (1.0 - p) * sig * (1.0 - sig) * (u - u_ref)
    grad = np.concatenate([np.outer(xb, d_z).ravel(), np.outer(xb, d_u).ravel()])
    return value, grad


@dataclass
class Group:
    """One query's sampled episodes with their advantages and sampling-time log-probs."""

    features: np.ndarray
    selections: list[Selection]
    advantages: np.ndarray
    old_log_probs: np.ndarray


def surrogate_objective(policy: Policy, groups: Sequence[Group], clip_eps: float, beta: float) -> tuple[float, np.ndarray]:
    """Clipped group-relative objective (to maximize) and its gradient w.r.t. ``policy.params``."""
    total = 0.0
    grad = np.zeros_like(policy.params)
    for g in groups:
        n = len(g.selections)
        for sel, adv, old_lp in zip(g.selections, g.advantages, g.old_log_probs):
            ratio = float(np.exp(policy.log_prob(g.features, sel) - old_lp))
            unclipped = ratio * adv
            clipped = float(np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)) * adv
            total += min(unclipped, clipped) / n
            if unclipped <= clipped and adv != 0.0:
                grad += adv * ratio * policy.grad_log_prob(g.features, sel) / n
        if beta:
            kl, kl_grad = kl_to_reference(policy, g.features)
            total -= beta * kl
            grad -= beta * kl_grad
    return total / len(groups), grad / len(groups)


def anchor_answer(d: Dataset, query: int, models: Sequence[int], k: int) -> str:
    """The identity predicted by the first (most trusted) called model."""
    return str(d.gallery_labels[int(np.argmax(d.scores[models[0], query]))])


def fused_answer(d: Dataset, query: int, models: Sequence[int], k: int) -> str:
    """Identity ranked first by ACT over ``models`` (first one anchors) for one query."""
    fused = act_fuse_query(d.scores[list(models), query], 0, k)
    return str(d.gallery_labels[int(np.argmax(fused))])


ANSWER_RULES = {"anchor": anchor_answer, "fused": fused_answer}


def grpo_step(
    policy: Policy,
    queries: Sequence[int],
    d: Dataset,
    reward_cfg: RewardConfig,
    cfg: GrpoConfig,
    seed,
    context: MetricRewardContext | None = None,
    learning_rate: float | None = None,
) -> tuple[Policy, dict]:
    """Sample groups for ``queries``, score them, and take ``cfg.updates_per_batch`` ascent steps.

    Episode ``i`` of batch entry ``j`` draws its actions from
    ``default_rng([*seed, j, i])`` and its augmented mask from
    ``[*seed, j, i, 1]``, so results do not depend on evaluation order.
    """
    if context is None:
        context = MetricRewardContext(d, reward_cfg)
    seed = list(np.atleast_1d(seed).astype(int))
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    feats = d.features()
    groups, rewards_all, calls = [], [], []
    for j, q in enumerate(queries):
        x = feats[q]
        sels, rewards = [], []
        for i in range(cfg.group_size):
            rng = np.random.default_rng(seed + [j, i])
            sel = sample_selection(policy, x, cfg.turn_limit, rng)
            answer = ANSWER_RULES[cfg.answer_rule](d, q, sel.models, reward_cfg.k)
            transcript = selection_to_transcript(sel, policy.model_names, cfg.mode, answer)
            r = reward_breakdown(transcript, str(d.query_labels[q]), d, reward_cfg, seed + [j, i, 1], context)
            sels.append(sel)
            rewards.append(r.total)
            calls.append(len(sel.models))
        old = np.array([policy.log_prob(x, s) for s in sels])
        groups.append(Group(x, sels, group_advantages(rewards), old))
        rewards_all.append(rewards)

    current = policy
    for _ in range(cfg.updates_per_batch):
        objective, grad = surrogate_objective(current, groups, cfg.clip_eps, cfg.beta)
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite policy gradient (objective={objective}, rewards={rewards_all})")
        current = current.with_params(current.params + lr * grad)

    rewards_arr = np.array(rewards_all)
    adv = np.concatenate([g.advantages for g in groups])
    kl = float(np.mean([kl_to_reference(current, g.features)[0] for g in groups]))
    diagnostics = {
        "reward_mean": float(rewards_arr.mean()),
        "reward_std": float(rewards_arr.std()),
        "advantage_mean": float(adv.mean()),
        "advantage_std": float(adv.std()),
        "objective": float(objective),
        "grad_norm": float(np.linalg.norm(grad)),
        "kl": kl,
        "mean_calls": float(np.mean(calls)),
        "learning_rate": lr,
    }
    return current, diagnostics


def train_policy(
    d: Dataset,
    reward_cfg: RewardConfig,
    cfg: GrpoConfig,
    policy: Policy | None = None,
    on_step: Callable[[int, dict], None] | None = None,
) -> tuple[Policy, list[dict]]:
    """Run ``cfg.steps`` GRPO steps on random query batches of ``d``."""
    if policy is None:
        policy = Policy.for_features(d.features(), d.model_names)
    if policy.model_names != d.model_names:
        raise ValueError(f"policy models {policy.model_names} != dataset models {d.model_names}")
    context = MetricRewardContext(d, reward_cfg)
    history = []
    batch = min(cfg.batch_size, d.n_queries)
    for step in range(cfg.steps):
        rng = np.random.default_rng([cfg.seed, step])
        queries = np.sort(rng.choice(d.n_queries, size=batch, replace=False))
        policy, diag = grpo_step(
            policy, queries, d, reward_cfg, cfg, [cfg.seed, step, 7], context, cfg.learning_rate_at(step)
        )
        diag = {"step": step, **diag}
        history.append(diag)
        if on_step is not None:
            on_step(step, diag)
        if step % 20 == 0:
            log.debug("step %d reward %.4f kl %.5f", step, diag["reward_mean"], diag["kl"])
    return policy, history


def greedy_mask(policy: Policy, d: Dataset, turn_limit: int = 4) -> SelectionMask:
    """Selection mask from the policy's most likely actions on every query."""
    feats = d.features()
    mask = np.zeros((d.n_queries, d.n_models), dtype=bool)
    anchors = np.zeros(d.n_queries, dtype=np.int64)
    for q in range(d.n_queries):
        sel = sample_selection(policy, feats[q], turn_limit, greedy=True)
        mask[q, sel.models] = True
        anchors[q] = sel.anchor
    return SelectionMask(mask, anchors)


def evaluate_policy(
    policy: Policy,
    d: Dataset,
    k: int,
    far: float,
    fpir: float,
    trials: Sequence[NonMatedTrial],
    turn_limit: int = 4,
) -> tuple[MetricReport, SelectionMask]:
    mask = greedy_mask(policy, d, turn_limit)
    fused = act_fuse_dataset(d, mask, k)
    return evaluate_report(fused, d.query_labels, d.gallery_labels, far, fpir, trials), mask
