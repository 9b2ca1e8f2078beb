"""Parametric model-selection policy conditioned on query features.

The policy stands in for the tool-calling agent.  For a query with features
``x`` (standardized with a stored shift and scale, then a constant 1 appended
as bias) it

1. picks an anchor model from ``softmax(x @ anchor_weights)``, which is the
   first tool call;
2. walks the remaining models in index order and calls each with probability
   ``sigmoid(x @ continue_weights[:, m])`` until the call budget runs out;
3. answers.

With a turn limit ``L`` the episode has at most ``L - 1`` tool calls and one
answer turn, and no model is called twice.  Log-probabilities and their
parameter gradients are exact for this factorization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, log_expit, log_softmax, softmax

from ..reward import ToolCall, TrajectoryTranscript, Turn


def with_bias(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


@dataclass(frozen=True)
class Selection:
    """Sampled actions: the anchor and each (model, called?) continuation decision in order."""

    anchor: int
    decisions: tuple[tuple[int, bool], ...] = ()

    @property
    def models(self) -> list[int]:
        """Called models in call order."""
        return [self.anchor] + [m for m, y in self.decisions if y]


@dataclass
class Policy:
    model_names: tuple[str, ...]
    anchor_weights: np.ndarray
    continue_weights: np.ndarray
    reference: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)
    feature_shift: np.ndarray | None = None
    feature_scale: np.ndarray | None = None

    def __post_init__(self):
        self.model_names = tuple(self.model_names)
        self.anchor_weights = np.array(self.anchor_weights, dtype=np.float64)
        self.continue_weights = np.array(self.continue_weights, dtype=np.float64)
        shape = (self.anchor_weights.shape[0], len(self.model_names))
        if self.anchor_weights.shape != shape or self.continue_weights.shape != shape:
            raise ValueError(f"weights must both have shape {shape}")
        n_feat = shape[0] - 1
        self.feature_shift = np.zeros(n_feat) if self.feature_shift is None else np.array(self.feature_shift, dtype=np.float64)
        self.feature_scale = np.ones(n_feat) if self.feature_scale is None else np.array(self.feature_scale, dtype=np.float64)
        if self.feature_shift.shape != (n_feat,) or self.feature_scale.shape != (n_feat,):
            raise ValueError(f"feature shift/scale must have shape ({n_feat},)")
        if np.any(self.feature_scale <= 0):
            raise ValueError("feature scale must be positive")
        if self.reference is None:
            self.reference = (self.anchor_weights.copy(), self.continue_weights.copy())
        for w in (self.anchor_weights, self.continue_weights, *self.reference):
            if not np.all(np.isfinite(w)):
                raise ValueError("policy parameters must be finite")

    @classmethod
    def zeros(cls, n_features: int, model_names: Sequence[str], shift=None, scale=None) -> "Policy":
        shape = (n_features + 1, len(model_names))
        return cls(tuple(model_names), np.zeros(shape), np.zeros(shape), None, shift, scale)

    @classmethod
    def for_features(cls, features: np.ndarray, model_names: Sequence[str]) -> "Policy":
        """Zero-initialized policy standardizing inputs by the mean and std of ``features``."""
        features = np.asarray(features, dtype=np.float64)
        std = features.std(axis=0)
        return cls.zeros(features.shape[1], model_names, features.mean(axis=0), np.where(std > 0, std, 1.0))

    @property
    def n_models(self) -> int:
        return len(self.model_names)

    @property
    def n_features(self) -> int:
        return self.anchor_weights.shape[0] - 1

    @property
    def params(self) -> np.ndarray:
        """Flat parameter vector (anchor weights, then continuation weights)."""
        return np.concatenate([self.anchor_weights.ravel(), self.continue_weights.ravel()])

    def with_params(self, flat: np.ndarray) -> "Policy":
        n = self.anchor_weights.size
        return Policy(
            self.model_names,
            flat[:n].reshape(self.anchor_weights.shape),
            flat[n:].reshape(self.continue_weights.shape),
            self.reference,
            self.feature_shift,
            self.feature_scale,
        )

    def reference_policy(self) -> "Policy":
        a, c = self.reference
        return Policy(self.model_names, a, c, self.reference, self.feature_shift, self.feature_scale)

    def inputs(self, x) -> np.ndarray:
        """Standardized features with the bias column appended."""
        return with_bias((np.asarray(x, dtype=np.float64) - self.feature_shift) / self.feature_scale)

    def anchor_logits(self, x) -> np.ndarray:
        return self.inputs(x) @ self.anchor_weights

    def continue_logits(self, x) -> np.ndarray:
        return self.inputs(x) @ self.continue_weights

    def anchor_probs(self, x) -> np.ndarray:
        return softmax(self.anchor_logits(x), axis=-1)

    def continue_probs(self, x) -> np.ndarray:
        return expit(self.continue_logits(x))

    def log_prob(self, x, sel: Selection) -> float:
        lp = float(log_softmax(self.anchor_logits(x))[sel.anchor])
        u = self.continue_logits(x)
        for m, y in sel.decisions:
            lp += float(log_expit(u[m]) if y else log_expit(-u[m]))
        return lp

    def grad_log_prob(self, x, sel: Selection) -> np.ndarray:
        """Gradient of :meth:`log_prob` with respect to :attr:`params`."""
        xb = self.inputs(x)
        p = self.anchor_probs(x)
        onehot = np.zeros(self.n_models)
        onehot[sel.anchor] = 1.0
        g_anchor = np.outer(xb, onehot - p)
        sig = self.continue_probs(x)
        g_cont = np.zeros_like(self.continue_weights)
        for m, y in sel.decisions:
            g_cont[:, m] = xb * (float(y) - sig[m])
        return np.concatenate([g_anchor.ravel(), g_cont.ravel()])

    def to_dict(self) -> dict:
        return {
            "model_names": list(self.model_names),
            "anchor_weights": self.anchor_weights.tolist(),
            "continue_weights": self.continue_weights.tolist(),
            "reference_anchor_weights": self.reference[0].tolist(),
            "reference_continue_weights": self.reference[1].tolist(),
            "feature_shift": self.feature_shift.tolist(),
            "feature_scale": self.feature_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Policy":
        ref = None
        if "reference_anchor_weights" in raw:
            ref = (np.array(raw["reference_anchor_weights"]), np.array(raw["reference_continue_weights"]))
        return cls(
            tuple(raw["model_names"]),
            np.array(raw["anchor_weights"]),
            np.array(raw["continue_weights"]),
            ref,
            raw.get("feature_shift"),
            raw.get("feature_scale"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Policy":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def sample_selection(policy: Policy, x, turn_limit: int, rng: np.random.Generator | None = None, greedy: bool = False) -> Selection:
    """Draw (or, with ``greedy``, take the mode of) an anchor plus continuation calls."""
    if turn_limit < 2:
        raise ValueError("turn_limit must leave room for one tool call and the answer")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (policy.n_features,):
        raise ValueError(f"feature vector has shape {x.shape}, policy expects ({policy.n_features},)")
    if not greedy and rng is None:
        raise ValueError("sampling needs an rng")
    p = policy.anchor_probs(x)
    anchor = int(np.argmax(p)) if greedy else int(rng.choice(policy.n_models, p=p))
    sig = policy.continue_probs(x)
    budget = turn_limit - 2
    decisions = []
    for m in range(policy.n_models):
        if budget == 0:
            break
        if m == anchor:
            continue
        y = bool(sig[m] > 0.5) if greedy else bool(rng.random() < sig[m])
        decisions.append((m, y))
        budget -= y
    return Selection(anchor, tuple(decisions))


def selection_to_transcript(
    sel: Selection, model_names: Sequence[str], mode: str = "cot", answer: str | None = None
) -> TrajectoryTranscript:
    calls = tuple(ToolCall(model_names[m], True) for m in sel.models)
    think = mode == "cot"
    turns = tuple(Turn(think, "tool_call") for _ in calls) + (Turn(think, "answer"),)
    return TrajectoryTranscript(turns, calls, answer, mode)


def sample_trajectory(
    policy: Policy,
    features,
    turn_limit: int = 4,
    seed=None,
    greedy: bool = False,
    mode: str = "cot",
    answer_fn: Callable[[list[int]], str | None] | None = None,
) -> TrajectoryTranscript:
    """One simulated episode; ``answer_fn`` maps the called model indices to the answered identity."""
    rng = None if greedy else np.random.default_rng(seed)
    sel = sample_selection(policy, features, turn_limit, rng, greedy)
    answer = answer_fn(sel.models) if answer_fn is not None else None
    return selection_to_transcript(sel, policy.model_names, mode, answer)
