"""Anchor-based confidence top-k (ACT) fusion and rule-based baselines.

ACT for one query, with selected models ``M_q`` and anchor ``a``::

    z_m   = (s_m - mean(s_m)) / std(s_m)            population std, z = 0 if std < eps
    c_m   = z_m * s_m   on the k highest entries of s_m, 0 elsewhere
    fused = (s_a + sum_{m in M_q} c_m) / (1 + |M_q|)

The anchor is itself a member of ``M_q`` so its own contribution is part of the
sum.  Top-k ties go to the lower gallery index.

All dataset-level functions take a :class:`~scorefusion.scorespace.Dataset`
and a :class:`~scorefusion.scorespace.SelectionMask` and return a ``|Q| x |G|``
float64 array of fused similarities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scorespace import Dataset, SelectionMask

DEFAULT_EPS = 1e-12

FUSION_METHODS = ("act", "min", "max", "zscore", "minmax", "weighted_sum", "surrogate_anchor_act")
BASELINE_METHODS = ("min", "max", "zscore", "minmax", "weighted_sum")


@dataclass(frozen=True)
class FusionConfig:
    method: str = "act"
    k: int = 10
    weights: tuple[float, ...] | None = None
    sigma_epsilon: float = DEFAULT_EPS

    def __post_init__(self):
        if self.method not in FUSION_METHODS:
            raise ValueError(f"unknown fusion method {self.method!r}; choose from {FUSION_METHODS}")
        if self.k < 0:
            raise ValueError(f"k must be >= 0, got {self.k}")
        if self.sigma_epsilon <= 0:
            raise ValueError("sigma_epsilon must be positive")
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))


def zscore_normalize(s, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Z-normalize along the last axis with population std; rows with std < eps become zero."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] == 0:
        raise ValueError("cannot z-normalize an empty score vector")
    mu = s.mean(axis=-1, keepdims=True)
    sigma = s.std(axis=-1, keepdims=True)
    flat = sigma < eps
    z = (s - mu) / np.where(flat, 1.0, sigma)
    return np.where(flat, 0.0, z)


def minmax_normalize(s) -> np.ndarray:
    """Rescale along the last axis to [0, 1]; constant rows become zero."""
    s = np.asarray(s, dtype=np.float64)
    lo = s.min(axis=-1, keepdims=True)
    span = s.max(axis=-1, keepdims=True) - lo
    flat = span <= 0
    return np.where(flat, 0.0, (s - lo) / np.where(flat, 1.0, span))


def topk_mask(s, k: int) -> np.ndarray:
    """Boolean mask of the ``k`` largest entries along the last axis, ties to the lower index."""
    s = np.asarray(s, dtype=np.float64)
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    out = np.zeros(s.shape, dtype=bool)
    k = min(k, s.shape[-1])
    if k == 0:
        return out
    order = np.argsort(-s, axis=-1, kind="stable")[..., :k]
    np.put_along_axis(out, order, True, axis=-1)
    return out


def contribution_vector(s, k: int, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Confidence-weighted top-k contribution ``z * s`` (zero outside the top k).

    Accepts a single score vector or any stack of them along leading axes.
    """
    s = np.asarray(s, dtype=np.float64)
    z = zscore_normalize(s, eps)
    return np.where(topk_mask(s, k), z * s, 0.0)


def act_fuse_query(scores, anchor_index: int, k: int, eps: float = DEFAULT_EPS) -> np.ndarray:
    """ACT fusion of one query.

    ``scores`` is the ``(n_selected, |G|)`` stack of the selected models' score
    vectors and ``anchor_index`` indexes into that stack.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if scores.shape[0] == 0:
        raise ValueError("ACT needs at least one selected model")
    if not 0 <= anchor_index < scores.shape[0]:
        raise ValueError(f"anchor index {anchor_index} is not in the selection of {scores.shape[0]} models")
    acc = scores[anchor_index].copy()
    for c in contribution_vector(scores, k, eps):
        acc += c
    return acc / (1 + scores.shape[0])


def contribution_tensor(d: Dataset, k: int, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Contribution vectors for every (model, query): shape ``(|M|, |Q|, |G|)``.

    Independent of the selection, so callers that fuse many masks over the
    same dataset can compute it once and pass it to :func:`act_fuse_dataset`.
    """
    return contribution_vector(d.scores, k, eps)


def _add_masked(acc: np.ndarray, values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # in place, ascending model order: matches act_fuse_query bit-for-bit
    for m in range(values.shape[0]):
        acc += np.where(mask[:, m, None], values[m], 0.0)
    return acc


def act_fuse_dataset(
    d: Dataset,
    mask: SelectionMask,
    k: int,
    eps: float = DEFAULT_EPS,
    contributions: np.ndarray | None = None,
) -> np.ndarray:
    """Row-wise ACT: row q fuses the models selected in ``mask.mask[q]`` anchored at ``mask.anchor[q]``."""
    mask.check_against(d)
    if contributions is None:
        contributions = contribution_tensor(d, k, eps)
    rows = np.arange(d.n_queries)
    acc = _add_masked(d.scores[mask.anchor, rows, :].copy(), contributions, mask.mask)
    return acc / (1 + mask.mask.sum(axis=1))[:, None]


def surrogate_anchor_fuse(
    d: Dataset,
    mask: SelectionMask,
    k: int,
    eps: float = DEFAULT_EPS,
    contributions: np.ndarray | None = None,
) -> np.ndarray:
    """ACT with the mean of the selected models' scores standing in for the anchor.

    ``mask.anchor`` is ignored.  This is the fusion used for hard selection,
    where every model is selected and none is designated as anchor.
    """
    mask.check_against(d)
    if contributions is None:
        contributions = contribution_tensor(d, k, eps)
    n_sel = mask.mask.sum(axis=1)
    anchor = _selected_sum(d.scores, mask.mask) / n_sel[:, None]
    acc = _add_masked(anchor, contributions, mask.mask)
    return acc / (1 + n_sel)[:, None]


def _selected_sum(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return _add_masked(np.zeros(values.shape[1:]), values, mask)


def baseline_fuse(
    d: Dataset,
    mask: SelectionMask,
    method: str,
    weights: Sequence[float] | None = None,
    eps: float = DEFAULT_EPS,
) -> np.ndarray:
    """Rule-based fusion over each query's selected models.

    ``min``/``max`` take the elementwise extreme, ``zscore``/``minmax`` average
    per-query normalized vectors, ``weighted_sum`` computes
    ``sum(w_m s_m) / sum(w_m)`` over the selection (uniform weights by default).
    """
    mask.check_against(d)
    sel = mask.mask[:, :, None].transpose(1, 0, 2)  # (M, Q, 1)
    n_sel = mask.mask.sum(axis=1)[:, None]
    if method == "min":
        return np.where(sel, d.scores, np.inf).min(axis=0)
    if method == "max":
        return np.where(sel, d.scores, -np.inf).max(axis=0)
    if method == "zscore":
        return _selected_sum(zscore_normalize(d.scores, eps), mask.mask) / n_sel
    if method == "minmax":
        return _selected_sum(minmax_normalize(d.scores), mask.mask) / n_sel
    if method == "weighted_sum":
        w = np.ones(d.n_models) if weights is None else np.asarray(weights, dtype=np.float64)
        if w.shape != (d.n_models,):
            raise ValueError(f"expected {d.n_models} weights, got {w.size}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        total = np.where(mask.mask, w[None, :], 0.0).sum(axis=1)[:, None]
        if np.any(total <= 0):
            raise ValueError("selected models have zero total weight for some query")
        return _selected_sum(d.scores * w[:, None, None], mask.mask) / total
    raise ValueError(f"unknown baseline method {method!r}; choose from {BASELINE_METHODS}")


def fuse(d: Dataset, mask: SelectionMask, config: FusionConfig, contributions: np.ndarray | None = None) -> np.ndarray:
    """Dispatch on ``config.method``."""
    if config.method == "act":
        return act_fuse_dataset(d, mask, config.k, config.sigma_epsilon, contributions)
    if config.method == "surrogate_anchor_act":
        return surrogate_anchor_fuse(d, mask, config.k, config.sigma_epsilon, contributions)
    return baseline_fuse(d, mask, config.method, config.weights, config.sigma_epsilon)
