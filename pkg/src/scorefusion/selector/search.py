"""Exhaustive model-combination search: dataset-level grid search and a per-query oracle."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from ..fusion import act_fuse_dataset, contribution_tensor
from ..metrics import (
    MetricReport,
    NonMatedTrial,
    average_precision_per_query,
    evaluate_report,
    first_mate_rank,
)
from ..scorespace import Dataset, SelectionMask

DEFAULT_MODEL_CAP = 8


@dataclass(frozen=True, order=False)
class CombinationCandidate:
    subset: tuple[int, ...]
    anchor: int

    def __post_init__(self):
        subset = tuple(sorted(int(m) for m in self.subset))
        if not subset:
            raise ValueError("candidate subset must be nonempty")
        if len(set(subset)) != len(subset):
            raise ValueError(f"repeated model in subset {subset}")
        if self.anchor not in subset:
            raise ValueError(f"anchor {self.anchor} not in subset {subset}")
        object.__setattr__(self, "subset", subset)

    def sort_key(self) -> tuple:
        """Tie-break order: smaller subsets first, then lexicographic (subset, anchor)."""
        return (len(self.subset), self.subset, self.anchor)

    def mask(self, n_queries: int, n_models: int) -> SelectionMask:
        return SelectionMask.uniform(n_queries, n_models, self.subset, self.anchor)

    def describe(self, model_names: Sequence[str]) -> str:
        names = [model_names[m] for m in self.subset]
        return "+".join(names) + f" (anchor {model_names[self.anchor]})"


def enumerate_candidates(n_models: int, cap: int = DEFAULT_MODEL_CAP) -> list[CombinationCandidate]:
    """Every (subset, anchor) pair with the anchor in the subset: ``n * 2**(n-1)`` of them."""
    if n_models < 1:
        raise ValueError("need at least one model")
    if n_models > cap:
        raise ValueError(
            f"{n_models} models exceed the enumeration cap of {cap} "
            f"({n_models * 2 ** (n_models - 1)} candidates); raise the cap explicitly"
        )
    out = []
    for size in range(1, n_models + 1):
        for subset in combinations(range(n_models), size):
            out.extend(CombinationCandidate(subset, a) for a in subset)
    return out


@dataclass(frozen=True)
class GridSearchResult:
    best: CombinationCandidate
    report: MetricReport
    rows: tuple[tuple[CombinationCandidate, MetricReport], ...]


def grid_search(
    d: Dataset,
    k: int,
    far: float,
    fpir: float,
    trials: Sequence[NonMatedTrial],
    candidates: Sequence[CombinationCandidate] | None = None,
    cap: int = DEFAULT_MODEL_CAP,
) -> GridSearchResult:
    """Evaluate ACT with every candidate applied to all queries; keep the best overall score.

    Ties go to the smaller subset, then lexicographic order, whatever order
    ``candidates`` come in.
    """
    if candidates is None:
        candidates = enumerate_candidates(d.n_models, cap)
    contrib = contribution_tensor(d, k)
    rows = []
    for cand in candidates:
        fused = act_fuse_dataset(d, cand.mask(d.n_queries, d.n_models), k, contributions=contrib)
        rows.append((cand, evaluate_report(fused, d.query_labels, d.gallery_labels, far, fpir, trials)))
    if not rows:
        raise ValueError("no candidates to search")
    best_cand, best_report = min(rows, key=lambda r: (-r[1].overall, r[0].sort_key()))
    rows.sort(key=lambda r: r[0].sort_key())
    return GridSearchResult(best_cand, best_report, tuple(rows))


def per_sample_oracle(
    d: Dataset, k: int, cap: int = DEFAULT_MODEL_CAP
) -> tuple[SelectionMask, list[CombinationCandidate]]:
    """Pick, for every query on its own, the candidate whose fused row has the highest AP.

    Ties prefer the better rank of the first mate, then the smaller subset, then
    lexicographic order.  Queries without a mate get the first candidate.
    """
    candidates = sorted(enumerate_candidates(d.n_models, cap), key=CombinationCandidate.sort_key)
    contrib = contribution_tensor(d, k)
    best_ap = np.full(d.n_queries, -np.inf)
    best_rank = np.full(d.n_queries, np.iinfo(np.int64).max)
    choice = np.zeros(d.n_queries, dtype=np.int64)
    for ci, cand in enumerate(candidates):
        fused = act_fuse_dataset(d, cand.mask(d.n_queries, d.n_models), k, contributions=contrib)
        ap = np.nan_to_num(average_precision_per_query(fused, d.query_labels, d.gallery_labels), nan=-1.0)
        rank = first_mate_rank(fused, d.query_labels, d.gallery_labels)
        better = (ap > best_ap) | ((ap == best_ap) & (rank < best_rank))
        best_ap = np.where(better, ap, best_ap)
        best_rank = np.where(better, rank, best_rank)
        choice = np.where(better, ci, choice)
    chosen = [candidates[c] for c in choice]
    mask = np.zeros((d.n_queries, d.n_models), dtype=bool)
    for q, cand in enumerate(chosen):
        mask[q, list(cand.subset)] = True
    return SelectionMask(mask, np.array([c.anchor for c in chosen])), chosen
