"""Closed-set, verification and open-set identification metrics on score matrices.

Every function takes a ``|Q| x |G|`` similarity matrix plus the query and
gallery subject labels.  Rankings sort by descending score with ties going to
the lower gallery index.  Results are fractions in [0, 1].

Operating thresholds (TAR@FAR, FNIR@FPIR) use one rule: the threshold is the
smallest *observed* negative score ``t`` such that the fraction of negatives
strictly above ``t`` is at most the target rate; positives are accepted when
strictly above ``t``.  A target rate of 1 or more accepts everything.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np


class MetricError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NonMatedTrial:
    """One open-set trial: a seeded set of subjects whose gallery entries are withheld."""

    seed: int
    nonmated_subjects: tuple[str, ...]
    gallery_keep: np.ndarray
    mated_probes: np.ndarray
    nonmated_probes: np.ndarray


@dataclass(frozen=True)
class MetricReport:
    rank1: float
    map: float
    tar: float
    far_target: float
    fnir_mean: float
    fnir_std: float
    fpir_target: float
    fnir_trials: tuple[float, ...] = ()

    @property
    def overall(self) -> float:
        return self.rank1 + self.map + self.tar - self.fnir_mean

    def as_dict(self) -> dict:
        out = asdict(self)
        out["fnir_trials"] = list(self.fnir_trials)
        out["overall"] = self.overall
        return out


def _as_labels(labels) -> np.ndarray:
    return np.asarray(labels, dtype=str)


def _check_shapes(scores, query_labels, gallery_labels):
    scores = np.asarray(scores, dtype=np.float64)
    ql, gl = _as_labels(query_labels), _as_labels(gallery_labels)
    if scores.ndim != 2 or scores.shape != (ql.size, gl.size):
        raise MetricError(f"score shape {scores.shape} does not match labels ({ql.size}, {gl.size})")
    return scores, ql, gl


def ranking(scores) -> np.ndarray:
    """Gallery indices per query, best first, ties to the lower index."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), axis=-1, kind="stable")


def relevance(scores, query_labels, gallery_labels) -> np.ndarray:
    """Boolean ``(|Q|, |G|)`` relevance of each ranked position."""
    scores, ql, gl = _check_shapes(scores, query_labels, gallery_labels)
    return gl[ranking(scores)] == ql[:, None]


def rank1_accuracy(scores, query_labels, gallery_labels) -> float:
    """Fraction of mated queries whose top-ranked gallery entry is a mate."""
    rel = relevance(scores, query_labels, gallery_labels)
    mated = rel.any(axis=1)
    if not mated.any():
        raise MetricError("no query has a mate in the gallery")
    return float(rel[mated, 0].mean())


def average_precision_per_query(scores, query_labels, gallery_labels) -> np.ndarray:
    """AP for every query; NaN for queries without a mate.

    Precision terms are summed with ``math.fsum`` so the value is correctly
    rounded and does not depend on summation order.
    """
    rel = relevance(scores, query_labels, gallery_labels)
    out = np.full(rel.shape[0], np.nan)
    for q in range(rel.shape[0]):
        ranks = np.flatnonzero(rel[q]) + 1
        if ranks.size:
            out[q] = math.fsum((np.arange(1, ranks.size + 1) / ranks).tolist()) / ranks.size
    return out


def first_mate_rank(scores, query_labels, gallery_labels) -> np.ndarray:
    """0-based rank of the best-ranked mate per query; ``|G|`` when there is none."""
    rel = relevance(scores, query_labels, gallery_labels)
    return np.where(rel.any(axis=1), rel.argmax(axis=1), rel.shape[1])


def mean_average_precision(scores, query_labels, gallery_labels) -> float:
    ap = average_precision_per_query(scores, query_labels, gallery_labels)
    mated = ~np.isnan(ap)
    if not mated.any():
        raise MetricError("no query has a mate in the gallery")
    return math.fsum(ap[mated].tolist()) / int(mated.sum())


def operating_threshold(negatives, rate: float) -> float:
    """Smallest observed negative ``t`` with ``#(negatives > t) / n <= rate``; ``-inf`` if ``rate >= 1``."""
    neg = np.sort(np.asarray(negatives, dtype=np.float64).ravel())
    if neg.size == 0:
        raise MetricError("no negative scores to calibrate a threshold on")
    if rate >= 1.0:
        return -np.inf
    values = np.unique(neg)
    above = neg.size - np.searchsorted(neg, values, side="right")
    ok = above / neg.size <= rate
    if not ok.any():
        return float(values[-1])
    return float(values[np.argmax(ok)])


def match_nonmatch_split(scores, query_labels, gallery_labels) -> tuple[np.ndarray, np.ndarray]:
    scores, ql, gl = _check_shapes(scores, query_labels, gallery_labels)
    same = ql[:, None] == gl[None, :]
    return scores[same], scores[~same]


def tar_at_far(scores, query_labels, gallery_labels, far_target: float = 0.01) -> float:
    """Verification accept rate of match pairs at the threshold calibrated on non-match pairs."""
    match, nonmatch = match_nonmatch_split(scores, query_labels, gallery_labels)
    if match.size == 0 or nonmatch.size == 0:
        raise MetricError("TAR needs both match and non-match pairs")
    t = operating_threshold(nonmatch, far_target)
    return float(np.count_nonzero(match > t) / match.size)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def build_nonmated_trials(
    query_labels,
    gallery_labels,
    fraction: float = 0.2,
    n_trials: int = 10,
    base_seed: int = 0,
) -> list[NonMatedTrial]:
    """Seeded open-set trials: trial ``i`` withholds a random ``fraction`` of gallery subjects.

    Subjects are drawn without replacement with ``numpy.random.default_rng(base_seed + i)``.
    Queries of withheld subjects, and queries whose subject never appears in the
    gallery, are the non-mated probes.
    """
    if not 0.0 < fraction < 1.0:
        raise MetricError(f"trial fraction must lie in (0, 1), got {fraction}")
    if n_trials < 1:
        raise MetricError("need at least one trial")
    ql, gl = _as_labels(query_labels), _as_labels(gallery_labels)
    subjects = np.unique(gl)
    n_pick = _round_half_up(fraction * subjects.size)
    if n_pick < 1 or n_pick >= subjects.size:
        raise MetricError(
            f"fraction {fraction} of {subjects.size} gallery subjects gives {n_pick} non-mated subjects"
        )
    trials = []
    for i in range(n_trials):
        seed = base_seed + i
        rng = np.random.default_rng(seed)
        picked = np.sort(subjects[rng.choice(subjects.size, size=n_pick, replace=False)])
        keep = ~np.isin(gl, picked)
        present = np.isin(ql, gl[keep])
        absent = ~present
        for arr in (keep, present, absent):
            arr.setflags(write=False)
        trials.append(NonMatedTrial(seed, tuple(picked.tolist()), keep, present, absent))
    return trials


def fnir_at_fpir(scores, query_labels, gallery_labels, trial: NonMatedTrial, fpir_target: float = 0.01) -> float:
    """Open-set miss rate of mated probes at the alarm threshold set on non-mated probes.

    A mated probe is a miss when its top-1 reduced-gallery identity is wrong or
    when its best mate score is not strictly above the threshold.
    """
    scores, ql, gl = _check_shapes(scores, query_labels, gallery_labels)
    keep = trial.gallery_keep
    if keep.shape != gl.shape or trial.mated_probes.shape != ql.shape:
        raise MetricError(
            f"trial was built for {trial.mated_probes.size} queries x {keep.size} gallery entries, "
            f"scores are {scores.shape[0]} x {scores.shape[1]}"
        )
    if not trial.mated_probes.any() or not trial.nonmated_probes.any():
        raise MetricError("trial needs at least one mated and one non-mated probe")
    reduced = scores[:, keep]
    rgl = gl[keep]
    alarms = reduced[trial.nonmated_probes].max(axis=1)
    t = operating_threshold(alarms, fpir_target)

    mated = reduced[trial.mated_probes]
    mql = ql[trial.mated_probes]
    top = mated.argmax(axis=1)
    correct = rgl[top] == mql
    best_mate = np.where(rgl[None, :] == mql[:, None], mated, -np.inf).max(axis=1)
    miss = ~correct | (best_mate <= t)
    return float(miss.mean())


def evaluate_report(
    scores,
    query_labels,
    gallery_labels,
    far_target: float = 0.01,
    fpir_target: float = 0.01,
    trials: Sequence[NonMatedTrial] = (),
) -> MetricReport:
    """All four metrics; FNIR as mean and population std over ``trials`` in the given order."""
    r1 = rank1_accuracy(scores, query_labels, gallery_labels)
    mp = mean_average_precision(scores, query_labels, gallery_labels)
    tar = tar_at_far(scores, query_labels, gallery_labels, far_target)
    if not trials:
        raise MetricError("need at least one non-mated trial for FNIR")
    fnirs = tuple(fnir_at_fpir(scores, query_labels, gallery_labels, t, fpir_target) for t in trials)
    arr = np.array(fnirs)
    return MetricReport(r1, mp, tar, far_target, float(arr.mean()), float(arr.std()), fpir_target, fnirs)
