"""Seeded synthetic score matrices with feature-gated model reliability.

Each model draws match and non-match similarities from truncated normals.  A
model may be *gated* on a binary query feature: when that feature is 0 for a
query, the model's match scores fall back to ``gated_match_mean``/``gated_match_spread``
(by default the non-match distribution, i.e. the model is at chance).  This
mimics, say, a face matcher on queries where the face is not visible.

Scores come from fixed latent uniforms pushed through the truncated-normal
quantile function, so for a given seed raising a model's match mean can only
raise its match scores.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import truncnorm

from .scorespace import Dataset, save_dataset, validate_dataset, write_labels, write_matrix


@dataclass(frozen=True)
class ModelSpec:
    name: str
    match_mean: float = 0.7
    match_spread: float = 0.1
    nonmatch_mean: float = 0.3
    nonmatch_spread: float = 0.1
    gate_feature: int | None = None
    gated_match_mean: float | None = None
    gated_match_spread: float | None = None
    metric: str = "cosine"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    probability: float = 0.5


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 20
    queries_per_subject: int = 2
    gallery_per_subject: int = 2
    models: tuple[ModelSpec, ...] = field(default_factory=lambda: (ModelSpec("model_0"),))
    features: tuple[FeatureSpec, ...] = ()
    score_range: tuple[float, float] = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        problems = []
        for key in ("n_subjects", "queries_per_subject", "gallery_per_subject"):
            if getattr(self, key) < 1:
                problems.append(f"{key} must be >= 1")
        if not self.models:
            problems.append("need at least one model")
        lo, hi = self.score_range
        if not lo < hi:
            problems.append(f"score_range {self.score_range} is empty")
        for m in self.models:
            spreads = [m.match_spread, m.nonmatch_spread]
            if m.gated_match_spread is not None:
                spreads.append(m.gated_match_spread)
            if min(spreads) <= 0:
                problems.append(f"model {m.name}: spreads must be > 0")
            if m.gate_feature is not None and not 0 <= m.gate_feature < len(self.features):
                problems.append(f"model {m.name}: gate_feature {m.gate_feature} out of range")
            if m.metric == "euclidean" and lo <= 0:
                problems.append(f"model {m.name}: euclidean output needs a strictly positive score range")
        for f in self.features:
            if not 0.0 <= f.probability <= 1.0:
                problems.append(f"feature {f.name}: probability must lie in [0, 1]")
        if problems:
            raise ValueError("; ".join(problems))

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthConfig":
        raw = dict(raw)
        raw["models"] = tuple(ModelSpec(**m) for m in raw.get("models", ()))
        raw["features"] = tuple(FeatureSpec(**f) for f in raw.get("features", ()))
        if "score_range" in raw:
            raw["score_range"] = tuple(raw["score_range"])
        return cls(**raw)


def _truncated(u: np.ndarray, mean, spread, lo: float, hi: float) -> np.ndarray:
    a = (lo - mean) / spread
    b = (hi - mean) / spread
    return truncnorm.ppf(u, a, b, loc=mean, scale=spread)


def generate(cfg: SynthConfig) -> Dataset:
    """Draw a :class:`Dataset` from ``cfg``; identical seeds give bit-identical output."""
    rng = np.random.default_rng(cfg.seed)
    subjects = np.array([f"S{i:03d}" for i in range(cfg.n_subjects)])
    gallery_labels = np.repeat(subjects, cfg.gallery_per_subject)
    query_labels = np.repeat(subjects, cfg.queries_per_subject)
    n_q, n_g = query_labels.size, gallery_labels.size

    if cfg.features:
        probs = np.array([f.probability for f in cfg.features])
        features = (rng.random((n_q, len(cfg.features))) < probs).astype(np.float64)
    else:
        features = None

    same = query_labels[:, None] == gallery_labels[None, :]
    lo, hi = cfg.score_range
    # avoid the open-interval endpoints of the quantile function
    tiny = np.finfo(np.float64).eps
    mats = []
    for spec in cfg.models:
        u = np.clip(rng.random((n_q, n_g)), tiny, 1.0 - tiny)
        match_mean = np.full(n_q, spec.match_mean)
        match_spread = np.full(n_q, spec.match_spread)
        if spec.gate_feature is not None:
            off = features[:, spec.gate_feature] == 0
            match_mean[off] = spec.nonmatch_mean if spec.gated_match_mean is None else spec.gated_match_mean
            match_spread[off] = spec.nonmatch_spread if spec.gated_match_spread is None else spec.gated_match_spread
        mean = np.where(same, match_mean[:, None], spec.nonmatch_mean)
        spread = np.where(same, match_spread[:, None], spec.nonmatch_spread)
        mats.append(_truncated(u, mean, spread, lo, hi))

    d = Dataset(
        tuple(m.name for m in cfg.models),
        np.stack(mats),
        query_labels,
        gallery_labels,
        features,
        tuple(m.metric for m in cfg.models),
    )
    validate_dataset(d)
    return d


def write_synthetic(cfg: SynthConfig, directory: str | Path) -> Path:
    """Generate and write in the ingestion format; Euclidean models are stored as distances ``1/s - 1``."""
    d = generate(cfg)
    if all(k == "cosine" for k in d.metric_kinds):
        return save_dataset(d, directory)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    models = []
    for i, (name, kind) in enumerate(zip(d.model_names, d.metric_kinds)):
        fname = f"scores_{i:02d}.csv"
        values = d.scores[i] if kind == "cosine" else 1.0 / d.scores[i] - 1.0
        write_matrix(directory / fname, values)
        models.append({"name": name, "metric": kind, "score_file": fname})
    write_labels(directory / "query_labels.txt", d.query_labels)
    write_labels(directory / "gallery_labels.txt", d.gallery_labels)
    manifest = {"models": models, "query_labels_file": "query_labels.txt", "gallery_labels_file": "gallery_labels.txt"}
    if d.query_features is not None:
        write_matrix(directory / "query_features.csv", d.query_features)
        manifest["query_features_file"] = "query_features.csv"
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def face_body_gait_config(
    n_subjects: int = 40,
    queries_per_subject: int = 3,
    gallery_per_subject: int = 2,
    face_visible_probability: float = 0.5,
    seed: int = 0,
) -> SynthConfig:
    """Three-model pool: a weak gait model, a face model that fails without a visible face, and a body model."""
    return SynthConfig(
        n_subjects=n_subjects,
        queries_per_subject=queries_per_subject,
        gallery_per_subject=gallery_per_subject,
        models=(
            ModelSpec("gait", match_mean=0.55, match_spread=0.20, nonmatch_mean=0.45, nonmatch_spread=0.20),
            ModelSpec("face", match_mean=0.85, match_spread=0.06, nonmatch_mean=0.30, nonmatch_spread=0.08, gate_feature=0),
            ModelSpec("body", match_mean=0.55, match_spread=0.10, nonmatch_mean=0.40, nonmatch_spread=0.08),
        ),
        features=(FeatureSpec("face_visible", face_visible_probability),),
        seed=seed,
    )
