"""Score-matrix data model and on-disk ingestion.

A :class:`Dataset` holds one dense ``|Q| x |G|`` similarity matrix per model,
stacked into a ``(n_models, n_queries, n_gallery)`` float64 array, together
with subject labels for queries and gallery entries and an optional per-query
feature matrix.  Distances are converted to similarities once, at ingestion,
so everything downstream sees "higher is more similar".

On disk a dataset is a JSON manifest::

    {
      "models": [{"name": "face", "metric": "cosine", "score_file": "face.csv"},
                 {"name": "gait", "metric": "euclidean", "score_file": "gait.csv"}],
      "query_labels_file": "query_labels.txt",
      "gallery_labels_file": "gallery_labels.txt",
      "query_features_file": "query_features.csv"
    }

Relative paths resolve against the manifest's directory.  Score files hold one
query per line with ``|G|`` comma-separated decimals; label files hold one
subject id per line; the feature file holds one comma-separated vector per
query.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

METRIC_KINDS = ("cosine", "euclidean")


class DatasetError(ValueError):
    """Raised when a dataset, manifest or score file is malformed.

    ``problems`` lists every violation found, not just the first one.
    """

    def __init__(self, problems: str | Sequence[str]):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def distance_to_similarity(d):
    """Map a Euclidean distance ``d >= 0`` to a similarity ``1 / (1 + d)`` in (0, 1].

    Works elementwise on arrays.  Negative or non-finite input raises ``ValueError``.
    """
    arr = np.asarray(d, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("distance must be finite")
    if np.any(arr < 0):
        raise ValueError("distance must be non-negative")
    out = 1.0 / (1.0 + arr)
    return float(out) if out.ndim == 0 else out


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Per-model query x gallery similarity matrices plus labels.

    Arrays are copied and made read-only on construction.  Construction does not
    check invariants so that a broken dataset can still be inspected; call
    :func:`validate_dataset` (the loaders and the generator always do).
    """

    model_names: tuple[str, ...]
    scores: np.ndarray
    query_labels: np.ndarray
    gallery_labels: np.ndarray
    query_features: np.ndarray | None = None
    metric_kinds: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "model_names", tuple(str(n) for n in self.model_names))
        object.__setattr__(self, "scores", _frozen(np.asarray(self.scores, dtype=np.float64)))
        object.__setattr__(self, "query_labels", _frozen(np.asarray(self.query_labels, dtype=str)))
        object.__setattr__(self, "gallery_labels", _frozen(np.asarray(self.gallery_labels, dtype=str)))
        if self.query_features is not None:
            feats = np.asarray(self.query_features, dtype=np.float64)
            if feats.ndim == 1:
                feats = feats[:, None]
            object.__setattr__(self, "query_features", _frozen(feats))
        kinds = tuple(self.metric_kinds) or ("cosine",) * len(self.model_names)
        object.__setattr__(self, "metric_kinds", kinds)

    @property
    def n_models(self) -> int:
        return self.scores.shape[0]

    @property
    def n_queries(self) -> int:
        return self.scores.shape[1]

    @property
    def n_gallery(self) -> int:
        return self.scores.shape[2]

    @property
    def feature_dim(self) -> int:
        return 0 if self.query_features is None else self.query_features.shape[1]

    def model_index(self, name_or_index: str | int) -> int:
        if isinstance(name_or_index, (int, np.integer)):
            if not 0 <= int(name_or_index) < self.n_models:
                raise KeyError(f"model index {name_or_index} out of range")
            return int(name_or_index)
        try:
            return self.model_names.index(name_or_index)
        except ValueError:
            if str(name_or_index).isdigit():
                return self.model_index(int(name_or_index))
            raise KeyError(f"unknown model {name_or_index!r}; have {list(self.model_names)}") from None

    def features(self) -> np.ndarray:
        """Query features, or an empty ``(|Q|, 0)`` matrix when absent."""
        if self.query_features is None:
            return np.zeros((self.n_queries, 0))
        return self.query_features

    def permute_gallery(self, perm: Sequence[int]) -> "Dataset":
        perm = np.asarray(perm)
        return Dataset(
            self.model_names,
            self.scores[:, :, perm],
            self.query_labels,
            self.gallery_labels[perm],
            self.query_features,
            self.metric_kinds,
        )

    def select_queries(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            self.model_names,
            self.scores[:, index, :],
            self.query_labels[index],
            self.gallery_labels,
            None if self.query_features is None else self.query_features[index],
            self.metric_kinds,
        )


def validate_dataset(d: Dataset) -> None:
    """Check every :class:`Dataset` invariant, raising :class:`DatasetError` listing all violations."""
    problems = []
    if d.scores.ndim != 3:
        raise DatasetError(f"scores must be 3-D (models, queries, gallery), got shape {d.scores.shape}")
    n_models, n_q, n_g = d.scores.shape
    if len(d.model_names) != n_models:
        problems.append(f"{len(d.model_names)} model names for {n_models} score matrices")
    if len(set(d.model_names)) != len(d.model_names):
        problems.append("model names must be unique")
    if len(d.metric_kinds) != len(d.model_names):
        problems.append(f"{len(d.metric_kinds)} metric kinds for {len(d.model_names)} models")
    for kind in d.metric_kinds:
        if kind not in METRIC_KINDS:
            problems.append(f"unknown metric kind {kind!r}")
    if n_models == 0 or n_q == 0 or n_g == 0:
        problems.append(f"empty score array of shape {d.scores.shape}")
    if d.query_labels.shape != (n_q,):
        problems.append(f"query label count {d.query_labels.size} != |Q| = {n_q}")
    if d.gallery_labels.shape != (n_g,):
        problems.append(f"gallery label count {d.gallery_labels.size} != |G| = {n_g}")
    bad = np.argwhere(~np.isfinite(d.scores))
    for m, q, g in bad[:10]:
        problems.append(f"non-finite score at (model={d.model_names[m] if m < len(d.model_names) else m}, q={q}, g={g})")
    if len(bad) > 10:
        problems.append(f"... {len(bad) - 10} more non-finite scores")
    if d.query_features is not None:
        if d.query_features.shape[0] != n_q:
            problems.append(f"query feature rows {d.query_features.shape[0]} != |Q| = {n_q}")
        bad_f = np.argwhere(~np.isfinite(d.query_features))
        for q, j in bad_f[:10]:
            problems.append(f"non-finite feature at (q={q}, dim={j})")
    if problems:
        raise DatasetError(problems)


@dataclass(frozen=True, eq=False)
class SelectionMask:
    """Per-query model selection: a ``(|Q|, |M|)`` boolean mask and an anchor model per query."""

    mask: np.ndarray
    anchor: np.ndarray

    def __post_init__(self):
        mask = _frozen(np.asarray(self.mask, dtype=bool))
        anchor = _frozen(np.asarray(self.anchor, dtype=np.int64))
        if mask.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
        if anchor.shape != (mask.shape[0],):
            raise ValueError(f"anchor shape {anchor.shape} does not match {mask.shape[0]} queries")
        if np.any((anchor < 0) | (anchor >= mask.shape[1])):
            raise ValueError("anchor index out of range")
        rows = np.arange(mask.shape[0])
        missing = np.flatnonzero(~mask[rows, anchor])
        if missing.size:
            raise ValueError(f"anchor model not selected for queries {missing[:10].tolist()}")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "anchor", anchor)

    @property
    def n_queries(self) -> int:
        return self.mask.shape[0]

    @property
    def n_models(self) -> int:
        return self.mask.shape[1]

    @classmethod
    def uniform(cls, n_queries: int, n_models: int, subset: Sequence[int], anchor: int) -> "SelectionMask":
        """The same (subset, anchor) for every query."""
        row = np.zeros(n_models, dtype=bool)
        row[list(subset)] = True
        if not row[anchor]:
            raise ValueError(f"anchor {anchor} not in subset {list(subset)}")
        return cls(np.tile(row, (n_queries, 1)), np.full(n_queries, anchor))

    @classmethod
    def all_models(cls, n_queries: int, n_models: int, anchor: int = 0) -> "SelectionMask":
        return cls.uniform(n_queries, n_models, range(n_models), anchor)

    def check_against(self, d: Dataset) -> None:
        if self.mask.shape != (d.n_queries, d.n_models):
            raise ValueError(f"mask shape {self.mask.shape} != (|Q|, |M|) = {(d.n_queries, d.n_models)}")


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _read_lines(path: Path) -> list[str]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc.strerror or exc}") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [ln.rstrip("\r") for ln in lines]


def read_matrix(path: str | Path, n_cols: int | None = None) -> np.ndarray:
    """Parse a dense comma-separated matrix; errors name the file and 1-based line."""
    path = Path(path)
    rows = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        try:
            row = [float(tok) for tok in line.split(",")]
        except ValueError:
            raise DatasetError(f"{path}: line {lineno}: cannot parse {line[:60]!r} as comma-separated numbers") from None
        if not all(math.isfinite(v) for v in row):
            raise DatasetError(f"{path}: line {lineno}: non-finite value")
        if n_cols is None:
            n_cols = len(row)
        if len(row) != n_cols:
            raise DatasetError(f"{path}: line {lineno}: {len(row)} values, expected {n_cols}")
        rows.append(row)
    if not rows:
        raise DatasetError(f"{path}: empty matrix file")
    return np.array(rows, dtype=np.float64)


def write_matrix(path: str | Path, matrix: np.ndarray) -> None:
    """Write a matrix with shortest round-trip float formatting (reloads bit-exactly)."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in matrix:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_labels(path: str | Path) -> np.ndarray:
    path = Path(path)
    labels = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        label = line.strip()
        if not label:
            raise DatasetError(f"{path}: line {lineno}: empty subject id")
        labels.append(label)
    return np.array(labels, dtype=str)


def write_labels(path: str | Path, labels: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for label in labels:
            fh.write(f"{label}\n")


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Load a dataset from a JSON manifest, converting Euclidean models to similarities."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {manifest_path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{manifest_path}: invalid JSON: {exc}") from exc
    base = manifest_path.parent

    def resolve(p: str) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base / p

    for key in ("models", "query_labels_file", "gallery_labels_file"):
        if key not in manifest:
            raise DatasetError(f"{manifest_path}: missing field {key!r}")
    if not manifest["models"]:
        raise DatasetError(f"{manifest_path}: no models listed")

    query_labels = read_labels(resolve(manifest["query_labels_file"]))
    gallery_labels = read_labels(resolve(manifest["gallery_labels_file"]))

    names, kinds, mats = [], [], []
    for i, entry in enumerate(manifest["models"]):
        for key in ("name", "metric", "score_file"):
            if key not in entry:
                raise DatasetError(f"{manifest_path}: models[{i}] missing field {key!r}")
        metric = entry["metric"]
        if metric not in METRIC_KINDS:
            raise DatasetError(f"{manifest_path}: models[{i}] ({entry['name']}): unknown metric {metric!r}")
        score_path = resolve(entry["score_file"])
        mat = read_matrix(score_path, n_cols=len(gallery_labels))
        if mat.shape[0] != len(query_labels):
            raise DatasetError(f"{score_path}: {mat.shape[0]} rows but query label count is {len(query_labels)}")
        if metric == "euclidean":
            neg = np.argwhere(mat < 0)
            if neg.size:
                q, g = neg[0]
                raise DatasetError(f"{score_path}: line {q + 1}: negative distance at column {g + 1}")
            mat = distance_to_similarity(mat)
        names.append(entry["name"])
        kinds.append(entry.get("source_metric", metric))
        mats.append(mat)

    shapes = {m.shape for m in mats}
    if len(shapes) != 1:
        raise DatasetError(f"{manifest_path}: score matrices disagree in shape: {sorted(shapes)}")

    features = None
    if manifest.get("query_features_file"):
        features = read_matrix(resolve(manifest["query_features_file"]))
        if features.shape[0] != len(query_labels):
            raise DatasetError(
                f"{manifest['query_features_file']}: {features.shape[0]} feature rows but |Q| = {len(query_labels)}"
            )

    d = Dataset(tuple(names), np.stack(mats), query_labels, gallery_labels, features, tuple(kinds))
    validate_dataset(d)
    return d


def save_dataset(d: Dataset, directory: str | Path, manifest_name: str = "manifest.json") -> Path:
    """Write ``d`` as a manifest plus score/label/feature files; returns the manifest path.

    Scores are written as similarities (metric ``cosine``) so that reloading is
    bit-exact; the original metric kind is kept under ``source_metric``.
    """
    validate_dataset(d)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    models = []
    for i, name in enumerate(d.model_names):
        fname = f"scores_{i:02d}.csv"
        write_matrix(directory / fname, d.scores[i])
        entry = {"name": name, "metric": "cosine", "score_file": fname}
        if d.metric_kinds[i] != "cosine":
            entry["source_metric"] = d.metric_kinds[i]
        models.append(entry)
    write_labels(directory / "query_labels.txt", d.query_labels)
    write_labels(directory / "gallery_labels.txt", d.gallery_labels)
    manifest = {
        "models": models,
        "query_labels_file": "query_labels.txt",
        "gallery_labels_file": "gallery_labels.txt",
    }
    if d.query_features is not None:
        write_matrix(directory / "query_features.csv", d.query_features)
        manifest["query_features_file"] = "query_features.csv"
    path = directory / manifest_name
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path
