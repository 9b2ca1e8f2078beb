"""Experiment configuration: a JSON document resolved into typed sections.

Example::

    {
      "dataset": {"preset": "face_body_gait", "seed": 1},
      "train_dataset": {"preset": "face_body_gait", "seed": 0},
      "fusion": {"method": "act", "k": 10, "models": ["face", "body"], "anchor": "face"},
      "metrics": {"far": 0.01, "fpir": 0.01, "trial_fraction": 0.2, "n_trials": 10, "base_seed": 0},
      "reward": {"gamma": 0.8, "bernoulli_p": 0.5},
      "grpo": {"steps": 200, "group_size": 6, "beta": 0.04},
      "sweep": {"k_values": [1, 5, 10, 20, 40]},
      "output_dir": "runs/demo"
    }

A dataset section is one of ``{"manifest": path}``, ``{"synth": {...}}`` or
``{"preset": name, ...keyword arguments}``.  Relative manifest paths resolve
against the config file's directory.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from ..fusion import FUSION_METHODS, FusionConfig
from ..reward import RewardConfig
from ..scorespace import Dataset, load_dataset
from ..selector.grpo import GrpoConfig
from ..synth import SynthConfig, face_body_gait_config, generate

PRESETS = {"face_body_gait": face_body_gait_config}
DEFAULT_K_VALUES = (1, 5, 10, 20, 40)


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


@dataclass(frozen=True)
class MetricTargets:
    far: float = 0.01
    fpir: float = 0.01
    trial_fraction: float = 0.2
    n_trials: int = 10
    base_seed: int = 0


@dataclass
class ExperimentConfig:
    dataset: dict
    train_dataset: dict | None = None
    fusion: dict = field(default_factory=dict)
    metrics: MetricTargets = field(default_factory=MetricTargets)
    reward: dict = field(default_factory=dict)
    grpo: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    output_dir: str = "out"
    base_dir: Path = field(default_factory=Path.cwd, repr=False)

    # --- typed views -------------------------------------------------------

    def fusion_config(self) -> FusionConfig:
        raw = {k: v for k, v in self.fusion.items() if k in ("method", "k", "weights", "sigma_epsilon")}
        return FusionConfig(**raw)

    @property
    def k(self) -> int:
        return self.fusion_config().k

    def reward_config(self) -> RewardConfig:
        m = self.metrics
        return RewardConfig(
            **self.reward,
            k=self.k,
            far=m.far,
            fpir=m.fpir,
            trial_fraction=m.trial_fraction,
            n_trials=m.n_trials,
            base_seed=m.base_seed,
        )

    def grpo_config(self) -> GrpoConfig:
        return GrpoConfig(**self.grpo)

    def k_values(self) -> list[int]:
        return sorted(int(k) for k in self.sweep.get("k_values", DEFAULT_K_VALUES))

    def load(self, which: str = "dataset") -> Dataset:
        section = self.dataset if which == "dataset" or self.train_dataset is None else self.train_dataset
        return resolve_dataset(section, self.base_dir, which)

    def synth_config(self) -> SynthConfig:
        return synth_config_from(self.dataset, "dataset")

    def resolved(self) -> dict:
        """Fully expanded configuration with every default filled in, for reports."""
        out = {
            "dataset": self._resolved_dataset(self.dataset),
            "train_dataset": None if self.train_dataset is None else self._resolved_dataset(self.train_dataset),
            "fusion": {**asdict(self.fusion_config()), **_selection_fields(self.fusion)},
            "metrics": asdict(self.metrics),
            "reward": asdict(self.reward_config()),
            "grpo": asdict(self.grpo_config()),
            "sweep": {"k_values": self.k_values()},
            "output_dir": self.output_dir,
        }
        if out["fusion"]["weights"] is not None:
            out["fusion"]["weights"] = list(out["fusion"]["weights"])
        return out

    def seeds(self) -> dict:
        out = {"metrics.base_seed": self.metrics.base_seed, "grpo.seed": self.grpo_config().seed}
        if "manifest" not in self.dataset:
            out["dataset.seed"] = synth_config_from(self.dataset, "dataset").seed
        if self.train_dataset is not None and "manifest" not in self.train_dataset:
            out["train_dataset.seed"] = synth_config_from(self.train_dataset, "train_dataset").seed
        return out

    def _resolved_dataset(self, section: dict) -> dict:
        if "manifest" in section:
            return {"manifest": section["manifest"]}
        return {"synth": _jsonable(asdict(synth_config_from(section, "dataset")))}


def _selection_fields(fusion: dict) -> dict:
    return {"models": fusion.get("models"), "anchor": fusion.get("anchor")}


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def synth_config_from(section: dict, path: str) -> SynthConfig:
    try:
        if "synth" in section:
            return SynthConfig.from_dict(section["synth"])
        if "preset" in section:
            kwargs = {k: v for k, v in section.items() if k != "preset"}
            if section["preset"] not in PRESETS:
                raise ConfigError(f"{path}.preset: unknown preset {section['preset']!r}; have {sorted(PRESETS)}")
            return PRESETS[section["preset"]](**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(f"{path}: expected one of 'manifest', 'synth' or 'preset'")


def resolve_dataset(section: dict, base_dir: Path, path: str = "dataset") -> Dataset:
    if "manifest" in section:
        manifest = Path(section["manifest"])
        if not manifest.is_absolute():
            manifest = base_dir / manifest
        return load_dataset(manifest)
    return generate(synth_config_from(section, path))


def _check_fraction(path: str, value, allow_one: bool = True) -> None:
    ok = isinstance(value, (int, float)) and (0 < value <= 1 if allow_one else 0 < value < 1)
    if not ok:
        raise ConfigError(f"{path}: must lie in {'(0, 1]' if allow_one else '(0, 1)'}, got {value!r}")


def build_config(raw: dict, base_dir: str | Path | None = None) -> ExperimentConfig:
    """Validate a raw config dict, reporting problems by field path."""
    raw = copy.deepcopy(raw)
    known = {f.name for f in fields(ExperimentConfig)} - {"base_dir"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{key}: unknown top-level field")
    if "dataset" not in raw or not isinstance(raw["dataset"], dict):
        raise ConfigError("dataset: required section is missing")

    metrics_raw = raw.get("metrics", {})
    known_m = {f.name for f in fields(MetricTargets)}
    for key in metrics_raw:
        if key not in known_m:
            raise ConfigError(f"metrics.{key}: unknown field")
    metrics = MetricTargets(**metrics_raw)
    _check_fraction("metrics.far", metrics.far)
    _check_fraction("metrics.fpir", metrics.fpir)
    _check_fraction("metrics.trial_fraction", metrics.trial_fraction, allow_one=False)
    if not isinstance(metrics.n_trials, int) or metrics.n_trials < 1:
        raise ConfigError(f"metrics.n_trials: must be a positive integer, got {metrics.n_trials!r}")

    cfg = ExperimentConfig(
        dataset=raw["dataset"],
        train_dataset=raw.get("train_dataset"),
        fusion=raw.get("fusion", {}),
        metrics=metrics,
        reward=raw.get("reward", {}),
        grpo=raw.get("grpo", {}),
        sweep=raw.get("sweep", {}),
        output_dir=str(raw.get("output_dir", "out")),
        base_dir=Path(base_dir) if base_dir is not None else Path.cwd(),
    )

    for path, section in (("dataset", cfg.dataset), ("train_dataset", cfg.train_dataset)):
        if section is None:
            continue
        if "manifest" in section:
            manifest = Path(section["manifest"])
            if not manifest.is_absolute():
                manifest = cfg.base_dir / manifest
            if not manifest.exists():
                raise ConfigError(f"{path}.manifest: file not found: {manifest}")
        else:
            synth_config_from(section, path)

    for key in cfg.fusion:
        if key not in ("method", "k", "weights", "sigma_epsilon", "models", "anchor"):
            raise ConfigError(f"fusion.{key}: unknown field")
    method = cfg.fusion.get("method", "act")
    if method not in FUSION_METHODS:
        raise ConfigError(f"fusion.method: unknown method {method!r}; choose from {FUSION_METHODS}")
    _construct("fusion", cfg.fusion_config)
    for key in ("k", "far", "fpir", "trial_fraction", "n_trials", "base_seed"):
        if key in cfg.reward:
            raise ConfigError(f"reward.{key}: set this under fusion/metrics instead")
    _construct("reward", cfg.reward_config)
    _construct("grpo", cfg.grpo_config)
    for key in cfg.sweep:
        if key != "k_values":
            raise ConfigError(f"sweep.{key}: unknown field")
    try:
        ks = cfg.k_values()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sweep.k_values: {exc}") from exc
    if not ks or min(ks) < 0:
        raise ConfigError("sweep.k_values: need at least one non-negative k")
    return cfg


def _construct(path: str, factory) -> None:
    try:
        factory()
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return build_config(raw, path.parent)
