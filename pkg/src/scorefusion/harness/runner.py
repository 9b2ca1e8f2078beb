"""Command pipelines behind the CLI.

Each command turns an :class:`ExperimentConfig` into a :class:`Results`
object plus, for some commands, extra artifacts.  :func:`run_experiment`
writes everything into a staging directory first and only moves files into
the output directory once the whole pipeline succeeded, so a failed run
leaves nothing half-written behind.
"""

from __future__ import annotations

import json
import shutil
import tempfile
from collections import Counter
from pathlib import Path
from typing import Callable

import numpy as np

from ..fusion import FusionConfig, act_fuse_dataset, contribution_tensor, fuse, surrogate_anchor_fuse
from ..metrics import evaluate_report
from ..scorespace import Dataset, SelectionMask
from ..selector import (
    CombinationCandidate,
    Policy,
    evaluate_policy,
    grid_search,
    per_sample_oracle,
    train_policy,
)
from ..synth import write_synthetic
from .config import ConfigError, ExperimentConfig
from .report import Results, ResultRow, emit_report

COMPARE_METHODS = ("act", "min", "max", "zscore", "minmax", "weighted_sum")
COMMANDS = ("generate", "eval", "compare-fusion", "sweep-topk", "grid-search", "oracle", "train-policy", "eval-policy")


class Context:
    """What a pipeline gets: the config, a loaded dataset and a staging directory."""

    def __init__(self, cfg: ExperimentConfig, staging: Path, policy_path: str | None = None):
        self.cfg = cfg
        self.staging = staging
        self.policy_path = policy_path
        self._data: Dataset | None = None
        self._trials = None

    @property
    def data(self) -> Dataset:
        if self._data is None:
            self._data = self.cfg.load("dataset")
        return self._data

    @property
    def trials(self):
        if self._trials is None:
            self._trials = self.cfg.reward_config().trials(self.data)
        return self._trials

    def evaluate(self, fused: np.ndarray):
        m = self.cfg.metrics
        return evaluate_report(fused, self.data.query_labels, self.data.gallery_labels, m.far, m.fpir, self.trials)

    def results(self, command: str, rows, sort_by=None, extra=None) -> Results:
        return Results(command, self.cfg.resolved(), self.cfg.seeds(), list(rows), sort_by, extra or {})


def configured_selection(cfg: ExperimentConfig, d: Dataset) -> tuple[list[int], int]:
    """Model indices and anchor from ``fusion.models``/``fusion.anchor``; default all models, first anchors."""
    names = cfg.fusion.get("models")
    try:
        subset = list(range(d.n_models)) if names is None else [d.model_index(n) for n in names]
        anchor = subset[0] if cfg.fusion.get("anchor") is None else d.model_index(cfg.fusion["anchor"])
    except (KeyError, IndexError, ValueError) as exc:
        raise ConfigError(f"fusion.models: {exc.args[0] if exc.args else exc}") from exc
    if not subset:
        raise ConfigError("fusion.models: empty selection")
    if len(set(subset)) != len(subset):
        raise ConfigError(f"fusion.models: a model appears twice in {names}")
    if anchor not in subset:
        raise ConfigError(f"fusion.anchor: {cfg.fusion['anchor']!r} is not among the selected models")
    return sorted(subset), anchor


def _selection_label(d: Dataset, subset, anchor) -> str:
    return CombinationCandidate(tuple(subset), anchor).describe(d.model_names)


def cmd_generate(ctx: Context) -> Results:
    data_dir = ctx.staging / "data"
    write_synthetic(ctx.cfg.synth_config(), data_dir)
    rows = [
        ResultRow(f"raw:{name}", ctx.evaluate(np.array(ctx.data.scores[m])), {"model": name})
        for m, name in enumerate(ctx.data.model_names)
    ]
    extra = {"manifest": "data/manifest.json", "n_queries": ctx.data.n_queries, "n_gallery": ctx.data.n_gallery}
    return ctx.results("generate", rows, extra=extra)


def cmd_eval(ctx: Context) -> Results:
    d = ctx.data
    subset, anchor = configured_selection(ctx.cfg, d)
    fcfg = ctx.cfg.fusion_config()
    mask = SelectionMask.uniform(d.n_queries, d.n_models, subset, anchor)
    report = ctx.evaluate(fuse(d, mask, fcfg))
    params = {"method": fcfg.method, "k": fcfg.k, "models": [d.model_names[m] for m in subset], "anchor": d.model_names[anchor]}
    return ctx.results("eval", [ResultRow(_selection_label(d, subset, anchor), report, params)])


def cmd_compare_fusion(ctx: Context) -> Results:
    d = ctx.data
    subset, anchor = configured_selection(ctx.cfg, d)
    base = ctx.cfg.fusion_config()
    mask = SelectionMask.uniform(d.n_queries, d.n_models, subset, anchor)
    rows = []
    for method in COMPARE_METHODS:
        fcfg = FusionConfig(method=method, k=base.k, weights=base.weights, sigma_epsilon=base.sigma_epsilon)
        rows.append(ResultRow(method, ctx.evaluate(fuse(d, mask, fcfg)), {"method": method}))
    return ctx.results("compare-fusion", rows, extra={"selection": _selection_label(d, subset, anchor)})


def topk_sweep(ctx: Context) -> list[ResultRow]:
    d = ctx.data
    subset, anchor = configured_selection(ctx.cfg, d)
    mask = SelectionMask.uniform(d.n_queries, d.n_models, subset, anchor)
    eps = ctx.cfg.fusion_config().sigma_epsilon
    return [
        ResultRow(f"k={k}", ctx.evaluate(act_fuse_dataset(d, mask, k, eps)), {"k": k}) for k in ctx.cfg.k_values()
    ]


def argmax_row(rows: list[ResultRow], key: str) -> ResultRow:
    """Best overall; ties go to the smallest value of ``key``."""
    return min(rows, key=lambda r: (-r.report.overall, r.params[key]))


def cmd_sweep_topk(ctx: Context) -> Results:
    rows = topk_sweep(ctx)
    best = argmax_row(rows, "k")
    return ctx.results("sweep-topk", rows, sort_by="k", extra={"argmax_k": best.params["k"], "max_overall": best.report.overall})


def cmd_grid_search(ctx: Context) -> Results:
    d, m = ctx.data, ctx.cfg.metrics
    res = grid_search(d, ctx.cfg.k, m.far, m.fpir, ctx.trials)
    rows = [
        ResultRow(
            c.describe(d.model_names),
            r,
            {"models": [d.model_names[i] for i in c.subset], "anchor": d.model_names[c.anchor]},
        )
        for c, r in res.rows
    ]
    best = {"models": [d.model_names[i] for i in res.best.subset], "anchor": d.model_names[res.best.anchor]}
    return ctx.results("grid-search", rows, extra={"best": best, "best_overall": res.report.overall})


def cmd_oracle(ctx: Context) -> Results:
    d, m, k = ctx.data, ctx.cfg.metrics, ctx.cfg.k
    contrib = contribution_tensor(d, k)
    oracle_mask, chosen = per_sample_oracle(d, k)
    oracle = ctx.evaluate(act_fuse_dataset(d, oracle_mask, k, contributions=contrib))
    grid = grid_search(d, k, m.far, m.fpir, ctx.trials)
    hard = ctx.evaluate(surrogate_anchor_fuse(d, SelectionMask.all_models(d.n_queries, d.n_models), k, contributions=contrib))
    rows = [
        ResultRow("per-sample oracle", oracle, {"strategy": "oracle"}),
        ResultRow(f"grid best: {grid.best.describe(d.model_names)}", grid.report, {"strategy": "grid"}),
        ResultRow("hard selection (surrogate anchor)", hard, {"strategy": "hard"}),
    ]
    usage = Counter(c.describe(d.model_names) for c in chosen)
    return ctx.results("oracle", rows, extra={"oracle_choices": dict(sorted(usage.items()))})


def _policy_rows(ctx: Context, policies: list[tuple[str, Policy]]) -> tuple[list[ResultRow], dict]:
    d, m = ctx.data, ctx.cfg.metrics
    g = ctx.cfg.grpo_config()
    rows, anchors = [], {}
    for label, policy in policies:
        if policy.model_names != d.model_names:
            raise ValueError(f"policy models {list(policy.model_names)} do not match dataset models {list(d.model_names)}")
        report, mask = evaluate_policy(policy, d, ctx.cfg.k, m.far, m.fpir, ctx.trials, g.turn_limit)
        rows.append(ResultRow(label, report, {"policy": label}))
        anchors[label] = {d.model_names[i]: int(n) for i, n in enumerate(np.bincount(mask.anchor, minlength=d.n_models))}
    return rows, {"greedy_anchor_counts": anchors}


def cmd_train_policy(ctx: Context) -> Results:
    train = ctx.cfg.load("train_dataset")
    reward_cfg = ctx.cfg.reward_config()
    gcfg = ctx.cfg.grpo_config()
    diag_path = ctx.staging / "diagnostics.jsonl"
    with diag_path.open("w", encoding="utf-8") as fh:
        def log_step(step: int, diag: dict) -> None:
            fh.write(json.dumps(diag, sort_keys=True) + "\n")

        untrained = Policy.for_features(train.features(), train.model_names)
        trained, _ = train_policy(train, reward_cfg, gcfg, untrained, on_step=log_step)
    trained.save(ctx.staging / "policy.json")
    rows, extra = _policy_rows(ctx, [("untrained", untrained), ("trained", trained)])
    return ctx.results("train-policy", rows, extra={**extra, "policy": "policy.json", "diagnostics": "diagnostics.jsonl"})


def cmd_eval_policy(ctx: Context) -> Results:
    if ctx.policy_path is None:
        raise ConfigError("--policy: eval-policy needs a saved policy file")
    try:
        policy = Policy.load(ctx.policy_path)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"--policy: cannot load {ctx.policy_path}: {exc}") from exc
    rows, extra = _policy_rows(ctx, [("policy", policy)])
    return ctx.results("eval-policy", rows, extra=extra)


PIPELINES: dict[str, Callable[[Context], Results]] = {
    "generate": cmd_generate,
    "eval": cmd_eval,
    "compare-fusion": cmd_compare_fusion,
    "sweep-topk": cmd_sweep_topk,
    "grid-search": cmd_grid_search,
    "oracle": cmd_oracle,
    "train-policy": cmd_train_policy,
    "eval-policy": cmd_eval_policy,
}


def run_experiment(
    cfg: ExperimentConfig, command: str, out_dir: str | Path | None = None, policy_path: str | None = None
) -> tuple[Results, list[Path]]:
    """Run ``command`` and write its report (and artifacts) into ``out_dir``.

    Returns the results and the final paths of every file written.  On any
    error the staging area is deleted and the output directory is untouched.
    """
    if command not in PIPELINES:
        raise ConfigError(f"command: unknown command {command!r}; choose from {COMMANDS}")
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    if not out.is_absolute():
        out = Path.cwd() / out
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out.name}.staging-", dir=out.parent))
    try:
        results = PIPELINES[command](Context(cfg, staging, policy_path))
        emit_report(results, staging)
        out.mkdir(exist_ok=True)
        written = []
        for item in sorted(staging.iterdir()):
            target = out / item.name
            if target.is_dir():
                shutil.rmtree(target)
            item.replace(target)
            written.append(target)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return results, written
