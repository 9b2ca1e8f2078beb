"""``scorefusion`` command-line entry point.

Every subcommand accepts the same flags; flags override the matching field
of the JSON config (or of the built-in default config when ``--config`` is
omitted).  Exit status is 0 on success, 2 for configuration or input errors
and 1 for any other failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..metrics import MetricError
from ..scorespace import DatasetError
from .config import ConfigError, build_config
from .report import summary_table
from .runner import COMMANDS, run_experiment

DEFAULT_CONFIG = {"dataset": {"preset": "face_body_gait"}}

# flag destination -> (config section, key)
OVERRIDES = {
    "k": ("fusion", "k"),
    "method": ("fusion", "method"),
    "anchor": ("fusion", "anchor"),
    "far": ("metrics", "far"),
    "fpir": ("metrics", "fpir"),
    "trials": ("metrics", "n_trials"),
    "trial_fraction": ("metrics", "trial_fraction"),
    "mode": ("grpo", "mode"),
    "steps": ("grpo", "steps"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON); defaults to the built-in synthetic setup")
    common.add_argument("--seed", type=int, help="seed for non-mated trials and policy training (default 0)")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--k", type=int, help="top-k for ACT contributions")
    common.add_argument("--far", type=float, help="false-accept rate target, as a fraction")
    common.add_argument("--fpir", type=float, help="false-positive identification rate target, as a fraction")
    common.add_argument("--trials", type=int, help="number of non-mated trials")
    common.add_argument("--trial-fraction", type=float, help="fraction of gallery subjects removed per trial")
    common.add_argument("--mode", choices=("cot", "da"), help="episode format checked by the format reward")
    common.add_argument("--method", help="fusion method for eval")
    common.add_argument("--models", help="comma-separated model names to fuse")
    common.add_argument("--anchor", help="anchor model name")
    common.add_argument("--steps", type=int, help="GRPO steps for train-policy")
    common.add_argument("--policy", help="saved policy file for eval-policy")

    parser = argparse.ArgumentParser(prog="scorefusion", description="Score fusion experiments.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "generate": "write a synthetic dataset and per-model baselines",
        "eval": "fuse one model selection and evaluate it",
        "compare-fusion": "evaluate ACT against rule-based fusion",
        "sweep-topk": "evaluate ACT over a range of k",
        "grid-search": "evaluate every (subset, anchor) candidate",
        "oracle": "per-query oracle vs grid search vs hard selection",
        "train-policy": "train the selection policy with GRPO",
        "eval-policy": "evaluate a saved selection policy",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def resolve_raw_config(args: argparse.Namespace) -> tuple[dict, Path | None]:
    if args.config:
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"--config: cannot read {path}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--config: {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"--config: {path} must contain a JSON object")
        base = path.parent
    else:
        raw, base = json.loads(json.dumps(DEFAULT_CONFIG)), None
    for dest, (section, key) in OVERRIDES.items():
        value = getattr(args, dest)
        if value is not None:
            raw.setdefault(section, {})[key] = value
    if args.models is not None:
        raw.setdefault("fusion", {})["models"] = [m.strip() for m in args.models.split(",") if m.strip()]
    seed = 0 if args.seed is None else args.seed
    if args.seed is not None or "base_seed" not in raw.get("metrics", {}):
        raw.setdefault("metrics", {})["base_seed"] = seed
    if args.seed is not None or "seed" not in raw.get("grpo", {}):
        raw.setdefault("grpo", {})["seed"] = seed
    if args.out is not None:
        raw["output_dir"] = args.out
    return raw, base


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw, base = resolve_raw_config(args)
        cfg = build_config(raw, base)
        print(f"seeds: {json.dumps(cfg.seeds(), sort_keys=True)}")
        results, written = run_experiment(cfg, args.command, policy_path=args.policy)
    except (ConfigError, DatasetError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any other stage failure still means a nonzero exit
        print(f"error: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(summary_table(results.ordered_rows()))
    for key, value in results.extra.items():
        print(f"{key}: {json.dumps(value, sort_keys=True)}")
    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
