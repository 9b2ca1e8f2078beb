import csv
import json

import pytest

from scorefusion.harness import ConfigError, build_config, run_experiment
from scorefusion.harness import runner as runner_mod
from scorefusion.harness.cli import main
from scorefusion.harness.report import Results, ResultRow, emit_report, render_csv
from scorefusion.metrics import MetricReport

SMALL = {"dataset": {"preset": "face_body_gait", "n_subjects": 12, "queries_per_subject": 2}, "metrics": {"n_trials": 3}}


def report(x):
    return MetricReport(x, x, x, 0.01, 1 - x, 0.0, 0.01, (1 - x,))


def run_cli(tmp_path, *args, config=SMALL):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(config))
    return main([*args, "--config", str(cfg_path)])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- config -------------------------------------------------------------------

@pytest.mark.parametrize(
    "raw, path",
    [
        ({}, "dataset"),
        ({"dataset": {"preset": "nope"}}, "dataset.preset"),
        ({"dataset": {"manifest": "missing.json"}}, "dataset.manifest"),
        ({**SMALL, "metrics": {"far": 0}}, "metrics.far"),
        ({**SMALL, "metrics": {"fpir": 1.5}}, "metrics.fpir"),
        ({**SMALL, "metrics": {"trial_fraction": 1.0}}, "metrics.trial_fraction"),
        ({**SMALL, "metrics": {"n_trials": 0}}, "metrics.n_trials"),
        ({**SMALL, "metrics": {"colour": 1}}, "metrics.colour"),
        ({**SMALL, "fusion": {"method": "median"}}, "fusion.method"),
        ({**SMALL, "fusion": {"k": -2}}, "fusion"),
        ({**SMALL, "reward": {"gamma": 2}}, "reward"),
        ({**SMALL, "reward": {"k": 3}}, "reward.k"),
        ({**SMALL, "grpo": {"group_size": 1}}, "grpo"),
        ({**SMALL, "sweep": {"k_values": []}}, "sweep.k_values"),
        ({**SMALL, "extra": 1}, "extra"),
    ],
)
def test_config_errors_name_the_field(tmp_path, raw, path):
    with pytest.raises(ConfigError) as info:
        build_config(raw, tmp_path)
    assert str(info.value).startswith(path)


def test_resolved_config_has_every_default():
    cfg = build_config(SMALL)
    resolved = cfg.resolved()
    assert resolved["fusion"]["k"] == 10 and resolved["reward"]["gamma"] == 0.8
    assert resolved["grpo"]["beta"] == 0.04 and resolved["metrics"]["trial_fraction"] == 0.2
    assert resolved["dataset"]["synth"]["n_subjects"] == 12
    assert cfg.seeds() == {"metrics.base_seed": 0, "grpo.seed": 0, "dataset.seed": 0}
    # reward uses the single k/targets from fusion and metrics
    assert cfg.reward_config().k == cfg.k and cfg.reward_config().n_trials == 3


# --- report ---------------------------------------------------------------------

def test_one_report_one_row():
    res = Results("eval", {}, {}, [ResultRow("x", report(0.5))])
    lines = render_csv(res).splitlines()
    assert lines[0] == "label,rank1,map,tar,fnir_mean,fnir_std,overall"
    assert lines[1] == "x,0.500000,0.500000,0.500000,0.500000,0.000000,1.000000"


def test_sweep_rows_are_sorted(tmp_path):
    rows = [ResultRow(f"k={k}", report(k / 100), {"k": k}) for k in (40, 1, 20, 5, 10)]
    res = Results("sweep-topk", {}, {}, rows, sort_by="k")
    emit_report(res, tmp_path)
    assert [int(r["k"]) for r in read_csv(tmp_path / "report.csv")] == [1, 5, 10, 20, 40]
    doc = json.loads((tmp_path / "report.json").read_text())
    assert [r["params"]["k"] for r in doc["rows"]] == [1, 5, 10, 20, 40]


def test_reemit_is_byte_identical(tmp_path):
    res = Results("eval", {"a": 1}, {"s": 0}, [ResultRow("x", report(0.25), {"k": 3})])
    emit_report(res, tmp_path / "a")
    emit_report(res, tmp_path / "b")
    for name in ("report.json", "report.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_empty_results_rejected(tmp_path):
    with pytest.raises(ValueError):
        emit_report(Results("eval", {}, {}, []), tmp_path)


# --- CLI / runner ------------------------------------------------------------------

def test_compare_fusion_has_one_row_per_method(tmp_path):
    assert run_cli(tmp_path, "compare-fusion", "--out", str(tmp_path / "o")) == 0
    rows = read_csv(tmp_path / "o" / "report.csv")
    assert [r["method"] for r in rows] == ["act", "min", "max", "zscore", "minmax", "weighted_sum"]


def test_sweep_topk_five_rows_and_stable(tmp_path, capsys):
    for name in ("a", "b"):
        assert run_cli(tmp_path, "sweep-topk", "--out", str(tmp_path / "runs" / name)) == 0
    rows = read_csv(tmp_path / "runs" / "a" / "report.csv")
    assert [int(r["k"]) for r in rows] == [1, 5, 10, 20, 40]
    a = json.loads((tmp_path / "runs" / "a" / "report.json").read_text())
    b = json.loads((tmp_path / "runs" / "b" / "report.json").read_text())
    a["config"].pop("output_dir"), b["config"].pop("output_dir")
    assert a == b
    assert (tmp_path / "runs" / "a" / "report.csv").read_bytes() == (tmp_path / "runs" / "b" / "report.csv").read_bytes()
    assert a["extra"]["argmax_k"] in (1, 5, 10, 20, 40)
    assert "seeds:" in capsys.readouterr().out


def test_rerun_same_config_is_bit_identical(tmp_path):
    out = str(tmp_path / "o")
    assert run_cli(tmp_path, "grid-search", "--out", out) == 0
    first = {p.name: p.read_bytes() for p in (tmp_path / "o").iterdir()}
    assert run_cli(tmp_path, "grid-search", "--out", out) == 0
    assert first == {p.name: p.read_bytes() for p in (tmp_path / "o").iterdir()}


def test_grid_search_then_eval_gives_the_same_report(tmp_path):
    assert run_cli(tmp_path, "grid-search", "--out", str(tmp_path / "g")) == 0
    grid = json.loads((tmp_path / "g" / "report.json").read_text())
    best = grid["extra"]["best"]
    row = next(r for r in grid["rows"] if r["params"] == best)
    assert run_cli(
        tmp_path, "eval", "--models", ",".join(best["models"]), "--anchor", best["anchor"], "--out", str(tmp_path / "e")
    ) == 0
    ev = json.loads((tmp_path / "e" / "report.json").read_text())
    assert ev["rows"][0]["report"] == row["report"]


def test_report_embeds_config_and_seeds(tmp_path):
    assert run_cli(tmp_path, "eval", "--seed", "4", "--k", "3", "--far", "0.05", "--out", str(tmp_path / "o")) == 0
    doc = json.loads((tmp_path / "o" / "report.json").read_text())
    assert doc["seeds"]["metrics.base_seed"] == 4 and doc["seeds"]["grpo.seed"] == 4
    assert doc["config"]["fusion"]["k"] == 3 and doc["config"]["metrics"]["far"] == 0.05
    assert doc["rows"][0]["report"]["far_target"] == 0.05


def test_generate_writes_a_loadable_dataset(tmp_path):
    assert run_cli(tmp_path, "generate", "--out", str(tmp_path / "o")) == 0
    manifest = tmp_path / "o" / "data" / "manifest.json"
    assert manifest.exists()
    cfg = {"dataset": {"manifest": str(manifest)}, "metrics": {"n_trials": 3}}
    assert run_cli(tmp_path, "eval", "--out", str(tmp_path / "e"), config=cfg) == 0
    assert run_cli(tmp_path, "eval", "--out", str(tmp_path / "e2")) == 0
    a = json.loads((tmp_path / "e" / "report.json").read_text())["rows"][0]["metrics"]
    b = json.loads((tmp_path / "e2" / "report.json").read_text())["rows"][0]["metrics"]
    assert a == b


def test_oracle_command_orders_strategies(tmp_path):
    assert run_cli(tmp_path, "oracle", "--out", str(tmp_path / "o")) == 0
    rows = read_csv(tmp_path / "o" / "report.csv")
    assert [r["strategy"] for r in rows] == ["oracle", "grid", "hard"]


def test_train_then_eval_policy(tmp_path):
    out = tmp_path / "t"
    assert run_cli(tmp_path, "train-policy", "--steps", "2", "--mode", "da", "--out", str(out)) == 0
    assert len((out / "diagnostics.jsonl").read_text().splitlines()) == 2
    trained = read_csv(out / "report.csv")[1]
    assert run_cli(tmp_path, "eval-policy", "--policy", str(out / "policy.json"), "--out", str(tmp_path / "e")) == 0
    again = read_csv(tmp_path / "e" / "report.csv")[0]
    assert {k: again[k] for k in ("rank1", "map", "overall")} == {k: trained[k] for k in ("rank1", "map", "overall")}


def test_config_error_exit_code_and_no_output(tmp_path, capsys):
    assert run_cli(tmp_path, "eval", "--far", "1.5", "--out", str(tmp_path / "o")) == 2
    assert "metrics.far" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()
    assert run_cli(tmp_path, "eval", "--models", "face,nose", "--out", str(tmp_path / "o")) == 2
    assert run_cli(tmp_path, "eval-policy", "--out", str(tmp_path / "o")) == 2
    assert not (tmp_path / "o").exists()


def test_failed_stage_removes_partial_output(tmp_path, monkeypatch):
    def boom(results, out_dir):
        (out_dir / "report.json").write_text("partial")
        raise OSError("disk full")

    monkeypatch.setattr(runner_mod, "emit_report", boom)
    assert run_cli(tmp_path, "eval", "--out", str(tmp_path / "o")) == 1
    assert not (tmp_path / "o").exists()
    assert not any(p.name.startswith(".o.staging") for p in tmp_path.iterdir())


def test_train_policy_failure_leaves_nothing(tmp_path, monkeypatch):
    def bad_train(*args, **kwargs):
        raise FloatingPointError("non-finite policy gradient")

    monkeypatch.setattr(runner_mod, "train_policy", bad_train)
    cfg = build_config({**SMALL, "grpo": {"steps": 1}})
    with pytest.raises(FloatingPointError):
        run_experiment(cfg, "train-policy", tmp_path / "o")
    assert list(tmp_path.iterdir()) == []


def test_unknown_command_rejected(tmp_path):
    with pytest.raises(ConfigError, match="command"):
        run_experiment(build_config(SMALL), "dance", tmp_path / "o")
    with pytest.raises(SystemExit):
        main(["dance"])
