"""Acceptance suite: one test per criterion, each timed against its budget.

Run with ``pytest tests/test_acceptance.py`` (or ``python tests/test_acceptance.py``);
the terminal summary prints one PASS/FAIL line per criterion.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest

import oracles
from scorefusion.fusion import act_fuse_dataset, act_fuse_query, baseline_fuse, surrogate_anchor_fuse
from scorefusion.harness import build_config, run_experiment
from scorefusion.metrics import (
    MetricError,
    build_nonmated_trials,
    evaluate_report,
    fnir_at_fpir,
    mean_average_precision,
    rank1_accuracy,
    tar_at_far,
)
from scorefusion.reward import (
    RewardConfig,
    ToolCall,
    TrajectoryTranscript,
    Turn,
    accuracy_reward,
    augment_selection_mask,
    format_reward,
    metric_based_reward,
    reward_breakdown,
    tool_success_reward,
)
from scorefusion.scorespace import SelectionMask
from scorefusion.selector import Policy, grid_search, group_advantages, per_sample_oracle, train_policy
from scorefusion.selector.grpo import Group, GrpoConfig, evaluate_policy, greedy_mask
from scorefusion.selector.policy import sample_selection
from scorefusion.selector.grpo import surrogate_objective
from scorefusion.synth import ModelSpec, SynthConfig, face_body_gait_config, generate


class Timer:
    def __init__(self, budget):
        self.budget = budget

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start

    def check(self):
        assert self.elapsed < self.budget, f"took {self.elapsed:.2f}s, budget {self.budget}s"


def small_instance(rng, max_size=30):
    n_subj = int(rng.integers(3, 9))
    n_q = int(rng.integers(2, max_size + 1))
    n_g = int(rng.integers(n_subj, max_size + 1))
    gl = [f"s{i % n_subj}" for i in range(n_g)]
    rng.shuffle(gl)
    ql = [f"s{int(rng.integers(0, n_subj + 2))}" for _ in range(n_q)]
    if not set(ql) & set(gl):
        ql[0] = gl[0]
    scores = rng.random((n_q, n_g))
    if rng.random() < 0.5:
        scores = np.round(scores * 5) / 5  # plenty of ties
    return scores, ql, gl


def margins(fused, same):
    """Per-query margin (best mate minus best non-mate) and the pooled d-prime."""
    mate = np.where(same, fused, -np.inf).max(axis=1)
    other = np.where(same, -np.inf, fused).max(axis=1)
    match, nonmatch = fused[same], fused[~same]
    dprime = (match.mean() - nonmatch.mean()) / np.sqrt((match.var() + nonmatch.var()) / 2)
    return float((mate - other).mean()), float(dprime)


@pytest.mark.criterion(1, "ACT closed forms and worked example")
def test_criterion_01_act_closed_forms(record_property):
    s = [0.9, 0.1, 0.5]
    with Timer(1.0) as t:
        assert np.allclose(act_fuse_query([s], 0, 0), np.array(s) / 2, atol=1e-12)
        for k in (0, 1, 2, 3, 10):
            assert np.allclose(act_fuse_query([[0.4] * 3], 0, k), [0.2] * 3, atol=1e-12)
        pair = [[0.9, 0.1, 0.5], [0.2, 0.8, 0.5]]
        expected = oracles.act(pair, 0, 1)
        got = act_fuse_query(pair, 0, 1)
        err = float(np.max(np.abs(got - expected)))
        assert err <= 1e-12
        assert np.allclose(got, [0.6674, 0.3599, 0.1667], atol=1e-4)
    t.check()
    record_property("detail", f"two-model max error {err:.1e}")


@pytest.mark.criterion(2, "ACT widens the match/non-match margin (3 models, anchor FR, k=1)")
def test_criterion_02_margin_structure(record_property):
    with Timer(1.0) as t:
        d = generate(
            SynthConfig(
                n_subjects=20,
                queries_per_subject=2,
                gallery_per_subject=1,
                models=(
                    ModelSpec("fr", 0.85, 0.05, 0.3, 0.05),
                    ModelSpec("body", 0.6, 0.1, 0.4, 0.1),
                    ModelSpec("gait", 0.55, 0.12, 0.45, 0.12),
                ),
                seed=0,
            )
        )
        same = d.query_labels[:, None] == d.gallery_labels[None, :]
        fr_margin, _ = margins(d.scores[0], same)
        fr_min = (np.where(same, d.scores[0], -np.inf).max(1) - np.where(same, -np.inf, d.scores[0]).max(1)).min()
        assert fr_min > 0, "instance is meant to be separable under the FR model"
        mask = SelectionMask.all_models(d.n_queries, 3, anchor=0)
        act_margin, act_dprime = margins(act_fuse_dataset(d, mask, 1), same)
        avg_margin, avg_dprime = margins(baseline_fuse(d, mask, "weighted_sum"), same)
        assert act_margin > avg_margin
        assert act_dprime > avg_dprime
    t.check()
    record_property("detail", f"margin ACT {act_margin:.4f} vs mean {avg_margin:.4f}; d' {act_dprime:.2f} vs {avg_dprime:.2f}")


@pytest.mark.criterion(3, "metrics equal brute-force oracles on 120 random instances")
def test_criterion_03_metric_oracles(record_property):
    rng = np.random.default_rng(2024)
    checked = fnir_checked = 0
    with Timer(30.0) as t:
        while checked < 120:
            scores, ql, gl = small_instance(rng)
            rows = scores.tolist()
            assert rank1_accuracy(scores, ql, gl) == oracles.rank1(rows, ql, gl)
            assert mean_average_precision(scores, ql, gl) == oracles.mean_ap(rows, ql, gl)
            for far in (0.0, 0.01, 0.1, 0.5, 1.0):
                assert tar_at_far(scores, ql, gl, far) == oracles.tar(rows, ql, gl, far)
            try:
                trials = build_nonmated_trials(ql, gl, 0.2, 2, checked)
            except MetricError:
                trials = []
            for trial in trials:
                if trial.mated_probes.any() and trial.nonmated_probes.any():
                    for fpir in (0.0, 0.01, 0.2, 1.0):
                        expected = oracles.fnir(rows, ql, gl, set(trial.nonmated_subjects), fpir)
                        assert fnir_at_fpir(scores, ql, gl, trial, fpir) == expected
                    fnir_checked += 1
            checked += 1
    t.check()
    assert fnir_checked >= 100
    record_property("detail", f"{checked} instances, {fnir_checked} FNIR trials, all exact")


@pytest.mark.criterion(4, "TAR non-decreasing in FAR, FNIR non-increasing in FPIR (50 instances)")
def test_criterion_04_threshold_monotonicity(record_property):
    rng = np.random.default_rng(7)
    rates = np.concatenate([[0.0], np.sort(rng.random(20)), [1.0]])
    violations = instances = 0
    while instances < 50:
        scores, ql, gl = small_instance(rng)
        try:
            trials = build_nonmated_trials(ql, gl, 0.3, 3, instances)
        except MetricError:
            continue
        trials = [tr for tr in trials if tr.mated_probes.any() and tr.nonmated_probes.any()]
        if not trials:
            continue
        tar = [tar_at_far(scores, ql, gl, r) for r in rates]
        violations += sum(a > b for a, b in zip(tar, tar[1:]))
        for tr in trials:
            fnir = [fnir_at_fpir(scores, ql, gl, tr, r) for r in rates]
            violations += sum(a < b for a, b in zip(fnir, fnir[1:]))
        instances += 1
    assert violations == 0
    record_property("detail", f"{instances} instances x {rates.size} targets, 0 violations")


_RERUN = """
import json, sys
from scorefusion.synth import face_body_gait_config, generate
from scorefusion.metrics import build_nonmated_trials, evaluate_report
d = generate(face_body_gait_config(seed=0))
trials = build_nonmated_trials(d.query_labels, d.gallery_labels, 0.2, 10, 0)
r = evaluate_report(d.scores[1], d.query_labels, d.gallery_labels, 0.01, 0.01, trials)
print(json.dumps([repr(r.fnir_mean), repr(r.fnir_std), [list(t.nonmated_subjects) for t in trials]]))
"""


@pytest.mark.criterion(5, "non-mated trials bit-reproducible under a fixed seed")
def test_criterion_05_trial_determinism(record_property):
    d = generate(face_body_gait_config(seed=0))
    a = build_nonmated_trials(d.query_labels, d.gallery_labels, 0.2, 10, 0)
    b = build_nonmated_trials(d.query_labels, d.gallery_labels, 0.2, 10, 0)
    assert len(a) == 10
    n_subjects = np.unique(d.gallery_labels).size
    assert all(len(t.nonmated_subjects) == round(0.2 * n_subjects) for t in a)
    for x, y in zip(a, b):
        assert x.nonmated_subjects == y.nonmated_subjects
        assert x.gallery_keep.tobytes() == y.gallery_keep.tobytes()
        assert x.mated_probes.tobytes() == y.mated_probes.tobytes()
    r1 = evaluate_report(d.scores[1], d.query_labels, d.gallery_labels, 0.01, 0.01, a)
    r2 = evaluate_report(d.scores[1], d.query_labels, d.gallery_labels, 0.01, 0.01, b)
    assert (r1.fnir_mean, r1.fnir_std, r1.fnir_trials) == (r2.fnir_mean, r2.fnir_std, r2.fnir_trials)
    # and in a fresh interpreter
    out = subprocess.run([sys.executable, "-c", _RERUN], capture_output=True, text=True, check=True).stdout
    mean, std, subjects = json.loads(out)
    assert (mean, std) == (repr(r1.fnir_mean), repr(r1.fnir_std))
    assert subjects == [list(t.nonmated_subjects) for t in a]
    record_property("detail", f"FNIR {100 * r1.fnir_mean:.2f} +/- {100 * r1.fnir_std:.2f} identical across runs")


@pytest.mark.criterion(6, "reward stack ranges, additivity and gamma retention")
def test_criterion_06_rewards(record_property):
    rng = np.random.default_rng(3)
    with Timer(10.0) as t:
        d = generate(face_body_gait_config(n_subjects=15, queries_per_subject=2, seed=2))
        cfg = RewardConfig(k=5, n_trials=5)
        actions = ["tool_call", "answer", "malformed"]
        for i in range(200):
            n_turns, n_calls = int(rng.integers(0, 5)), int(rng.integers(0, 4))
            turns = tuple(Turn(bool(rng.random() < 0.7), actions[int(rng.integers(0, 3))]) for _ in range(n_turns))
            names = list(rng.permutation(d.model_names)[:n_calls])
            calls = tuple(ToolCall(str(n), bool(rng.random() < 0.8)) for n in names)
            truth = str(d.query_labels[i % d.n_queries])
            answer = truth if rng.random() < 0.5 else str(d.gallery_labels[int(rng.integers(0, d.n_gallery))])
            tr = TrajectoryTranscript(turns, calls, answer, "cot" if i % 2 else "da")
            b = reward_breakdown(tr, truth, d, cfg, seed=i)
            assert 0.0 <= b.format <= 1.0 and 0.0 <= b.tool <= 1.0
            assert b.accuracy == (1.0 if answer == truth else 0.0)
            assert -1.0 <= b.metric <= 3.0
            assert b.total == b.format + b.tool + b.accuracy + b.metric
        assert accuracy_reward("S7", "S7") == 1 and accuracy_reward("S7", "S9") == 0
        assert format_reward(TrajectoryTranscript((Turn(False, "tool_call"), Turn(True, "answer")))) == 0.5
        assert tool_success_reward(TrajectoryTranscript((), (ToolCall("a"), ToolCall("b", False), ToolCall("c")))) == 2 / 3
        for _ in range(20):
            m = augment_selection_mask([0, 2], 2, d.n_queries, 3, float(rng.random()), float(rng.random()), int(rng.integers(1e6)))
            assert -1.0 <= metric_based_reward(d, m, cfg) <= 3.0
        keep_all = augment_selection_mask([0, 2], 0, 10_000, 3, 1.0, 0.5, seed=0)
        assert (keep_all.mask == np.array([True, False, True])).all()
        # with p = 0 a non-retained row is the anchor alone, so retention is directly visible
        m = augment_selection_mask([0, 2], 0, 10_000, 3, 0.8, 0.0, seed=0)
        retained = float(m.mask[:, 2].mean())
        assert abs(retained - 0.8) < 3 * np.sqrt(0.8 * 0.2 / 10_000)
    t.check()
    record_property("detail", f"gamma=0.8 retention {retained:.4f} over 10,000 rows")


@pytest.mark.criterion(7, "GRPO advantages and analytic gradient")
def test_criterion_07_grpo_math(record_property):
    rng = np.random.default_rng(5)
    for _ in range(500):
        r = rng.normal(size=int(rng.integers(2, 16))) * rng.uniform(0.01, 100)
        a = group_advantages(r)
        assert abs(a.mean()) < 1e-9 and abs(a.std() - 1.0) < 1e-9
    assert not group_advantages([2.5] * 6).any()

    shape = (3, 3)
    policy = Policy(
        ("a", "b", "c"),
        rng.normal(size=shape),
        rng.normal(size=shape),
        (rng.normal(size=shape), rng.normal(size=shape)),
    )
    groups = []
    for _ in range(3):
        x = rng.normal(size=2)
        sels = [sample_selection(policy, x, 4, rng) for _ in range(6)]
        old = np.array([policy.log_prob(x, s) for s in sels]) + rng.uniform(-0.05, 0.05, 6)
        groups.append(Group(x, sels, group_advantages(rng.normal(size=6)), old))
    _, grad = surrogate_objective(policy, groups, clip_eps=0.2, beta=0.04)
    h = 1e-6
    num = np.zeros_like(policy.params)
    for i in range(num.size):
        e = np.zeros_like(num)
        e[i] = h
        up = surrogate_objective(policy.with_params(policy.params + e), groups, 0.2, 0.04)[0]
        down = surrogate_objective(policy.with_params(policy.params - e), groups, 0.2, 0.04)[0]
        num[i] = (up - down) / (2 * h)
    rel = np.linalg.norm(grad - num) / max(np.linalg.norm(num), 1e-12)
    assert rel < 1e-4
    record_property("detail", f"gradient relative error {rel:.1e}")


@pytest.mark.criterion(8, "per-sample oracle >= grid-search best >= hard selection")
def test_criterion_08_selection_hierarchy(record_property):
    with Timer(60.0) as t:
        d = generate(face_body_gait_config(seed=0))
        k, far, fpir = 10, 0.01, 0.01
        trials = build_nonmated_trials(d.query_labels, d.gallery_labels, 0.2, 10, 0)
        oracle_mask, _ = per_sample_oracle(d, k)
        oracle = evaluate_report(act_fuse_dataset(d, oracle_mask, k), d.query_labels, d.gallery_labels, far, fpir, trials)
        grid = grid_search(d, k, far, fpir, trials)
        hard_fused = surrogate_anchor_fuse(d, SelectionMask.all_models(d.n_queries, d.n_models), k)
        hard = evaluate_report(hard_fused, d.query_labels, d.gallery_labels, far, fpir, trials)
        assert oracle.overall >= grid.report.overall >= hard.overall
    t.check()
    record_property(
        "detail", f"oracle {oracle.overall:.4f} >= grid {grid.report.overall:.4f} >= hard {hard.overall:.4f}"
    )


@pytest.mark.slow
@pytest.mark.criterion(9, "GRPO policy learns to anchor on FR when the face is visible")
def test_criterion_09_policy_learning(record_property):
    with Timer(600.0) as t:
        train = generate(face_body_gait_config(seed=0))
        test = generate(face_body_gait_config(seed=1))
        rc = RewardConfig(k=10)
        cfg = GrpoConfig(group_size=6, beta=0.04, turn_limit=4, steps=200)
        untrained = Policy.for_features(train.features(), train.model_names)
        trained, _ = train_policy(train, rc, cfg, untrained)
        trials = rc.trials(test)
        before, _ = evaluate_policy(untrained, test, rc.k, rc.far, rc.fpir, trials, cfg.turn_limit)
        after, _ = evaluate_policy(trained, test, rc.k, rc.far, rc.fpir, trials, cfg.turn_limit)
        mask = greedy_mask(trained, test, cfg.turn_limit)
        visible = test.features()[:, 0] == 1
        face_share = float((mask.anchor[visible] == test.model_index("face")).mean())
        assert face_share >= 0.9
        assert after.overall - before.overall >= 0.2
    t.check()
    record_property(
        "detail",
        f"face anchor on {100 * face_share:.0f}% of visible queries; overall {before.overall:.3f} -> {after.overall:.3f}",
    )


@pytest.mark.criterion(10, "top-k sweep has a well-defined argmax and reruns identically")
def test_criterion_10_topk_sweep(tmp_path, record_property):
    with Timer(120.0) as t:
        cfg = build_config({"dataset": {"preset": "face_body_gait", "seed": 0}})
        first, _ = run_experiment(cfg, "sweep-topk", tmp_path / "a")
        second, _ = run_experiment(cfg, "sweep-topk", tmp_path / "b")
    t.check()
    ks = [r.params["k"] for r in first.ordered_rows()]
    overall = [r.report.overall for r in first.ordered_rows()]
    assert ks == [1, 5, 10, 20, 40]
    assert overall == [r.report.overall for r in second.ordered_rows()]
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()
    best = max(overall)
    assert overall.count(best) == 1
    assert first.extra["argmax_k"] == ks[overall.index(best)]
    curve = ", ".join(f"k={k}: {v:.4f}" for k, v in zip(ks, overall))
    record_property("detail", f"argmax k={first.extra['argmax_k']} ({curve})")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
