"""Compare ways of choosing which models to fuse.

Hard selection fuses every model with a surrogate anchor.  Grid search
picks one subset and anchor for the whole dataset.  The per-query
oracle picks the best candidate per query using the labels, so it is an
upper bound rather than a usable method.

Run: python demos/selection_strategies.py
"""

from collections import Counter

from scorefusion.fusion import act_fuse_dataset, surrogate_anchor_fuse
from scorefusion.metrics import build_nonmated_trials, evaluate_report
from scorefusion.scorespace import SelectionMask
from scorefusion.selector import grid_search, per_sample_oracle
from scorefusion.synth import face_body_gait_config, generate

K, FAR, FPIR = 10, 0.01, 0.01

d = generate(face_body_gait_config(seed=0))
trials = build_nonmated_trials(d.query_labels, d.gallery_labels, 0.2, 10, 0)


def score(fused):
    return evaluate_report(fused, d.query_labels, d.gallery_labels, FAR, FPIR, trials)


hard = score(surrogate_anchor_fuse(d, SelectionMask.all_models(d.n_queries, d.n_models), K))
grid = grid_search(d, K, FAR, FPIR, trials)
oracle_mask, choices = per_sample_oracle(d, K)
oracle = score(act_fuse_dataset(d, oracle_mask, K))

print("top five grid candidates:")
ranked = sorted(grid.rows, key=lambda r: -r[1].overall)
for cand, rep in ranked[:5]:
    print(f"  {cand.describe(d.model_names):<32} overall {rep.overall:.4f}")
print()
print(f"hard selection   {hard.overall:.4f}")
print(f"grid best        {grid.report.overall:.4f}  ({grid.best.describe(d.model_names)})")
print(f"per-query oracle {oracle.overall:.4f}")
print()

visible = d.features()[:, 0] == 1
for flag, label in ((visible, "face visible"), (~visible, "face hidden")):
    anchors = Counter(d.model_names[a] for a in oracle_mask.anchor[flag])
    print(f"oracle anchors, {label}: {dict(anchors.most_common())}")
