"""Closed-set and open-set identification metrics on a synthetic pool.

Run: python demos/metrics_protocol.py
"""

import numpy as np

from scorefusion.metrics import build_nonmated_trials, evaluate_report, operating_threshold, rank1_accuracy
from scorefusion.synth import face_body_gait_config, generate

d = generate(face_body_gait_config(seed=0))
print(f"{d.n_queries} queries, {d.n_gallery} gallery entries, models {', '.join(d.model_names)}")

# Open-set FNIR needs probes whose subject is missing from the gallery.
# Each trial withholds a random 20% of gallery subjects, seeded per trial.
trials = build_nonmated_trials(d.query_labels, d.gallery_labels, 0.2, 10, base_seed=0)
print(f"trial 0 withholds {len(trials[0].nonmated_subjects)} subjects: {', '.join(trials[0].nonmated_subjects[:5])} ...")
print()

print(f"{'model':>6} {'rank1':>7} {'mAP':>7} {'TAR':>7} {'FNIR':>15} {'overall':>8}")
for m, name in enumerate(d.model_names):
    r = evaluate_report(d.scores[m], d.query_labels, d.gallery_labels, 0.01, 0.01, trials)
    fnir = f"{100 * r.fnir_mean:5.1f} +/- {100 * r.fnir_std:4.1f}"
    print(f"{name:>6} {100 * r.rank1:6.1f}% {100 * r.map:6.1f}% {100 * r.tar:6.1f}% {fnir:>14}% {r.overall:8.4f}")
print()

# The FAR threshold is the smallest observed non-match score that lets at
# most 1% of non-match scores pass; acceptance is strictly above it.
same = d.query_labels[:, None] == d.gallery_labels[None, :]
negatives = d.scores[1][~same]
t = operating_threshold(negatives, 0.01)
print(f"face threshold at 1% FAR: {t:.4f}; {np.mean(negatives > t):.4%} of non-matches pass")
print("the face model is strong when the face is visible and weak otherwise:")
visible = d.features()[:, 0] == 1
for flag, label in ((visible, "visible"), (~visible, "hidden")):
    sub = d.select_queries(np.flatnonzero(flag))
    r1 = rank1_accuracy(sub.scores[1], sub.query_labels, sub.gallery_labels)
    print(f"  face {label:>7}: rank1 {100 * r1:5.1f}% over {sub.n_queries} queries")
