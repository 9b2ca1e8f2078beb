"""Walk through anchor-based top-k fusion on a tiny gallery.

Run: python demos/act_fusion.py
"""

import numpy as np

from scorefusion.fusion import act_fuse_query, contribution_vector, topk_mask, zscore_normalize

np.set_printoptions(precision=4, suppress=True)

# Five gallery entries, entry 0 is the true mate.  The anchor (a strong
# face model) already ranks it first; the body model is noisier and
# prefers entry 3.
face = np.array([0.91, 0.35, 0.30, 0.40, 0.28])
body = np.array([0.62, 0.48, 0.41, 0.66, 0.45])

print("face scores      ", face)
print("body scores      ", body)
print()

# Each model's vote starts as a z-score of its row, so models on
# different scales become comparable.
for name, s in (("face", face), ("body", body)):
    print(f"{name} z-scores      ", zscore_normalize(s))
print()

# Only the k best entries per model vote.  The vote is z * s, so a
# confident high score counts for more than a marginal one.
k = 2
for name, s in (("face", face), ("body", body)):
    print(f"{name} top-{k} mask    ", topk_mask(s, k).astype(int))
    print(f"{name} contribution  ", contribution_vector(s, k))
print()

fused = act_fuse_query([face, body], anchor_index=0, k=k)
mean = (face + body) / 2
print("fused (anchor=face)", fused)
print("plain average      ", mean)
for label, row in (("fused", fused), ("average", mean)):
    others = np.delete(row, 0)
    print(f"{label:>8}: mate leads the runner-up by {row[0] - others.max():.4f}")
print()

# With no helpers and k = 0 the anchor is simply halved, and a flat row
# contributes nothing, so ranking comes from the anchor alone.
print("anchor alone, k=0  ", act_fuse_query([face], 0, 0))
print("flat helper        ", act_fuse_query([face, np.full(5, 0.5)], 0, 2))
