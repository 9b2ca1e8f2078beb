"""Train the selection policy with group-relative policy optimisation.

The policy sees one feature per query (is the face visible?) and
chooses an anchor plus extra models.  Rewards mix format, tool use,
answer accuracy and the metric score of the fused ranking.  Training
runs on one synthetic draw and is evaluated on another.

Run: python demos/policy_training.py [steps]
"""

import sys
from collections import Counter

from scorefusion.reward import RewardConfig
from scorefusion.selector import Policy, train_policy
from scorefusion.selector.grpo import GrpoConfig, evaluate_policy
from scorefusion.synth import face_body_gait_config, generate

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200
train = generate(face_body_gait_config(seed=0))
test = generate(face_body_gait_config(seed=1))
reward_cfg = RewardConfig(k=10)
cfg = GrpoConfig(steps=steps)


def progress(step, diag):
    if step % 25 == 0 or step == steps - 1:
        print(f"step {step:>4}  reward {diag['reward_mean']:.3f}  kl {diag['kl']:.4f}  calls {diag['mean_calls']:.2f}")


start = Policy.for_features(train.features(), train.model_names)
trained, _ = train_policy(train, reward_cfg, cfg, start, on_step=progress)
print()

trials = reward_cfg.trials(test)
visible = test.features()[:, 0] == 1
for label, policy in (("untrained", start), ("trained", trained)):
    report, mask = evaluate_policy(policy, test, reward_cfg.k, reward_cfg.far, reward_cfg.fpir, trials, cfg.turn_limit)
    seen = Counter(test.model_names[a] for a in mask.anchor[visible])
    hidden = Counter(test.model_names[a] for a in mask.anchor[~visible])
    print(f"{label:>9}: overall {report.overall:7.4f}  anchors visible {dict(seen)}  hidden {dict(hidden)}")
