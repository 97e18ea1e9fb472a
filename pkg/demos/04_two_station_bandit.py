"""
A two-station bandit
====================

The smallest problem the selector can face: one station that helps and
one that hurts. Keeping only the good one pays 0.95, anything else pays
0.05. The same rollout and policy-gradient code used for real cities
learns it within a few dozen updates.
"""

# %%
from airrl.experiments import two_candidate_bandit

for seed in range(5):
    out = two_candidate_bandit(seed)
    print(f"seed {seed}: p(keep good) {out.p_good:.3f}  p(keep bad) {out.p_bad:.3f}  "
          f"solved after {out.updates} updates")

# %%
# The selector never returns an empty set: when it drops everything, the
# station it was most inclined to keep is used anyway. If the reward is
# computed on that fallback set, dropping both stations is as good as
# keeping the good one, and the policy drifts there instead.
for seed in range(3):
    out = two_candidate_bandit(seed, credit_fallback=True)
    print(f"seed {seed}: p(keep good) {out.p_good:.3f}  p(keep bad) {out.p_bad:.3f}")
