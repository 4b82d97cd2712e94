"""How the expectile level moves the tabular critic.

On a dataset that visits every (state, action) pair equally often, tau=0.5
gives the behavior policy's own values; raising tau pushes V(s) toward the
best in-support Q(s, a).
"""

import numpy as np

from align_extract import (CriticConfig, build_gridworld, enumerate_transitions, estimate_behavior,
                           exact_policy_evaluation, train_critic)

mdp = build_gridworld(5, 5, [24], slip_prob=0.0)
data = enumerate_transitions(mdp, repeats=2)
behavior = estimate_behavior(data, mdp.n_states, mdp.n_actions)
dp = exact_policy_evaluation(mdp, behavior.probs)

for tau in (0.5, 0.7, 0.9, 0.99):
    vt = train_critic(data, behavior, CriticConfig(tau=tau, gamma=mdp.gamma))
    vis = vt.visited
    qmax = np.where(vt.support_mask, vt.q, -np.inf).max(axis=1)
    print(f"tau={tau:<5} sweeps={vt.sweeps:<5} mean V={vt.v[vis].mean():+.4f}  "
          f"max|V - V_dp|={np.abs(vt.v - dp).max():.2e}  max(maxQ - V)={np.max(qmax[vis] - vt.v[vis]):.4f}")
