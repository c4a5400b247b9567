"""Train safe and plain schedulers on the 4-server desk env, then test them.

The constrained variant adds the violation penalty only where its GP predicts
an unsafe next state; the unconstrained one always pays the realised penalty.
Both are compared with round robin on 20 unseen test episodes.  Pass an
episode count to train longer (default 60; the acceptance runs use 300).
"""
import sys

import numpy as np

from edgeslam.schedtrain import default_env_factory, desk_train_config, evaluate, final_decile, round_robin_policy, train_scheduler

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 60
results = {}
for variant in ("constrained", "unconstrained"):
    res = train_scheduler(desk_train_config(variant, "gaussian", seed=0, episodes=episodes))
    results[variant] = res
    print(
        f"{variant:13s}: final-decile indicator {final_decile(res.metrics, 'indicator_mean'):.3f}, "
        f"GP accuracy {final_decile(res.metrics, 'gp_accuracy'):.3f}, {res.wall_clock:.0f}s"
    )

fac = default_env_factory(results["constrained"].config.env)
policies = {"constrained": results["constrained"].ac, "unconstrained": results["unconstrained"].ac, "round_robin": round_robin_policy}
for name, pol in policies.items():
    rows = evaluate(pol, fac, episodes=20, seed=1000)
    miss = np.array([r["miss_rate"] for r in rows])
    print(f"test {name:13s}: mean miss rate {miss.mean():.2%}, episodes under 5% {np.sum(miss <= 0.05)}/20, mean cost {np.mean([r['mean_cost'] for r in rows]):.3f}")
