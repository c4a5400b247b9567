"""Predict deadline violations from (state, action) with a GP classifier.

Random scheduling on the 4-server desk env produces labelled transitions;
a GP is fitted on the first 400 and scored on the next 400, in both fitting
modes.
"""
import numpy as np

from edgeslam.gpsafe import gp_fit
from edgeslam.schedsim import SchedEnv
from edgeslam.schedtrain import desk_env_config

env = SchedEnv(desk_env_config("gaussian", seed=0), seed=0)
rng = np.random.default_rng(0)
X, y = [], []
s = env.reset()
while len(y) < 800:
    a = int(rng.integers(env.K))
    out = env.sched_step(a)
    X.append(np.concatenate((s, np.eye(env.K)[a])))
    y.append(int(out.safety.unsafe))
    s = out.state
    if out.done:
        s = env.reset()
X, y = np.array(X), np.array(y)
print(f"{len(y)} transitions, {y.mean():.1%} unsafe")

for mode in ("laplace", "regression_squash"):
    m = gp_fit(X[:400], y[:400], mode=mode)
    p = m.probability(X[400:])
    acc = np.mean((p > 0.5) == y[400:])
    print(f"{mode:18s} lengthscale {m.lengthscale:.3f}: held-out accuracy {acc:.3f}")
print(f"always-safe guess accuracy {1 - y[400:].mean():.3f}")
