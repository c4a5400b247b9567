"""Train the per-frame encoding agent and compare it with fixed settings.

The agent picks one of 25 (resolution, QP) pairs per frame from the tile
importance fraction and recent link history.  Afterwards it is scored on six
held-out congestion traces next to every fixed configuration and a random
policy.  Pass an episode count to train longer (default 100; 300 takes about
a minute).
"""
import sys

from edgeslam.adapt import ImportanceStream, agent_policy, evaluate_policy, random_policy, static_baselines, train_adapt
from edgeslam.traces import gen_congestion_trace, gen_frame_trace, partition_trace, train_test_split

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 100
train, test = train_test_split(partition_trace(gen_congestion_trace(9000, seed=0), 16), 10)
frames = gen_frame_trace(563, mean_size=80000.0)
print("building importance maps for 563 frames ...")
stream = ImportanceStream.synthetic(563, seed=0)

ac, curve = train_adapt(frames, train, stream, episodes=episodes, seed=0)
for row in curve[:: max(1, episodes // 10)]:
    print(f"episode {row['episode']:4d}: mean reward {row['mean_reward']:+.3f}, P {row['mean_P']:.3f}, tx {row['mean_tx_time']:.3f}s")

statics = static_baselines(frames, test, stream)
best = max(statics, key=statics.get)
worst = min(statics, key=statics.get)
print(f"held-out QoE  agent {evaluate_policy(agent_policy(ac), frames, test, stream)[0]:8.1f}")
print(f"              best fixed ({best.res}, {best.qp}) {statics[best]:8.1f}")
print(f"              worst fixed ({worst.res}, {worst.qp}) {statics[worst]:8.1f}")
print(f"              random {evaluate_policy(random_policy, frames, test, stream)[0]:8.1f}")
