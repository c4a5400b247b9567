import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgeslam import codec
from edgeslam.adapt import (
    AdaptEnv,
    ImportanceStream,
    adapt_reset,
    adapt_step,
    evaluate_policy,
    random_policy,
    state_dim,
    static_policy,
    train_adapt,
    write_curve_csv,
)
from edgeslam.codec import FLOOR, IDENTITY, QoeWeights
from edgeslam.traces import LinkModel, gen_congestion_trace, gen_frame_trace, gen_link_trace, partition_trace

N = 30


@pytest.fixture(scope="module")
def stream():
    return ImportanceStream.synthetic(N, seed=0)


@pytest.fixture(scope="module")
def frames():
    return gen_frame_trace(N, mean_size=80000.0, seed=0)


@pytest.fixture(scope="module")
def net():
    return gen_congestion_trace(N, seed=1)


def test_initial_state(stream, frames, net):
    ep = adapt_reset(frames, net, stream=stream)
    v = ep.state.vector()
    assert len(v) == state_dim() == 19
    assert np.all(v[1:17] == 0)
    assert tuple(v[17:]) == IDENTITY.normalized() == (1.0, 0.0)
    assert 0.0 <= v[0] <= 1.0


def test_full_map_state_dim(stream, frames, net):
    ep = adapt_reset(frames, net, stream=stream, full_map=True)
    assert len(ep.state.vector()) == state_dim(full_map=True, n_tiles=stream.grid.n_tiles) == 135 + 18


def test_rewards_sum_to_qoe(stream, frames, net):
    rng = np.random.default_rng(0)
    w = QoeWeights(1.0, 0.7)
    ep = adapt_reset(frames, net, weights=w, stream=stream)
    total = 0.0
    while not ep.done:
        total += adapt_step(ep, int(rng.integers(25))).reward
    assert total == pytest.approx(ep.qoe(), abs=1e-9)
    assert len(ep.rewards) == N


@settings(max_examples=15)
@given(st.integers(1, 12), st.lists(st.integers(0, 24), min_size=1, max_size=N))
def test_history_is_sliding_window(k, actions):
    fr = gen_frame_trace(N, seed=0)
    net = gen_congestion_trace(N, seed=3)
    ep = adapt_reset(fr, net, stream=_STREAM, k=k)
    for t, a in enumerate(actions, start=1):
        s = adapt_step(ep, a).state
        want_b = np.zeros(k)
        want_l = np.zeros(k)
        m = min(t, k)
        want_b[k - m:] = net.throughput[t - m:t]
        want_l[k - m:] = net.latency[t - m:t]
        np.testing.assert_array_equal(s.b_vec, want_b)
        np.testing.assert_array_equal(s.l_vec, want_l)
        assert s.last_action == codec.ConfigAction.from_index(a).normalized()


_STREAM = ImportanceStream.synthetic(N, seed=0)


def test_coarse_beats_identity_when_only_size_counts(stream, frames, net):
    w = QoeWeights(0.0, 1.0)
    coarse, _ = evaluate_policy(static_policy(FLOOR), frames, [net], stream, w)
    fine, _ = evaluate_policy(static_policy(IDENTITY), frames, [net], stream, w)
    assert coarse > fine


def test_step_after_done_raises(stream, frames, net):
    ep = adapt_reset(frames, net, stream=stream)
    while not ep.done:
        ep.step(0)
    with pytest.raises(RuntimeError):
        ep.step(0)


def test_empty_or_bad_inputs(stream, frames, net):
    with pytest.raises(ValueError):
        adapt_reset(frames, net, stream=stream, k=0)
    with pytest.raises(ValueError):
        adapt_reset(frames, net, stream=stream).step(25)


def test_env_cycles_traces(stream, frames):
    parts = partition_trace(gen_congestion_trace(4 * N, seed=2), 4)
    env = AdaptEnv(frames, parts, stream, offset=1, stride=2)
    seen = []
    for _ in range(3):
        env.reset()
        seen.append(env.episode.network.id)
    assert seen == [parts[1].id, parts[3].id, parts[1].id]


def test_training_smoke(stream, frames, tmp_path):
    parts = partition_trace(gen_congestion_trace(4 * N, seed=2), 4)
    ac, curve = train_adapt(frames, parts, stream, episodes=20, seed=0)
    assert len(curve) == 20 and [r["episode"] for r in curve] == list(range(20))
    write_curve_csv(curve, tmp_path / "c.csv")
    assert len((tmp_path / "c.csv").read_text().splitlines()) == 21
    ac2, curve2 = train_adapt(frames, parts, stream, episodes=20, seed=0)
    assert curve == curve2


def test_fixed_link_episode_is_deterministic(stream, frames):
    net = gen_link_trace(LinkModel("fixed", 2e6, 0.03), N)
    a = evaluate_policy(random_policy, frames, [net], stream, seed=4)
    b = evaluate_policy(random_policy, frames, [net], stream, seed=4)
    assert a == b
