"""Configuration-adaptation environment and its actor-critic training loop.

One step encodes one frame.  The agent sees the fraction of tiles the online
predictor marks important, the last ``k`` throughput and latency samples and
its previous ``(res, qp)``; it picks one of the 25 configurations and gets
``alpha * P_t - beta * 8 * Q_t / B_t``.

``P_t`` compares the predicted importance map with the map the edge would
extract from the reconstructed frame (important tiles at the chosen
configuration, others at the floor).  Both maps are deterministic given the
frame stream and predictor seed, so :class:`ImportanceStream` memoises them.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import codec
from .codec import ALL_ACTIONS, IDENTITY, N_ACTIONS, ConfigAction, QoeWeights
from .neural import ActorCritic, parallel_train
from .tilesense import (
    Frame,
    FrameBuffer,
    TilePredictor,
    buffer_step,
    oracle_labels,
    partition_tiles,
    synthetic_stream,
)
from .traces import FrameTrace, NetworkTrace

HISTORY = 8
FRAME_BYTES = 80000.0  # mean raw frame size used by the adaptation experiments
THROUGHPUT_SCALE = 1e-6  # state uses Mbit/s
LATENCY_SCALE = 10.0  # state uses units of 100 ms
CURVE_HEADER = ("episode", "mean_reward", "mean_P", "mean_tx_time")


class ImportanceStream:
    """Frames, the online predictor's per-frame importance maps and an edge-side P table."""

    def __init__(self, frames: Sequence[Frame], predictor_seed: int = 0, buffer: FrameBuffer | None = None):
        frames = list(frames)
        if not frames:
            raise ValueError("importance stream needs at least one frame")
        self.frames = frames
        self.grid = partition_tiles(frames[0].width, frames[0].height)
        model = TilePredictor(seed=predictor_seed)
        buf = buffer or FrameBuffer()
        labels = []
        for f in frames:
            labels.append(buffer_step(buf, model, f, self.grid).report.labels)
        self.labels = np.array(labels, dtype=np.int8)
        self.fraction = self.labels.reshape(len(frames), -1).mean(axis=1)
        self._perf = np.full((len(frames), N_ACTIONS), np.nan)

    def __len__(self) -> int:
        return len(self.frames)

    def perf(self, i: int, action: ConfigAction) -> float:
        a = action.index
        p = self._perf[i, a]
        if p != p:
            edge = codec.reconstruct(self.frames[i], self.labels[i], action, grid=self.grid)
            oracle = oracle_labels(edge, self.grid)
            p = codec.slam_perf(self.labels[i], oracle.labels)
            self._perf[i, a] = p
        return p

    def precompute(self, n: int | None = None) -> None:
        for i in range(len(self) if n is None else min(n, len(self))):
            for act in ALL_ACTIONS:
                self.perf(i, act)

    @classmethod
    def synthetic(cls, n_frames: int, seed: int = 0, **stream_kw) -> "ImportanceStream":
        kw = {"n_objects": 40, "contrast": (15.0, 80.0), "motion": 0.3}
        kw.update(stream_kw)
        return cls(list(synthetic_stream(n_frames, seed=seed, **kw)), predictor_seed=seed)


@dataclass
class AdaptState:
    e_t: float
    b_vec: np.ndarray
    l_vec: np.ndarray
    last_action: tuple
    tile_map: np.ndarray | None = None

    def vector(self) -> np.ndarray:
        head = [self.e_t] if self.tile_map is None else self.tile_map.ravel().astype(float)
        return np.concatenate(
            (head, self.b_vec * THROUGHPUT_SCALE, self.l_vec * LATENCY_SCALE, self.last_action)
        )


def state_dim(k: int = HISTORY, full_map: bool = False, n_tiles: int = 135) -> int:
    return (n_tiles if full_map else 1) + 2 * k + 2


@dataclass
class AdaptStep:
    state: AdaptState
    reward: float
    done: bool
    info: dict


@dataclass
class AdaptEpisode:
    frame_trace: FrameTrace
    network: NetworkTrace
    stream: ImportanceStream
    weights: QoeWeights = field(default_factory=QoeWeights)
    k: int = HISTORY
    full_map: bool = False
    t: int = 0
    done: bool = False
    state: AdaptState | None = None
    perf: list = field(default_factory=list)
    sizes: list = field(default_factory=list)
    bandwidths: list = field(default_factory=list)
    rewards: list = field(default_factory=list)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("history length k must be >= 1")
        self.length = min(len(self.frame_trace), len(self.network), len(self.stream))
        if self.length < 1:
            raise ValueError("empty trace")
        self.reset()

    def _state(self, b, l, last: ConfigAction) -> AdaptState:
        i = min(self.t, self.length - 1)
        return AdaptState(
            float(self.stream.fraction[i]),
            b,
            l,
            last.normalized(),
            self.stream.labels[i].copy() if self.full_map else None,
        )

    def reset(self) -> AdaptState:
        self.t = 0
        self.done = False
        self.perf, self.sizes, self.bandwidths, self.rewards = [], [], [], []
        z = np.zeros(self.k)
        self.state = self._state(z, z.copy(), IDENTITY)
        return self.state

    def step(self, action: ConfigAction | int) -> AdaptStep:
        if self.done:
            raise RuntimeError("episode is done; reset it first")
        if not isinstance(action, ConfigAction):
            action = ConfigAction.from_index(int(action))
        t = self.t
        labels = self.stream.labels[t]
        P = self.stream.perf(t, action)
        Q = codec.data_size(self.frame_trace.raw_size[t], labels, action)
        B = float(self.network.throughput[t])
        L = float(self.network.latency[t])
        r = codec.step_reward(P, Q, B, self.weights)
        self.perf.append(P)
        self.sizes.append(Q)
        self.bandwidths.append(B)
        self.rewards.append(r)
        b = np.append(self.state.b_vec[1:], B)
        l = np.append(self.state.l_vec[1:], L)
        self.t += 1
        self.done = self.t >= self.length
        self.state = self._state(b, l, action)
        return AdaptStep(self.state, r, self.done, {"P_t": P, "Q_t": Q, "B_t": B})

    def qoe(self) -> float:
        return codec.qoe(self.perf, self.sizes, self.bandwidths, self.weights)


def adapt_reset(
    frame_trace: FrameTrace,
    network: NetworkTrace,
    weights: QoeWeights = QoeWeights(),
    seed: int = 0,
    stream: ImportanceStream | None = None,
    k: int = HISTORY,
    full_map: bool = False,
) -> AdaptEpisode:
    """Start an episode; the initial :class:`AdaptState` is ``episode.state``.

    Without an explicit ``stream`` a synthetic frame stream and predictor are
    built from ``seed``.
    """
    if len(frame_trace) == 0 or len(network) == 0:
        raise ValueError("empty trace")
    if stream is None:
        stream = ImportanceStream.synthetic(min(len(frame_trace), len(network)), seed=seed)
    return AdaptEpisode(frame_trace, network, stream, weights, k, full_map)


def adapt_step(episode: AdaptEpisode, action: ConfigAction | int) -> AdaptStep:
    return episode.step(action)


class AdaptEnv:
    """Vector-state wrapper cycling over ``traces`` round-robin for the trainer.

    Worker ``offset`` of ``stride`` workers plays traces
    ``offset, offset + stride, ...`` (mod the trace count).
    """

    def __init__(
        self,
        frame_trace: FrameTrace,
        traces: Sequence[NetworkTrace],
        stream: ImportanceStream,
        weights: QoeWeights = QoeWeights(),
        k: int = HISTORY,
        full_map: bool = False,
        offset: int = 0,
        stride: int = 1,
    ):
        if not traces:
            raise ValueError("need at least one network trace")
        self.frame_trace, self.traces, self.stream = frame_trace, list(traces), stream
        self.weights, self.k, self.full_map = weights, k, full_map
        self.offset, self.stride = offset, stride
        self.n_episodes = 0
        self.episode: AdaptEpisode | None = None

    def reset(self) -> np.ndarray:
        idx = (self.offset + self.n_episodes * self.stride) % len(self.traces)
        self.n_episodes += 1
        self.episode = AdaptEpisode(self.frame_trace, self.traces[idx], self.stream, self.weights, self.k, self.full_map)
        return self.episode.state.vector()

    def step(self, a: int):
        out = self.episode.step(a)
        return out.state.vector(), out.reward, out.done, out.info

    def episode_summary(self) -> dict:
        ep = self.episode
        tx = 8.0 * np.asarray(ep.sizes) / np.asarray(ep.bandwidths)
        return {
            "env_seed": self.n_episodes - 1,
            "trace": ep.network.id,
            "mean_P": float(np.mean(ep.perf)),
            "mean_tx_time": float(np.mean(tx)),
            "qoe": ep.qoe(),
            "mean_reward_raw": float(np.mean(ep.rewards)),
            "steps": len(ep.rewards),
        }


def train_adapt(
    frame_trace: FrameTrace,
    traces: Sequence[NetworkTrace],
    stream: ImportanceStream,
    episodes: int = 300,
    workers: int = 1,
    hidden: Sequence[int] = (128,),
    lr_policy: float = 1e-3,
    lr_critic: float = 1e-3,
    gamma: float = 0.99,
    entropy_coef: float = 0.01,
    weights: QoeWeights = QoeWeights(),
    k: int = HISTORY,
    full_map: bool = False,
    reward_center: bool = True,
    seed: int = 0,
    on_round: Callable | None = None,
):
    """Train the adaptation agent; returns ``(ActorCritic, curve rows)``.

    With ``reward_center`` the learner sees ``r - r_bar`` where ``r_bar`` is
    the mean reward of all earlier rounds.  Episodes have a fixed length, so
    the shift leaves the ranking of policies unchanged; it keeps the critic's
    targets near zero, where its errors are small compared with the reward
    gaps between configurations.  The curve always reports raw rewards.
    """
    if not traces:
        raise ValueError("need at least one training trace")
    dim = state_dim(k, full_map, stream.grid.n_tiles)
    ac = ActorCritic(
        dim,
        N_ACTIONS,
        hidden=hidden,
        gamma=gamma,
        lr_policy=lr_policy,
        lr_critic=lr_critic,
        entropy_coef=entropy_coef,
        seed=seed,
    )

    def factory(wid, wseed):
        return AdaptEnv(frame_trace, traces, stream, weights, k, full_map, offset=wid, stride=workers)

    center = {"sum": 0.0, "n": 0}

    def collect(traj, snap):
        if reward_center and center["n"]:
            b = traj.batch
            traj.batch = replace(b, rewards=b.rewards - center["sum"] / center["n"])
        return traj

    def after_round(rnd, trajs):
        for tr in trajs:
            center["sum"] += tr.info["mean_reward_raw"] * tr.info["steps"]
            center["n"] += tr.info["steps"]
        if on_round is not None:
            on_round(rnd, trajs)

    ac, metrics = parallel_train(factory, ac, workers, episodes, seed, collect=collect, on_round=after_round)
    curve = [
        {
            "episode": m["episode"],
            "mean_reward": m["mean_reward_raw"],
            "mean_P": m["mean_P"],
            "mean_tx_time": m["mean_tx_time"],
        }
        for m in metrics
    ]
    return ac, curve


def write_curve_csv(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for row in curve:
            w.writerow([row["episode"]] + [repr(float(row[c])) for c in CURVE_HEADER[1:]])


def evaluate_policy(policy: Callable, frame_trace, traces, stream, weights=QoeWeights(), k=HISTORY, full_map=False, seed=0):
    """Mean QoE over ``traces``; ``policy(state_vector, rng) -> action index``."""
    rng = np.random.default_rng(seed)
    scores = []
    for tr in traces:
        ep = AdaptEpisode(frame_trace, tr, stream, weights, k, full_map)
        while not ep.done:
            ep.step(policy(ep.state.vector(), rng))
        scores.append(ep.qoe())
    return float(np.mean(scores)), scores


def agent_policy(ac: ActorCritic, greedy: bool = True) -> Callable:
    return lambda s, rng: ac.act(s, rng, greedy=greedy)


def static_policy(action: ConfigAction | int) -> Callable:
    idx = action.index if isinstance(action, ConfigAction) else int(action)
    return lambda s, rng: idx


def random_policy(s, rng) -> int:
    return int(rng.integers(N_ACTIONS))


def static_baselines(frame_trace, traces, stream, weights=QoeWeights(), k=HISTORY) -> dict:
    """Mean held-out QoE of each of the 25 fixed configurations."""
    return {a: evaluate_policy(static_policy(a), frame_trace, traces, stream, weights, k)[0] for a in ALL_ACTIONS}
