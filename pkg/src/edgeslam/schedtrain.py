"""Scheduler training: GP-gated constrained actor-critic and its comparators.

Variants
    ``constrained``     base cost; once the GP is live (global step > T0) a step
                        predicted unsafe costs ``cost + P``; the critic sees
                        ``state ⊕ p_unsafe``.
    ``unconstrained``   ``cost + P`` on every step, ``P`` from realized
                        completions; plain state critic.
    ``input_baseline``  base cost; advantage = return-to-go minus the mean over
                        ``M`` paired rollouts on the same input sequence.
    ``round_robin``, ``shortest_queue``  fixed heuristics, no learning.

The learner maximises ``-cost``.  The policy never reads GP output, so GP
predictions for a finished rollout are replayed in global-step order after
the episode (refit, predict, observe), which is exactly what an in-loop GP
would have produced.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .gpsafe import SafetyDataset, refit_schedule
from .neural import ActorCritic, Batch, Trajectory, clip_by_global_norm, parallel_train, rollout, worker_seeds
from .schedsim import SchedConfig, SchedEnv, calibrate_base_rate

VARIANTS = ("constrained", "unconstrained", "input_baseline", "round_robin", "shortest_queue")
LEARNED = ("constrained", "unconstrained", "input_baseline")
METRICS_HEADER = ("episode", "variant", "mean_cost", "indicator_mean", "deadline_misses", "gp_accuracy", "queue_std")


# Desk-scale benchmark: 4 heterogeneous servers whose links differ in speed.
DESK_THROUGHPUT = (20e6, 40e6, 30e6, 10e6)
DESK_LATENCY = (0.002, 0.003, 0.004, 0.008)
DESK_SERVICE_RATIO = 0.35


def desk_env_config(link_kind: str = "gaussian", seed: int = 0, link_rel_std: float = 0.3) -> SchedConfig:
    """4-server scheduler env used by the acceptance runs and demos."""
    env = SchedConfig(
        n_servers=4,
        link_kind=link_kind,
        link_throughput=DESK_THROUGHPUT,
        link_latency=DESK_LATENCY,
        link_rel_std=link_rel_std,
        seed=seed,
    )
    env.base_rate = calibrate_base_rate(env, DESK_SERVICE_RATIO)
    return env


def desk_train_config(variant: str, link_kind: str = "gaussian", seed: int = 0, episodes: int = 300, **kw) -> "TrainConfig":
    """Training config for the desk-scale env: GP window 500, refit every 1000 steps."""
    kw.setdefault("T1", 1000)
    kw.setdefault("gp_window", 500)
    return TrainConfig(variant=variant, episodes=episodes, seed=seed, env=desk_env_config(link_kind, seed), **kw)


def shaped_reward(base_cost: float, unsafe: bool, penalty_value: float) -> float:
    """Cost seen by the learner: ``base_cost`` when safe, ``base_cost + P`` when unsafe."""
    if penalty_value < 1.0:
        raise ValueError("penalty is an exponential and must be >= 1")
    return base_cost + penalty_value if unsafe else base_cost


def gp_advantage(reward: float, v_next_ext: float, v_now: float, gamma: float, terminal: bool = False) -> float:
    """``r + gamma * V(s', p') - V(s, p)`` with the critic evaluated on extended states."""
    return reward + (0.0 if terminal else gamma * v_next_ext) - v_now


@dataclass
class TrainConfig:
    variant: str = "constrained"
    T0: int = 500
    T1: int = 200
    gp_mode: str = "laplace"
    gp_window: int = 2000
    gp_lengthscale: float | None = None
    gp_signal_var: float = 1.0
    gp_noise_var: float = 0.1
    gp_threshold: float = 0.5
    hidden: tuple = (200, 128)
    episodes: int = 300
    workers: int = 1
    seed: int = 0
    gamma: float = 0.99
    lr: float = 1e-3
    entropy_coef: float = 0.0
    reward_center: bool = True
    baseline_rollouts: int = 4
    audit: bool = False
    env: SchedConfig = field(default_factory=SchedConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.T0 < 1 or self.T1 < 1:
            raise ValueError("T0 and T1 must be >= 1")
        if self.episodes < 1 or self.workers < 1:
            raise ValueError("episodes and workers must be >= 1")
        if self.baseline_rollouts < 1:
            raise ValueError("baseline_rollouts must be >= 1")
        self.hidden = tuple(int(h) for h in self.hidden)
        if isinstance(self.env, dict):
            self.env = SchedConfig.from_dict(self.env)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "env"}
        d["hidden"] = list(self.hidden)
        d["env"] = self.env.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    config: TrainConfig
    ac: ActorCritic | None
    metrics: list
    gp: object = None
    env_seeds: list = field(default_factory=list)
    wall_clock: float = 0.0
    audit: list = field(default_factory=list)


def default_env_factory(cfg: SchedConfig) -> Callable:
    return lambda wid, seed: SchedEnv(cfg, seed=seed)


def _episode_row(episode: int, variant: str, summary: dict, gp_acc: float) -> dict:
    return {
        "episode": episode,
        "variant": variant,
        "mean_cost": summary["mean_cost"],
        "indicator_mean": summary["indicator_mean"],
        "deadline_misses": summary["deadline_misses"],
        "gp_accuracy": gp_acc,
        "queue_std": summary["queue_std"],
        "env_seed": summary["env_seed"],
        "miss_rate": summary["miss_rate"],
    }


class _Recorder:
    """Wraps an env to keep per-step costs, penalties and safety labels for reward rewriting."""

    def __init__(self, env: SchedEnv):
        self.env = env
        self.state_dim = env.state_dim
        self.n_actions = env.n_actions

    def reset(self):
        self.costs, self.pens, self.labels = [], [], []
        return self.env.reset()

    def step(self, a):
        s, r, done, info = self.env.step(a)
        self.costs.append(info["cost"])
        self.pens.append(info["penalty"])
        self.labels.append(int(info["safety"].unsafe))
        return s, r, done, info

    def episode_summary(self):
        out = self.env.episode_summary()
        out["costs"] = np.array(self.costs)
        out["penalties"] = np.array(self.pens)
        out["labels"] = np.array(self.labels)
        return out


class GpTimeline:
    """GP collect, fit and refit bookkeeping over the global step counter."""

    def __init__(self, cfg: TrainConfig, n_actions: int):
        self.cfg = cfg
        self.n_actions = n_actions
        self.data = SafetyDataset(cfg.gp_window)
        self.model = None
        self.gp_f = False
        self.t = 0
        self.fits = 0

    def _fit(self):
        c = self.cfg
        try:
            self.model = self.data.fit(
                lengthscale=c.gp_lengthscale,
                signal_var=c.gp_signal_var,
                noise_var=c.gp_noise_var,
                mode=c.gp_mode,
                threshold=c.gp_threshold,
            )
        except ArithmeticError as e:
            raise type(e)(f"GP fit failed at global step {self.t}: {e}") from e
        self.fits += 1

    def process(self, states: np.ndarray, actions: np.ndarray, labels: np.ndarray):
        """Replay one episode; returns per-step ``p_unsafe`` (nan before the GP is live) and phases.

        Per global step: refit on ``periodic_update``; predict once ``t > T0``;
        record the observation (from ``t = 2``); fit at ``t = T0``.
        Predictions are batched between refits, which does not change them.
        """
        n = len(actions)
        X = np.concatenate((states, np.eye(self.n_actions)[actions]), axis=1)
        probs = np.full(n, np.nan)
        phases = []
        pending: list = []

        def flush():
            if pending:
                probs[pending] = self.model.probability(X[pending])
                pending.clear()

        T0, T1 = self.cfg.T0, self.cfg.T1
        for k in range(n):
            self.t += 1
            tg = self.t
            ph = refit_schedule(tg, T0, T1)
            phases.append(ph)
            if ph == "periodic_update" and len(self.data):
                flush()
                self._fit()
            if tg > T0 and self.model is not None:
                self.gp_f = True
                pending.append(k)
            if tg > 1:
                self.data.add(X[k], labels[k])
            if tg == T0 and len(self.data):
                flush()
                self._fit()
        flush()
        return probs, phases


def _policy_from_ac(ac: ActorCritic) -> Callable:
    return lambda s, env: int(np.argmax(ac.probs(s)))


def round_robin_policy(s, env) -> int:
    return env.t % env.K


def make_shortest_queue_policy(seed: int = 0) -> Callable:
    rng = np.random.default_rng(seed)

    def pol(s, env):
        counts = np.array([sv.n_pending for sv in env.servers])
        best = np.flatnonzero(counts == counts.min())
        return int(best[rng.integers(len(best))]) if len(best) > 1 else int(best[0])

    return pol


def _run_heuristic(cfg: TrainConfig, env_factory: Callable) -> TrainResult:
    seeds = worker_seeds(cfg.seed, cfg.workers)
    envs = [env_factory(w, seeds[w]) for w in range(cfg.workers)]
    pols = [
        round_robin_policy if cfg.variant == "round_robin" else make_shortest_queue_policy(seeds[w])
        for w in range(cfg.workers)
    ]
    metrics, env_seeds = [], []
    ep = 0
    while ep < cfg.episodes:
        for w in range(min(cfg.workers, cfg.episodes - ep)):
            env = envs[w]
            s = env.reset()
            while not env.done:
                s, *_ = env.step(pols[w](s, env))
            summ = env.episode_summary()
            metrics.append(_episode_row(ep, cfg.variant, summ, math.nan))
            env_seeds.append(summ["env_seed"])
            ep += 1
    return TrainResult(cfg, None, metrics, env_seeds=env_seeds)


def _make_ac(cfg: TrainConfig, state_dim: int, n_actions: int, extended: bool) -> ActorCritic:
    return ActorCritic(
        state_dim + (1 if extended else 0),
        n_actions,
        hidden=cfg.hidden,
        policy_in=state_dim,
        gamma=cfg.gamma,
        lr_policy=cfg.lr,
        lr_critic=cfg.lr,
        entropy_coef=cfg.entropy_coef,
        seed=cfg.seed,
    )


def train_scheduler(cfg: TrainConfig, env_factory: Callable | None = None, on_episode: Callable | None = None) -> TrainResult:
    """Train (or, for heuristics, run) one variant; see the module docstring."""
    env_factory = env_factory or default_env_factory(cfg.env)
    t_start = time.perf_counter()
    if cfg.variant in ("round_robin", "shortest_queue"):
        res = _run_heuristic(cfg, env_factory)
    elif cfg.variant == "input_baseline":
        res = input_baseline_train(cfg, env_factory)
    else:
        res = _train_actor_critic(cfg, env_factory, on_episode)
    res.wall_clock = time.perf_counter() - t_start
    return res


def _train_actor_critic(cfg: TrainConfig, env_factory: Callable, on_episode: Callable | None) -> TrainResult:
    probe = env_factory(0, 0)
    dim, n_act = probe.state_dim, probe.n_actions
    constrained = cfg.variant == "constrained"
    ac = _make_ac(cfg, dim, n_act, extended=constrained)
    gp = GpTimeline(cfg, n_act) if constrained else None
    center = {"sum": 0.0, "n": 0}
    rows: list = []
    audit: list = []

    def collect(traj: Trajectory, snap: ActorCritic) -> Trajectory:
        info = traj.info
        b = traj.batch
        costs, pens, labels = info["costs"], info["penalties"], info["labels"]
        gp_acc = math.nan
        if constrained:
            probs, phases = gp.process(b.states, b.actions, labels)
            live = ~np.isnan(probs)
            unsafe = live & (probs > cfg.gp_threshold)
            shaped = costs + np.where(unsafe, pens, 0.0)
            p = np.where(live, probs, 0.0)
            # p[t] is the prediction for (s_t, a_t), i.e. about s_{t+1}
            p_now = np.concatenate(([0.0], p[:-1]))
            states = np.concatenate((b.states, p_now[:, None]), axis=1)
            nexts = np.concatenate((b.next_states, p[:, None]), axis=1)
            if live.any():
                gp_acc = float(np.mean(unsafe[live] == labels[live].astype(bool)))
            if cfg.audit:
                audit.append({"phases": phases, "probs": probs, "unsafe": unsafe, "shaped": shaped, "costs": costs})
        else:
            shaped = costs + pens
            states, nexts = b.states, b.next_states
        rewards = -shaped
        raw_mean = float(rewards.mean())
        if cfg.reward_center and center["n"]:
            rewards = rewards - center["sum"] / center["n"]
        center["sum"] += raw_mean * len(rewards)
        center["n"] += len(rewards)
        traj.batch = Batch(states, b.actions, rewards, nexts, b.terminals)
        info["gp_accuracy"] = gp_acc
        info["mean_shaped_cost"] = float(shaped.mean())
        return traj

    def callback(m: dict):
        row = _episode_row(m["episode"], cfg.variant, m, m.get("gp_accuracy", math.nan))
        rows.append(row)
        if on_episode is not None:
            on_episode(row)

    def factory(wid, seed):
        return _Recorder(env_factory(wid, seed))

    ac, _ = parallel_train(factory, ac, cfg.workers, cfg.episodes, cfg.seed, collect=collect, callback=callback)
    return TrainResult(
        cfg,
        ac,
        rows,
        gp=gp.model if gp is not None else None,
        env_seeds=[r["env_seed"] for r in rows],
        audit=audit,
    )


def returns_to_go(rewards: np.ndarray, gamma: float) -> np.ndarray:
    out = np.empty_like(rewards, dtype=float)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def input_baseline_train(cfg: TrainConfig, env_factory: Callable | None = None) -> TrainResult:
    """Policy gradient with an input-dependent baseline from ``M`` paired rollouts.

    Every worker draws one input sequence (env seed) per round and replays it
    ``M`` times with independent action noise.  The advantage of rollout ``m``
    at step ``t`` is its discounted return-to-go minus the mean over the ``M``
    rollouts at that step.  One metrics row per input sequence, averaged over
    its rollouts.
    """
    env_factory = env_factory or default_env_factory(cfg.env)
    M = cfg.baseline_rollouts
    seeds = worker_seeds(cfg.seed, cfg.workers)
    envs = [env_factory(w, seeds[w]) for w in range(cfg.workers)]
    rngs = [np.random.default_rng(s) for s in seeds]
    ac = _make_ac(cfg, envs[0].state_dim, envs[0].n_actions, extended=False)
    rows, env_seeds = [], []
    ep = 0
    while ep < cfg.episodes:
        snap = ac.snapshot()
        grads = []
        for w in range(min(cfg.workers, cfg.episodes - ep)):
            env = envs[w]
            env_seed = env.next_episode_seed()
            batches, summaries = [], []
            for _ in range(M):
                fixed = _FixedSeed(env, env_seed)
                batch, summ = rollout(fixed, snap, rngs[w])
                batches.append(batch)
                summaries.append(summ)
            G = np.array([returns_to_go(b.rewards, cfg.gamma) for b in batches])
            base = G.mean(axis=0)
            for b, g in zip(batches, G):
                grads.append(snap.policy_grad(b, g - base))
            summ = {k: float(np.mean([s[k] for s in summaries])) for k in ("mean_cost", "indicator_mean", "deadline_misses", "queue_std", "miss_rate")}
            summ["env_seed"] = env_seed
            rows.append(_episode_row(ep, cfg.variant, summ, math.nan))
            env_seeds.append(env_seed)
            ep += 1
        pg = [np.mean([g[i] for g in grads], axis=0) for i in range(len(grads[0]))]
        pg, _ = clip_by_global_norm(pg, ac.max_grad_norm)
        ac.policy_opt.step(pg, ascent=True)
    return TrainResult(cfg, ac, rows, env_seeds=env_seeds)


class _FixedSeed:
    """Env view whose reset always replays one input sequence."""

    def __init__(self, env: SchedEnv, seed: int):
        self.env, self.seed = env, seed

    def reset(self):
        return self.env.reset(seed=self.seed)

    def step(self, a):
        return self.env.step(a)

    def episode_summary(self):
        return self.env.episode_summary()


def evaluate(policy, env_factory: Callable, episodes: int = 100, seed: int = 0, variant: str = "eval", drain: bool = True) -> list:
    """Frozen-policy test runs: greedy actions, no GP, no learning.

    ``policy`` is an :class:`ActorCritic` (greedy over its policy head) or a
    callable ``(state, env) -> server``.  With ``drain`` the servers are run
    to completion after the last epoch so every arrival is judged.
    """
    pol = _policy_from_ac(policy) if isinstance(policy, ActorCritic) else policy
    env = env_factory(0, seed)
    rows = []
    for ep in range(episodes):
        s = env.reset()
        while not env.done:
            s, *_ = env.step(pol(s, env))
        summ = env.episode_summary()
        if drain:
            late = sum(1 for x in env.finish() if x.violated)
            summ["deadline_misses"] += late
            summ["miss_rate"] = summ["deadline_misses"] / max(summ["arrivals"], 1)
        rows.append(_episode_row(ep, variant, summ, math.nan))
    return rows


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def write_metrics_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in METRICS_HEADER])


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        rows = []
        for r in reader:
            rows.append(
                {
                    "episode": int(r["episode"]),
                    "variant": r["variant"],
                    **{k: float(r[k]) for k in METRICS_HEADER[2:]},
                }
            )
        return rows


def write_manifest(result: TrainResult, path, extra: dict | None = None) -> None:
    d = {
        "config": result.config.to_dict(),
        "seed": result.config.seed,
        "env_seeds": [int(s) for s in result.env_seeds],
        "code_version": __version__,
        "wall_clock_s": result.wall_clock,
        "gp": result.gp.to_dict() if result.gp is not None else None,
    }
    if extra:
        d.update(extra)
    with open(path, "w") as fh:
        json.dump(d, fh, indent=2, sort_keys=True)


def final_decile(rows: Sequence[dict], key: str) -> float:
    vals = np.array([r[key] for r in rows], dtype=float)
    n = max(1, len(vals) // 10)
    tail = vals[-n:]
    tail = tail[~np.isnan(tail)]
    return float(tail.mean()) if len(tail) else math.nan
