"""Multi-server scheduling simulator for SLAM sub-tasks.

Each decision epoch lasts ``1/fps`` seconds.  At the start of epoch ``t`` frame
``t`` is captured and dispatched whole to one server.  Its upload takes
``latency + 8 * size / throughput`` seconds over that server's link; then the
server runs three sub-tasks: tracking first, then local mapping and loop
closing (same order rank, FIFO between them).  Servers are non-preemptive and
pick the ready sub-task with the smallest ``(order_rank, enqueue time)``.

Sub-task durations ``w_j`` are measured from ``arrival_time``: the capture
time for tracking (so the upload counts) and the tracking completion time for
the two follow-up sub-tasks.  Deadlines are ``ratio_kind / fps`` and are never
part of the observation.

Per-epoch cost (to be minimised)::

    exp(ST_ddl / ST_a) + 1 / (1 + exp(-std(queue lengths)))

with ``ST_a`` the sub-tasks active during the epoch (completed in it or still
pending at its end), ``ST_ddl`` those of them past their deadline, and
``ST_ddl / ST_a = 0`` when nothing was active.
"""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .traces import FrameTrace, LinkModel, THROUGHPUT_FLOOR, LATENCY_FLOOR

KINDS = ("tracking", "local_mapping", "loop_closing")
ORDER_RANK = {"tracking": 0, "local_mapping": 1, "loop_closing": 1}
DEFAULT_SIZE_SHARES = (0.5, 0.3, 0.2)
DEFAULT_DEADLINE_RATIOS = (0.4, 0.35, 0.25)
PENALTY_FLOOR = 0.001
# exponent cap: a backlog of very late sub-tasks would otherwise overflow a float
PENALTY_EXP_CAP = 30.0

EVENT_LOG_HEADER = ("t", "frame", "subtask_kind", "server", "enqueue_t", "start_t", "finish_t", "w_j", "ddl", "violated")


@dataclass
class SubTask:
    kind: str
    size: float
    deadline: float
    arrival_time: float
    frame: int = -1
    server: int = -1
    seq: int = 0
    enqueue_t: float = math.nan
    start_t: float = math.nan
    finish_t: float = math.nan

    def __post_init__(self):
        if self.kind not in ORDER_RANK:
            raise ValueError(f"unknown sub-task kind {self.kind!r}")
        if self.size <= 0 or self.deadline <= 0:
            raise ValueError("sub-task size and deadline must be > 0")

    @property
    def order_rank(self) -> int:
        return ORDER_RANK[self.kind]

    @property
    def w(self) -> float:
        return self.finish_t - self.arrival_time

    @property
    def violated(self) -> bool:
        return self.w > self.deadline


def decompose(
    frame_size: float,
    compressed_size: float,
    fps: float,
    size_shares: Sequence[float] = DEFAULT_SIZE_SHARES,
    deadline_ratios: Sequence[float] = DEFAULT_DEADLINE_RATIOS,
    work_per_byte: float = 1.0,
    arrival_time: float = 0.0,
    frame: int = -1,
) -> list[SubTask]:
    """Split one compressed frame into tracking / local-mapping / loop-closing sub-tasks."""
    if frame_size <= 0 or compressed_size <= 0 or fps <= 0:
        raise ValueError("sizes and fps must be > 0")
    work = compressed_size * work_per_byte
    budget = 1.0 / fps
    return [
        SubTask(kind, work * share, ratio * budget, arrival_time, frame=frame)
        for kind, share, ratio in zip(KINDS, size_shares, deadline_ratios)
    ]


def penalty(completed) -> float:
    """``exp(sum_j max(0.001, (w_j - DDL_j) / DDL_j))`` over completed sub-tasks.

    ``completed`` holds :class:`SubTask` objects or ``(w_j, DDL_j)`` pairs.
    The exponent is capped at ``PENALTY_EXP_CAP``.
    """
    total = 0.0
    for item in completed:
        w, ddl = (item.w, item.deadline) if isinstance(item, SubTask) else item
        if ddl <= 0:
            raise ValueError("deadlines must be > 0")
        total += max(PENALTY_FLOOR, (w - ddl) / ddl)
    return math.exp(min(total, PENALTY_EXP_CAP))


def sched_cost(st_ddl: int, st_a: int, queue_std: float) -> float:
    ratio = st_ddl / st_a if st_a > 0 else 0.0
    return math.exp(ratio) + 1.0 / (1.0 + math.exp(-queue_std))


@dataclass
class SafetyLabel:
    unsafe: bool
    violating: list
    margin: float


def safety_label(completed: Sequence[SubTask]) -> SafetyLabel:
    bad = [s for s in completed if s.violated]
    margin = max(((s.w - s.deadline) / s.deadline for s in completed), default=-math.inf)
    return SafetyLabel(bool(bad), bad, margin)


class Server:
    """Single non-preemptive processor with a rank-priority FIFO queue."""

    def __init__(self, id: int, rate: float):
        if rate <= 0:
            raise ValueError("server rate must be > 0")
        self.id = id
        self.rate = rate
        self.reset()

    def reset(self):
        self.inbound: list = []  # (ready_time, seq, SubTask) still uploading
        self.ready: list = []  # (rank, enqueue_t, seq, SubTask): FIFO within a rank
        self.current: SubTask | None = None
        self.busy_until = 0.0
        self.clock = 0.0
        self.held: dict = {}  # frame -> follow-up sub-tasks waiting on tracking
        self.n_pending = 0
        self.work_pending = 0.0
        self.busy_time = 0.0
        self.work_done = 0.0

    def assign(self, subtasks: Sequence[SubTask], ready_time: float, seq0: int) -> None:
        track, *rest = subtasks
        for i, s in enumerate(subtasks):
            s.server = self.id
            s.seq = seq0 + i
        track.enqueue_t = ready_time
        heapq.heappush(self.inbound, (ready_time, track.seq, track))
        self.held[track.frame] = rest
        self.n_pending += len(subtasks)
        self.work_pending += sum(s.size for s in subtasks)

    def _admit(self, now: float) -> None:
        while self.inbound and self.inbound[0][0] <= now:
            _, seq, s = heapq.heappop(self.inbound)
            heapq.heappush(self.ready, (s.order_rank, s.enqueue_t, seq, s))

    def advance(self, t_end: float, done: list) -> None:
        """Process until ``t_end``; sub-tasks finishing by then are appended to ``done``."""
        now = self.clock
        while True:
            if self.current is not None:
                cur = self.current
                if cur.finish_t > t_end:
                    break
                now = cur.finish_t
                self.current = None
                self.n_pending -= 1
                self.work_pending -= cur.size
                self.work_done += cur.size
                done.append(cur)
                if cur.kind == "tracking":
                    for s in self.held.pop(cur.frame, ()):
                        s.arrival_time = now
                        s.enqueue_t = now
                        heapq.heappush(self.ready, (s.order_rank, now, s.seq, s))
            self._admit(now)
            if not self.ready:
                if self.inbound and self.inbound[0][0] < t_end:
                    now = max(now, self.inbound[0][0])
                    continue
                break
            *_, s = heapq.heappop(self.ready)
            s.start_t = now
            dur = s.size / self.rate
            s.finish_t = now + dur
            self.busy_time += dur
            self.busy_until = s.finish_t
            self.current = s
        self.clock = max(now, t_end) if self.current is None else now

    def remaining_work(self, now: float) -> float:
        """Unfinished work, counting only the unprocessed part of the running sub-task."""
        w = self.work_pending
        if self.current is not None:
            w -= min(self.current.size, max(0.0, now - self.current.start_t) * self.rate)
        return w

    def late_pending(self, now: float) -> int:
        """Unfinished sub-tasks whose clock has started and already exceeds the deadline.

        Follow-up sub-tasks held behind their tracking sub-task have not started
        their clock and never count.
        """
        n = 0
        for *_, s in self.inbound:
            n += now - s.arrival_time > s.deadline
        for *_, s in self.ready:
            n += now - s.arrival_time > s.deadline
        if self.current is not None:
            n += now - self.current.arrival_time > self.current.deadline
        return n

    def pending_subtasks(self):
        out = [s for *_, s in self.inbound] + [s for *_, s in self.ready]
        if self.current is not None:
            out.append(self.current)
        for rest in self.held.values():
            out.extend(rest)
        return out


@dataclass
class SchedConfig:
    n_servers: int = 10
    rate_range: tuple = (0.8, 2.0)
    base_rate: float = 1.2e6  # work units (bytes) per second
    fps: float = 30.0
    size_shares: tuple = DEFAULT_SIZE_SHARES
    deadline_ratios: tuple = DEFAULT_DEADLINE_RATIOS
    work_per_byte: float = 1.0
    frame_mean: float = 12000.0  # compressed bytes per frame
    frame_rel_std: float = 0.2
    frame_trace: FrameTrace | None = None
    link_kind: str = "fixed"
    link_throughput: tuple = (40e6,)  # per-server means (bits/s), cycled over servers
    link_latency: tuple = (0.002,)  # per-server means (s), cycled over servers
    link_rel_std: float = 0.3  # gaussian std as a fraction of the mean
    link_observation: str = "measured"  # "measured": previous step's sample; "current": this step's
    episode_len: int = 1000
    queue_metric: str = "count"
    seed: int = 0

    def __post_init__(self):
        if self.n_servers < 1:
            raise ValueError("n_servers must be >= 1")
        if self.link_kind not in ("fixed", "gaussian"):
            raise ValueError(f"unknown link kind {self.link_kind!r}")
        if self.link_observation not in ("measured", "current"):
            raise ValueError("link_observation must be 'measured' or 'current'")
        if self.queue_metric not in ("count", "work"):
            raise ValueError("queue_metric must be 'count' or 'work'")
        if abs(sum(self.size_shares) - 1) > 1e-9 or abs(sum(self.deadline_ratios) - 1) > 1e-9:
            raise ValueError("size shares and deadline ratios must each sum to 1")
        self.rate_range = tuple(self.rate_range)
        self.size_shares = tuple(self.size_shares)
        self.deadline_ratios = tuple(self.deadline_ratios)
        self.link_throughput = tuple(self.link_throughput)
        self.link_latency = tuple(self.link_latency)

    @property
    def rates(self) -> np.ndarray:
        lo, hi = self.rate_range
        mult = np.linspace(lo, hi, self.n_servers) if self.n_servers > 1 else np.array([hi])
        return mult * self.base_rate

    def link_models(self, seed: int) -> list[LinkModel]:
        out = []
        ss = np.random.SeedSequence(seed).spawn(self.n_servers)
        for i in range(self.n_servers):
            thr = self.link_throughput[i % len(self.link_throughput)]
            lat = self.link_latency[i % len(self.link_latency)]
            g = self.link_kind == "gaussian"
            out.append(
                LinkModel(
                    kind=self.link_kind,
                    mean_throughput=thr,
                    mean_latency=lat,
                    std_throughput=self.link_rel_std * thr if g else 0.0,
                    std_latency=self.link_rel_std * lat if g else 0.0,
                    seed=int(ss[i].generate_state(1)[0]),
                )
            )
        return out

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "frame_trace"}
        d = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        d["frame_trace"] = None if self.frame_trace is None else self.frame_trace.id
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SchedConfig":
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__ and k != "frame_trace"}
        return cls(**d)


def calibrate_base_rate(cfg: SchedConfig, slowest_service_ratio: float) -> float:
    """Base rate at which the slowest server needs ``ratio / fps`` seconds per mean frame."""
    work = cfg.frame_mean * cfg.work_per_byte
    return work * cfg.fps / (slowest_service_ratio * cfg.rate_range[0])


# observation scaling constants
SIZE_SCALE = 1.0 / 20000.0
LAT_SCALE = 1.0 / 0.01
THR_SCALE = 1.0 / 50e6
COUNT_SCALE = 1.0 / 10.0


@dataclass
class StepOutcome:
    state: np.ndarray
    cost: float
    safety: SafetyLabel
    done: bool
    info: dict = field(default_factory=dict)


class SchedEnv:
    """Scheduling environment.

    ``step(server)`` returns ``(state, -cost, done, info)`` so that the
    maximising learner minimises the cost; :meth:`sched_step` exposes the
    raw :class:`StepOutcome`.
    """

    def __init__(self, cfg: SchedConfig, seed: int | None = None, log_events: bool = False):
        self.cfg = cfg
        self.K = cfg.n_servers
        self.servers = [Server(i, r) for i, r in enumerate(cfg.rates)]
        self.log_events = log_events
        self._seed_seq = np.random.SeedSequence(cfg.seed if seed is None else seed)
        self._episodes = 0
        self.state_dim = 1 + 4 * self.K
        self.n_actions = self.K
        self._bt = 1.0 / cfg.fps
        self.work_scale = 1.0 / (cfg.frame_mean * cfg.work_per_byte)
        self.env_seed = None
        self.reset()

    # -- episode setup -----------------------------------------------------
    def next_episode_seed(self) -> int:
        child = self._seed_seq.spawn(1)[0]
        return int(child.generate_state(1)[0])

    def reset(self, seed: int | None = None) -> np.ndarray:
        cfg = self.cfg
        if seed is None:
            seed = self.next_episode_seed()
        self.env_seed = seed
        self._episodes += 1
        rng = np.random.default_rng(seed)
        n = cfg.episode_len
        if cfg.frame_trace is not None:
            ft = cfg.frame_trace.raw_size
            start = int(rng.integers(len(ft)))
            self.frame_sizes = np.resize(np.roll(ft, -start), n).astype(float)
        else:
            sizes = cfg.frame_mean * (1.0 + cfg.frame_rel_std * rng.standard_normal(n))
            self.frame_sizes = np.maximum(sizes, 0.1 * cfg.frame_mean)
        self.lat = np.empty((n, self.K))
        self.thr = np.empty((n, self.K))
        self.lat_mean = np.empty(self.K)
        self.thr_mean = np.empty(self.K)
        for i, lm in enumerate(cfg.link_models(int(rng.integers(2**31)))):
            self.lat_mean[i] = lm.mean_latency
            self.thr_mean[i] = lm.mean_throughput
            thr = np.full(n, lm.mean_throughput)
            lat = np.full(n, lm.mean_latency)
            if lm.kind == "gaussian":
                r = np.random.default_rng(lm.seed)
                thr = np.maximum(thr + lm.std_throughput * r.standard_normal(n), THROUGHPUT_FLOOR)
                lat = np.maximum(lat + lm.std_latency * r.standard_normal(n), LATENCY_FLOOR)
            self.lat[:, i] = lat
            self.thr[:, i] = thr
        for s in self.servers:
            s.reset()
        self.t = 0
        self.now = 0.0
        self._seq = 0
        self.done = False
        self.events: list = []
        self.stats = {
            "cost": 0.0,
            "unsafe_steps": 0,
            "deadline_misses": 0,
            "arrivals": 0,
            "completed": 0,
            "queue_std": 0.0,
        }
        return self.observe()

    # -- observation ---------------------------------------------------------
    def observe(self) -> np.ndarray:
        """``[frame size, latencies, throughputs, backlog counts, backlog work]`` (scaled).

        Link entries are the previous epoch's measurement (the link means
        before the first epoch) unless ``link_observation == "current"``.
        """
        t = min(self.t, self.cfg.episode_len - 1)
        if self.cfg.link_observation == "current":
            lat, thr = self.lat[t], self.thr[t]
        elif t == 0:
            lat, thr = self.lat_mean, self.thr_mean
        else:
            lat, thr = self.lat[t - 1], self.thr[t - 1]
        counts = [s.n_pending for s in self.servers]
        work = [s.remaining_work(self.now) for s in self.servers]
        return np.concatenate(
            (
                [self.frame_sizes[t] * SIZE_SCALE],
                lat * LAT_SCALE,
                thr * THR_SCALE,
                np.array(counts, dtype=float) * COUNT_SCALE,
                np.array(work) * self.work_scale,
            )
        )

    def queue_lengths(self) -> np.ndarray:
        if self.cfg.queue_metric == "count":
            return np.array([s.n_pending for s in self.servers], dtype=float)
        return np.array([s.remaining_work(self.now) for s in self.servers]) * self.work_scale

    # -- dynamics --------------------------------------------------------------
    def sched_step(self, action: int) -> StepOutcome:
        if self.done:
            raise RuntimeError("episode is done; call reset()")
        if not (0 <= int(action) < self.K) or int(action) != action:
            raise ValueError(f"invalid server id {action!r}; expected 0..{self.K - 1}")
        a = int(action)
        cfg = self.cfg
        t = self.t
        size = self.frame_sizes[t]
        delay = self.lat[t, a] + 8.0 * size / self.thr[t, a]
        subs = decompose(
            size, size, cfg.fps, cfg.size_shares, cfg.deadline_ratios, cfg.work_per_byte, arrival_time=self.now, frame=t
        )
        self.servers[a].assign(subs, self.now + delay, self._seq)
        self._seq += len(subs)
        t_end = (t + 1) * self._bt
        done_now: list = []
        for s in self.servers:
            if s.n_pending:
                s.advance(t_end, done_now)
            else:
                s.clock = t_end
        self.now = t_end
        self.t += 1
        self.done = self.t >= cfg.episode_len

        n_pending = 0
        late_pending = 0
        for s in self.servers:
            if s.n_pending:
                n_pending += s.n_pending
                late_pending += s.late_pending(t_end)
        late_done = sum(1 for s in done_now if s.violated)
        st_a = len(done_now) + n_pending
        st_ddl = late_done + late_pending
        q = self.queue_lengths()
        qstd = float(q.std())
        cost = sched_cost(st_ddl, st_a, qstd)
        label = safety_label(done_now)
        pen = penalty(done_now)

        st = self.stats
        st["cost"] += cost
        st["unsafe_steps"] += label.unsafe
        st["deadline_misses"] += late_done
        st["arrivals"] += len(subs)
        st["completed"] += len(done_now)
        st["queue_std"] += qstd
        if self.log_events:
            for s in done_now:
                self.events.append(
                    (t, s.frame, s.kind, s.server, s.enqueue_t, s.start_t, s.finish_t, s.w, s.deadline, int(s.violated))
                )
        info = {
            "st_ddl": st_ddl,
            "st_a": st_a,
            "queue_std": qstd,
            "penalty": pen,
            "completed": done_now,
            "server": a,
            "delay": delay,
        }
        return StepOutcome(self.observe(), cost, label, self.done, info)

    def step(self, action: int):
        out = self.sched_step(action)
        out.info["safety"] = out.safety
        out.info["cost"] = out.cost
        return out.state, -out.cost, out.done, out.info

    def finish(self) -> list:
        """Drain all servers after the last epoch and return the late completions.

        Used by evaluation so that sub-tasks still queued at the horizon are
        counted as misses when they finally complete late.
        """
        done: list = []
        for s in self.servers:
            s.advance(math.inf, done)
        return done

    def episode_summary(self) -> dict:
        st = self.stats
        n = max(self.t, 1)
        return {
            "env_seed": self.env_seed,
            "mean_cost": st["cost"] / n,
            "indicator_mean": 1.0 - st["unsafe_steps"] / n,
            "deadline_misses": st["deadline_misses"],
            "arrivals": st["arrivals"],
            "miss_rate": st["deadline_misses"] / max(st["arrivals"], 1),
            "queue_std": st["queue_std"] / n,
        }

    def write_event_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(EVENT_LOG_HEADER)
            w.writerows(self.events)

    def utilization(self) -> np.ndarray:
        return np.array([s.busy_time for s in self.servers]) / max(self.now, 1e-12)


def observe(env: SchedEnv) -> np.ndarray:
    return env.observe()


def sched_step(env: SchedEnv, action: int) -> StepOutcome:
    return env.sched_step(action)


def make_env(cfg: SchedConfig, **overrides) -> SchedEnv:
    return SchedEnv(replace(cfg, **overrides) if overrides else cfg)
