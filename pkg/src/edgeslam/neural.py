"""Small fully-connected networks and a synchronous actor-critic learner.

Everything here is plain numpy with hand-written backward passes; the graph is
always ``affine -> relu -> ... -> affine`` so no general autodiff is needed.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

CHECKPOINT_FORMAT = "edgeslam-mlp"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    """Raised when an update produces non-finite values."""


class WorkerError(RuntimeError):
    def __init__(self, worker_id: int, cause: BaseException):
        super().__init__(f"worker {worker_id} failed: {cause!r}")
        self.worker_id = worker_id
        self.cause = cause


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Mlp:
    """Affine layers with ReLU between them; the last layer is linear.

    ``head="softmax"`` makes :meth:`forward` return a probability vector.
    """

    def __init__(self, dims: Sequence[int], head: str = "linear", rng=None, weights=None):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        if head not in ("linear", "softmax"):
            raise ValueError(f"unknown head {head!r}")
        self.dims = [int(d) for d in dims]
        self.head = head
        if weights is not None:
            self.W = [np.array(w, dtype=float) for w, _ in weights]
            self.b = [np.array(b, dtype=float) for _, b in weights]
            for i, (w, b) in enumerate(zip(self.W, self.b)):
                if w.shape != (self.dims[i], self.dims[i + 1]) or b.shape != (self.dims[i + 1],):
                    raise ValueError(f"layer {i} has shape {w.shape}/{b.shape}, expected dims {self.dims}")
        else:
            rng = np.random.default_rng(rng)
            self.W, self.b = [], []
            for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
                lim = 1.0 / math.sqrt(fan_in)
                self.W.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
                self.b.append(rng.uniform(-lim, lim, size=fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.W, self.b):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for p in self.params:
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size

    def copy(self) -> "Mlp":
        return Mlp(self.dims, self.head, weights=[(w.copy(), b.copy()) for w, b in zip(self.W, self.b)])

    def zero_output_layer(self) -> None:
        self.W[-1][...] = 0.0
        self.b[-1][...] = 0.0

    def logits(self, x: np.ndarray) -> np.ndarray:
        h = x
        last = len(self.W) - 1
        for i, (w, b) in enumerate(zip(self.W, self.b)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dims[0]:
            raise ValueError(f"input has {x.shape[-1]} features, network expects {self.dims[0]}")
        out = self.logits(x)
        return softmax(out) if self.head == "softmax" else out

    __call__ = forward

    def forward_cached(self, x: np.ndarray):
        """Batched forward keeping the activations needed by :meth:`backward`."""
        acts = [x]
        h = x
        last = len(self.W) - 1
        for i, (w, b) in enumerate(zip(self.W, self.b)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts, grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients (in :attr:`params` order) given dLoss/d(pre-head output)."""
        grads = [None] * (2 * len(self.W))
        g = grad_out
        for i in range(len(self.W) - 1, -1, -1):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.W[i].T) * (acts[i] > 0)
        return grads

    def to_dict(self) -> dict:
        return {
            "dims": self.dims,
            "head": self.head,
            "layers": [{"W": w.tolist(), "b": b.tolist()} for w, b in zip(self.W, self.b)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        return cls(d["dims"], d.get("head", "linear"), weights=[(l["W"], l["b"]) for l in d["layers"]])


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads, ascent: bool = False) -> None:
        self.t += 1
        sign = 1.0 if ascent else -1.0
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p += sign * self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        return {"t": self.t, "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}


class Sgd:
    def __init__(self, params, lr=1e-3, momentum=0.0):
        self.params = params
        self.lr, self.momentum = lr, momentum
        self.vel = [np.zeros_like(p) for p in params]

    def step(self, grads, ascent: bool = False) -> None:
        sign = 1.0 if ascent else -1.0
        for p, g, v in zip(self.params, grads, self.vel):
            v *= self.momentum
            v += g
            p += sign * self.lr * v


def make_optimizer(name: str, params, lr: float, **kw):
    if name == "adam":
        return Adam(params, lr=lr, **kw)
    if name == "sgd":
        return Sgd(params, lr=lr, **kw)
    raise ValueError(f"unknown optimizer {name!r}")


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_by_global_norm(grads, max_norm: float | None):
    norm = global_norm(grads)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool = False


@dataclass
class Batch:
    """Column-stacked transitions."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "Batch":
        if not transitions:
            raise ValueError("empty batch")
        return cls(
            states=np.array([t.state for t in transitions], dtype=float),
            actions=np.array([t.action for t in transitions], dtype=int),
            rewards=np.array([t.reward for t in transitions], dtype=float),
            next_states=np.array([t.next_state for t in transitions], dtype=float),
            terminals=np.array([t.terminal for t in transitions], dtype=bool),
        )

    def __len__(self):
        return len(self.actions)


def as_batch(batch) -> Batch:
    return batch if isinstance(batch, Batch) else Batch.from_transitions(list(batch))


def advantage(transition: Transition, critic: Mlp, gamma: float) -> float:
    """One-step TD advantage ``r + gamma * V(s') - V(s)`` (``V(s') = 0`` when terminal)."""
    v = float(critic.forward(transition.state)[0])
    v_next = 0.0 if transition.terminal else float(critic.forward(transition.next_state)[0])
    return transition.reward + gamma * v_next - v


class ActorCritic:
    """Softmax policy and scalar critic trained with one-step advantages.

    The policy reads the first ``policy_in`` entries of a state vector and the
    critic reads all of them, which lets the critic see extra features (for
    instance a predicted safety probability) that the policy must not rely on.
    """

    def __init__(
        self,
        state_dim: int,
        n_actions: int,
        hidden: Sequence[int] = (128,),
        critic_hidden: Sequence[int] | None = None,
        policy_in: int | None = None,
        gamma: float = 0.99,
        lr_policy: float = 1e-3,
        lr_critic: float = 1e-3,
        entropy_coef: float = 0.0,
        optimizer: str = "adam",
        max_grad_norm: float | None = 5.0,
        seed: int = 0,
    ):
        if not 0 < gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if lr_policy <= 0 or lr_critic <= 0:
            raise ValueError("learning rates must be positive")
        self.state_dim = int(state_dim)
        self.policy_in = int(policy_in if policy_in is not None else state_dim)
        self.n_actions = int(n_actions)
        self.hidden = [int(h) for h in hidden]
        self.critic_hidden = [int(h) for h in (critic_hidden if critic_hidden is not None else hidden)]
        self.gamma = gamma
        self.lr_policy, self.lr_critic = lr_policy, lr_critic
        self.entropy_coef = entropy_coef
        self.optimizer_name = optimizer
        self.max_grad_norm = max_grad_norm
        rng = np.random.default_rng(seed)
        self.policy = Mlp([self.policy_in, *self.hidden, self.n_actions], head="softmax", rng=rng)
        self.critic = Mlp([self.state_dim, *self.critic_hidden, 1], rng=rng)
        self._make_optimizers()

    def _make_optimizers(self):
        self.policy_opt = make_optimizer(self.optimizer_name, self.policy.params, self.lr_policy)
        self.critic_opt = make_optimizer(self.optimizer_name, self.critic.params, self.lr_critic)

    # -- inference ---------------------------------------------------------
    def probs(self, state) -> np.ndarray:
        s = np.asarray(state, dtype=float)
        return softmax(self.policy.logits(s[..., : self.policy_in]))

    def value(self, states) -> np.ndarray:
        return self.critic.logits(np.asarray(states, dtype=float))[..., 0]

    def act(self, state, rng: np.random.Generator, greedy: bool = False) -> int:
        p = self.probs(state)
        if greedy:
            return int(np.argmax(p))
        # inverse-CDF sampling keeps one uniform draw per step
        u = rng.random()
        a = int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right"))
        return min(a, self.n_actions - 1)

    # -- objectives and gradients -------------------------------------------
    def advantages(self, batch: Batch) -> np.ndarray:
        v = self.value(batch.states)
        v_next = np.where(batch.terminals, 0.0, self.value(batch.next_states))
        return batch.rewards + self.gamma * v_next - v

    def policy_objective(self, batch: Batch, adv: np.ndarray) -> float:
        p = self.probs(batch.states)
        logp = np.log(p[np.arange(len(batch)), batch.actions])
        obj = float(np.mean(logp * adv))
        if self.entropy_coef:
            obj += self.entropy_coef * float(np.mean(-(p * np.log(p)).sum(axis=1)))
        return obj

    def policy_grad(self, batch: Batch, adv: np.ndarray) -> list[np.ndarray]:
        """Gradient of :meth:`policy_objective` (ascent direction), advantages held fixed."""
        x = batch.states[:, : self.policy_in]
        logits, acts = self.policy.forward_cached(x)
        p = softmax(logits)
        n = len(batch)
        onehot = np.zeros_like(p)
        onehot[np.arange(n), batch.actions] = 1.0
        g = (onehot - p) * adv[:, None] / n
        if self.entropy_coef:
            logp = np.log(p)
            h = -(p * logp).sum(axis=1, keepdims=True)
            g += self.entropy_coef * (-p * (logp + h)) / n
        return self.policy.backward(acts, g)

    def critic_loss(self, batch: Batch, targets: np.ndarray) -> float:
        return float(np.mean((targets - self.value(batch.states)) ** 2))

    def td_targets(self, batch: Batch) -> np.ndarray:
        v_next = np.where(batch.terminals, 0.0, self.value(batch.next_states))
        return batch.rewards + self.gamma * v_next

    def critic_grad(self, batch: Batch, targets: np.ndarray) -> list[np.ndarray]:
        """Semi-gradient of the squared TD error: targets are constants."""
        v, acts = self.critic.forward_cached(batch.states)
        g = -2.0 * (targets - v[:, 0])[:, None] / len(batch)
        return self.critic.backward(acts, g)

    def gradients(self, batch, adv: np.ndarray | None = None):
        """Policy (ascent) and critic (descent) gradients for one batch."""
        batch = as_batch(batch)
        if adv is None:
            adv = self.advantages(batch)
        targets = self.td_targets(batch)
        return self.policy_grad(batch, adv), self.critic_grad(batch, targets), adv, targets

    # -- updates -------------------------------------------------------------
    def apply(self, policy_grads, critic_grads) -> dict:
        for name, grads in (("policy", policy_grads), ("critic", critic_grads)):
            if not all(np.all(np.isfinite(g)) for g in grads):
                bad = [i for i, g in enumerate(grads) if not np.all(np.isfinite(g))]
                raise TrainingError(f"non-finite {name} gradient in parameter tensors {bad}")
        pg, pnorm = clip_by_global_norm(policy_grads, self.max_grad_norm)
        cg, cnorm = clip_by_global_norm(critic_grads, self.max_grad_norm)
        self.policy_opt.step(pg, ascent=True)
        self.critic_opt.step(cg)
        for net in (self.policy, self.critic):
            if not all(np.all(np.isfinite(p)) for p in net.params):
                raise TrainingError("parameters became non-finite after update")
        return {"policy_grad_norm": pnorm, "critic_grad_norm": cnorm}

    def policy_step(self, batch, adv: np.ndarray | None = None) -> dict:
        """Gradient ascent on ``sum log pi(a|s) * A`` (averaged over the batch)."""
        batch = as_batch(batch)
        if adv is None:
            adv = self.advantages(batch)
        grads = self.policy_grad(batch, adv)
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingError(f"non-finite policy gradient; |adv|max={np.max(np.abs(adv))}")
        grads, norm = clip_by_global_norm(grads, self.max_grad_norm)
        self.policy_opt.step(grads, ascent=True)
        return {"grad_norm": norm, "mean_advantage": float(np.mean(adv))}

    def critic_step(self, batch) -> float:
        batch = as_batch(batch)
        targets = self.td_targets(batch)
        loss = self.critic_loss(batch, targets)
        grads = self.critic_grad(batch, targets)
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingError(f"non-finite critic gradient; loss={loss}")
        grads, _ = clip_by_global_norm(grads, self.max_grad_norm)
        self.critic_opt.step(grads)
        return loss

    # -- snapshots -----------------------------------------------------------
    def get_params(self) -> tuple[np.ndarray, np.ndarray]:
        return self.policy.get_flat(), self.critic.get_flat()

    def set_params(self, params) -> None:
        self.policy.set_flat(params[0])
        self.critic.set_flat(params[1])

    def snapshot(self) -> "ActorCritic":
        """Read-only copy for a worker; optimizers are not carried over."""
        ac = ActorCritic.__new__(ActorCritic)
        ac.__dict__.update({k: v for k, v in self.__dict__.items() if k not in ("policy", "critic", "policy_opt", "critic_opt")})
        ac.policy = self.policy.copy()
        ac.critic = self.critic.copy()
        ac.policy_opt = ac.critic_opt = None
        return ac

    def config(self) -> dict:
        return {
            "state_dim": self.state_dim,
            "policy_in": self.policy_in,
            "n_actions": self.n_actions,
            "hidden": self.hidden,
            "critic_hidden": self.critic_hidden,
            "gamma": self.gamma,
            "lr_policy": self.lr_policy,
            "lr_critic": self.lr_critic,
            "entropy_coef": self.entropy_coef,
            "optimizer": self.optimizer_name,
            "max_grad_norm": self.max_grad_norm,
        }

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "kind": "actor_critic",
            "config": self.config(),
            "policy": self.policy.to_dict(),
            "critic": self.critic.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActorCritic":
        if d.get("format") != CHECKPOINT_FORMAT or d.get("kind") != "actor_critic":
            raise ValueError("not an actor-critic checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')}")
        ac = cls(**d["config"])
        ac.policy = Mlp.from_dict(d["policy"])
        ac.critic = Mlp.from_dict(d["critic"])
        if ac.policy.dims[0] != ac.policy_in or ac.policy.dims[-1] != ac.n_actions:
            raise ValueError(f"policy dims {ac.policy.dims} disagree with config")
        if ac.critic.dims[0] != ac.state_dim:
            raise ValueError(f"critic dims {ac.critic.dims} disagree with config")
        ac._make_optimizers()
        return ac


def save_checkpoint(ac: ActorCritic, path, extra: dict | None = None) -> None:
    d = ac.to_dict()
    if extra:
        d["extra"] = extra
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w") as fh:
        json.dump(d, fh)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ActorCritic, dict]:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise ValueError(f"corrupt checkpoint {path}: {e}") from None
    try:
        return ActorCritic.from_dict(d), d.get("extra", {})
    except (KeyError, TypeError) as e:
        raise ValueError(f"corrupt checkpoint {path}: missing {e}") from None


# ---------------------------------------------------------------------------
# Synchronous parallel training
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    """One worker episode: stacked transitions plus environment bookkeeping."""

    worker_id: int
    env_seed: int
    batch: Batch
    info: dict = field(default_factory=dict)
    adv: np.ndarray | None = None

    @property
    def total_reward(self) -> float:
        return float(self.batch.rewards.sum())


def rollout(env, ac: ActorCritic, rng: np.random.Generator, greedy: bool = False, max_steps: int | None = None):
    """Run one episode of ``env`` under ``ac``; returns ``(Batch, info)``.

    ``env`` follows ``reset() -> state`` and ``step(a) -> (state, reward, done, info)``.
    ``env.episode_summary()`` is attached to the returned info if present.
    """
    s = np.asarray(env.reset(), dtype=float)
    states, actions, rewards, nexts, terms = [], [], [], [], []
    done = False
    steps = 0
    while not done:
        a = ac.act(s, rng, greedy=greedy)
        s2, r, done, _ = env.step(a)
        s2 = np.asarray(s2, dtype=float)
        states.append(s)
        actions.append(a)
        rewards.append(r)
        nexts.append(s2)
        terms.append(done)
        s = s2
        steps += 1
        if max_steps is not None and steps >= max_steps:
            break
    batch = Batch(np.array(states), np.array(actions), np.array(rewards, dtype=float), np.array(nexts), np.array(terms))
    info = env.episode_summary() if hasattr(env, "episode_summary") else {}
    return batch, info


def worker_seeds(seed: int, workers: int) -> list[int]:
    """Distinct, reproducible seeds per worker."""
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(workers)]


def parallel_train(
    env_factory: Callable,
    ac: ActorCritic,
    workers: int,
    episodes: int,
    seed: int,
    *,
    collect: Callable | None = None,
    on_round: Callable | None = None,
    callback: Callable | None = None,
):
    """Synchronous decentralised-rollout / centralised-update actor-critic training.

    Each worker owns ``env_factory(worker_id, worker_seed)``.  Per round every
    worker runs one episode against a read-only parameter snapshot and returns
    its gradients; the learner averages them, applies one optimizer step and
    broadcasts fresh parameters.  ``episodes`` counts worker-episodes, so a run
    has ``ceil(episodes / workers)`` rounds.

    ``collect(trajectory, snapshot)`` may rewrite a trajectory before its
    gradients are taken (reward shaping); ``on_round(round_idx, trajectories)``
    runs on the learner after the update.  Returns ``(ac, metrics)`` with one
    metrics dict per worker-episode.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    seeds = worker_seeds(seed, workers)
    envs = []
    for wid in range(workers):
        try:
            envs.append(env_factory(wid, seeds[wid]))
        except Exception as e:  # noqa: BLE001 - reported with the worker id
            raise WorkerError(wid, e) from e
    rngs = [np.random.default_rng(s) for s in seeds]
    metrics: list[dict] = []
    n_rounds = -(-episodes // workers)
    episode = 0
    for rnd in range(n_rounds):
        snap = ac.snapshot()
        active = min(workers, episodes - episode)
        trajs, pgrads, cgrads = [], [], []
        for wid in range(active):
            try:
                batch, info = rollout(envs[wid], snap, rngs[wid])
                traj = Trajectory(wid, info.get("env_seed", seeds[wid]), batch, info)
                if collect is not None:
                    traj = collect(traj, snap)
                pg, cg, adv, _ = snap.gradients(traj.batch, adv=traj.adv)
                traj.adv = adv
            except TrainingError:
                raise
            except Exception as e:  # noqa: BLE001
                raise WorkerError(wid, e) from e
            trajs.append(traj)
            pgrads.append(pg)
            cgrads.append(cg)
        pg = [np.mean([g[i] for g in pgrads], axis=0) for i in range(len(pgrads[0]))]
        cg = [np.mean([g[i] for g in cgrads], axis=0) for i in range(len(cgrads[0]))]
        norms = ac.apply(pg, cg)
        for traj in trajs:
            m = {
                "episode": episode,
                "round": rnd,
                "worker": traj.worker_id,
                "env_seed": traj.env_seed,
                "total_reward": traj.total_reward,
                "mean_reward": float(traj.batch.rewards.mean()),
                "steps": len(traj.batch),
                **{k: v for k, v in traj.info.items() if np.isscalar(v)},
                **norms,
            }
            metrics.append(m)
            if callback is not None:
                callback(m)
            episode += 1
        if on_round is not None:
            on_round(rnd, trajs)
    return ac, metrics
