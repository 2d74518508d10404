"""DQN agent: online and target networks, replay-driven training, hard target sync.

Environments used with :func:`train_loop` expose ``state_dim``, ``n_actions``,
``reset(seed) -> state`` and ``step(action) -> (state, reward, terminal)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import neural
from .errors import ValidationError
from .neural import Mlp
from .qcore import Hyperparameters, epsilon_greedy, epsilon_schedule
from .replay import Batch, Experience, ReplayBuffer
from .rng import derive_seed, make_rng

EXPLORE = "explore"
GREEDY = "greedy"


@dataclass(frozen=True)
class AgentConfig(Hyperparameters):
    gamma: float = 0.95
    lr: float = 1e-3
    batch_size: int = 64
    target_sync_period: int = 500
    warmup: int = 1000
    hidden_layers: tuple[int, ...] = (64, 64)
    n_actions: int = 3
    buffer_capacity: int = 100_000
    train_every: int = 1

    def __post_init__(self) -> None:
        super().__post_init__()
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.lr < 0:
            raise ValidationError("lr must be >= 0")
        for name in ("batch_size", "target_sync_period", "n_actions", "buffer_capacity", "train_every"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.warmup < 0:
            raise ValidationError("warmup must be >= 0")
        if any(h < 1 for h in self.hidden_layers):
            raise ValidationError("hidden layer sizes must be positive")

    def layer_sizes(self, state_dim: int) -> list[int]:
        return [state_dim, *self.hidden_layers, self.n_actions]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_layers"] = list(self.hidden_layers)
        return d


class DqnAgent:
    def __init__(self, online: Mlp, config: AgentConfig, target: Mlp | None = None, step_count: int = 0):
        if online.d_out != config.n_actions:
            raise ValidationError(f"network has {online.d_out} outputs, config expects {config.n_actions} actions")
        self.online = online
        self.target = online.copy() if target is None else target
        if self.target.layer_sizes != online.layer_sizes:
            raise ValidationError("online and target networks must share layer sizes")
        self.config = config
        self.step_count = step_count
        self.sync_count = 0

    @classmethod
    def create(cls, state_dim: int, config: AgentConfig, seed: int) -> "DqnAgent":
        return cls(neural.init_weights(config.layer_sizes(state_dim), seed), config)

    @property
    def state_dim(self) -> int:
        return self.online.d_in

    @property
    def epsilon(self) -> float:
        return epsilon_schedule(self.step_count, self.config)

    def q_values(self, s) -> np.ndarray:
        return neural.forward(self.online, s)

    def act(self, s, mode: str = GREEDY, rng: np.random.Generator | None = None) -> int:
        q = neural.forward(self.online, s)
        if mode == GREEDY:
            return int(np.argmax(q))
        if mode != EXPLORE:
            raise ValidationError(f"unknown mode {mode!r}")
        if rng is None:
            raise ValidationError("explore mode needs an rng")
        return epsilon_greedy(q, self.epsilon, rng)

    def compute_targets(self, batch: Batch | Sequence[Experience]) -> np.ndarray:
        """r + gamma * max_a' Q(s', a'; target) per sample, or r on terminal samples."""
        batch = _as_batch(batch)
        next_q = neural.forward(self.target, batch.next_states).max(axis=1)
        return batch.rewards + np.where(batch.terminals, 0.0, self.config.gamma * next_q)

    def train_step(self, buf: ReplayBuffer, rng: np.random.Generator) -> float | None:
        """One SGD step on a uniform replay batch; ``None`` while warming up."""
        if buf.size < self.config.warmup:
            return None
        batch = buf.sample_batch(self.config.batch_size, rng)
        loss, grads = self.loss_and_gradients(batch)
        self.online = neural.sgd_step(self.online, grads, self.config.lr)
        self.step_count += 1
        if self.step_count % self.config.target_sync_period == 0:
            self.sync_target()
        return loss

    def loss_and_gradients(self, batch: Batch, targets: np.ndarray | None = None) -> tuple[float, neural.GradientBuffer]:
        """Batch-mean squared TD error on the taken actions and its gradient.

        Untaken action outputs get a zero upstream gradient.
        """
        batch = _as_batch(batch)
        y = self.compute_targets(batch) if targets is None else np.asarray(targets, dtype=float)
        rows = np.arange(len(batch.actions))
        pred = neural.forward(self.online, batch.states)[rows, batch.actions]
        diff = pred - y
        upstream = np.zeros((len(rows), self.online.d_out))
        upstream[rows, batch.actions] = 2.0 * diff / len(rows)
        return float(np.mean(diff**2)), neural.backward(self.online, batch.states, upstream)

    def sync_target(self) -> None:
        self.target = self.online.copy()
        self.sync_count += 1

    def frozen(self) -> "DqnAgent":
        """Independent value-copy, safe to share read-only across runners."""
        clone = DqnAgent(self.online.copy(), self.config, self.target.copy(), self.step_count)
        clone.sync_count = self.sync_count
        return clone

    def save(self, path: str | Path) -> None:
        neural.save_checkpoint(
            self.online,
            path,
            step_count=self.step_count,
            extra={"target": self.target.to_dict(), "agent_config": self.config.to_dict()},
        )

    @classmethod
    def load(cls, path: str | Path) -> "DqnAgent":
        online, payload = neural.load_checkpoint(path)
        try:
            config = AgentConfig(**payload["agent_config"])
            target = Mlp.from_dict(payload["target"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"{path}: incomplete agent checkpoint ({exc})") from None
        return cls(online, config, target, int(payload["step_count"]))


def _as_batch(batch: Batch | Sequence[Experience]) -> Batch:
    if isinstance(batch, Batch):
        if len(batch.actions) == 0:
            raise ValidationError("empty batch")
        return batch
    if len(batch) == 0:
        raise ValidationError("empty batch")
    return Batch(
        np.array([e.state for e in batch], dtype=float),
        np.array([e.action for e in batch], dtype=np.int64),
        np.array([e.reward for e in batch], dtype=float),
        np.array([e.next_state for e in batch], dtype=float),
        np.array([e.terminal for e in batch], dtype=bool),
    )


@dataclass
class EpisodeRecord:
    episode: int
    steps: int
    mean_loss: float | None
    total_reward: float
    epsilon: float
    losses: list[float] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {
            "episode": self.episode,
            "steps": self.steps,
            "mean_loss": self.mean_loss,
            "total_reward": self.total_reward,
            "epsilon": self.epsilon,
        }


@dataclass
class TrainingReport:
    episodes: list[EpisodeRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.episodes)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(rec.summary()) + "\n" for rec in self.episodes)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def train_loop(
    agent: DqnAgent,
    env,
    episodes: int,
    seed: int,
    buffer: ReplayBuffer | None = None,
    step_budget: int | None = None,
) -> TrainingReport:
    """Run ``episodes`` training episodes (act, step, store, learn).

    Exploration, replay sampling and per-episode env seeds come from separate
    streams of ``seed``. ``step_budget`` caps total environment steps and may
    cut the final episode short.
    """
    if env.state_dim != agent.state_dim or env.n_actions != agent.config.n_actions:
        raise ValidationError(
            f"env (state_dim={env.state_dim}, n_actions={env.n_actions}) does not match agent "
            f"(state_dim={agent.state_dim}, n_actions={agent.config.n_actions})"
        )
    report = TrainingReport()
    if episodes <= 0:
        return report
    buf = buffer if buffer is not None else ReplayBuffer(agent.config.buffer_capacity, agent.config.n_actions)
    explore_rng = make_rng(seed, "exploration")
    sample_rng = make_rng(seed, "sampling")
    total_steps = 0
    for ep in range(episodes):
        if step_budget is not None and total_steps >= step_budget:
            break
        s = env.reset(derive_seed(seed, "env", ep))
        losses: list[float] = []
        total_reward = 0.0
        steps = 0
        terminal = False
        while not terminal:
            a = agent.act(s, EXPLORE, explore_rng)
            s2, r, terminal = env.step(a)
            buf.push(Experience(s, a, r, s2, terminal))
            total_steps += 1
            steps += 1
            total_reward += r
            if total_steps % agent.config.train_every == 0:
                loss = agent.train_step(buf, sample_rng)
                if loss is not None:
                    losses.append(loss)
            s = s2
            if step_budget is not None and total_steps >= step_budget:
                break
        mean_loss = float(np.mean(losses)) if losses else None
        report.episodes.append(EpisodeRecord(ep, steps, mean_loss, total_reward, agent.epsilon, losses))
    return report
