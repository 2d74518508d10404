"""Episode runner, trade ledger, performance metrics and evaluation reports."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence, Union

import jsonschema
import numpy as np

from .agent import DqnAgent
from .errors import ValidationError
from .features import SIGMA_FLOOR
from .market import Action, EnvConfig, MarketEnv
from .rng import make_rng

LEDGER_HEADER = ["t", "action", "qty", "level", "cost", "step_pnl", "position"]
METRIC_NAMES = ("total_pnl", "mean_step_pnl", "risk_adjusted", "max_drawdown", "turnover", "n_trades")


class FlatPolicy:
    name = "flat"

    def __call__(self, state: np.ndarray) -> int:
        return int(Action.HOLD)


class RandomPolicy:
    name = "random"

    def __init__(self, rng: np.random.Generator, n_actions: int = len(Action)):
        self.rng = rng
        self.n_actions = n_actions

    def __call__(self, state: np.ndarray) -> int:
        return int(self.rng.integers(self.n_actions))


class GreedyPolicy:
    name = "agent"

    def __init__(self, agent: DqnAgent):
        self.agent = agent

    def __call__(self, state: np.ndarray) -> int:
        return self.agent.act(state)


class ScriptedPolicy:
    """Plays back a fixed action sequence."""

    name = "scripted"

    def __init__(self, actions: Sequence[int]):
        self.actions = list(actions)
        self._i = 0

    def __call__(self, state: np.ndarray) -> int:
        a = self.actions[self._i]
        self._i += 1
        return int(a)


PolicySpec = Union[str, DqnAgent, Sequence[int]]


def make_policy(policy: PolicySpec, seed: int):
    """Fresh per-episode policy; random draws come from the episode seed's policy stream."""
    if isinstance(policy, DqnAgent):
        return GreedyPolicy(policy)
    if policy == "flat":
        return FlatPolicy()
    if policy == "random":
        return RandomPolicy(make_rng(seed, "policy"))
    if isinstance(policy, str):
        raise ValidationError(f"unknown policy {policy!r}; expected agent, random or flat")
    return ScriptedPolicy(policy)


def policy_name(policy: PolicySpec) -> str:
    if isinstance(policy, DqnAgent):
        return "agent"
    return policy if isinstance(policy, str) else "scripted"


class LedgerEntry(NamedTuple):
    t: int
    action: int
    qty: int
    level: float
    cost: float
    step_pnl: float
    position: int


@dataclass
class Ledger:
    entries: list[LedgerEntry]
    episode_seed: int
    final_cash: float = 0.0

    @property
    def actions(self) -> list[int]:
        return [e.action for e in self.entries]

    @property
    def step_pnls(self) -> list[float]:
        return [e.step_pnl for e in self.entries]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LEDGER_HEADER)
            for e in self.entries:
                w.writerow([e.t, Action(e.action).name.lower(), e.qty, repr(e.level), repr(e.cost), repr(e.step_pnl), e.position])


def run_episode(policy: PolicySpec, env_cfg: EnvConfig, seed: int) -> Ledger:
    """Roll one full episode without learning; agents act greedily."""
    if isinstance(policy, DqnAgent) and policy.state_dim != env_cfg.state_dim:
        raise ValidationError(f"agent expects state length {policy.state_dim}, env produces {env_cfg.state_dim}")
    act = make_policy(policy, seed)
    env = MarketEnv(env_cfg)
    state = env.reset(seed)
    entries: list[LedgerEntry] = []
    terminal = False
    while not terminal:
        state, _, terminal = env.step(act(state))
        entries.append(LedgerEntry(*env.last_step))
    return Ledger(entries, seed, env.cash)


@dataclass
class Metrics:
    total_pnl: float
    mean_step_pnl: float
    risk_adjusted: float
    max_drawdown: float
    turnover: int
    n_trades: int

    def to_dict(self) -> dict:
        return asdict(self)


def max_drawdown(step_pnls) -> float:
    """Most negative peak-to-trough move of cumulative pnl, starting from 0."""
    cum = np.concatenate([[0.0], np.cumsum(np.asarray(step_pnls, dtype=float))])
    return float(min(0.0, np.min(cum - np.maximum.accumulate(cum))))


def compute_metrics(ledger: Ledger) -> Metrics:
    if not ledger.entries:
        raise ValidationError("cannot compute metrics of an empty ledger")
    pnl = np.array(ledger.step_pnls)
    total = math.fsum(ledger.step_pnls)
    return Metrics(
        total_pnl=total,
        mean_step_pnl=total / pnl.size,
        risk_adjusted=float(np.mean(pnl) / max(float(np.std(pnl)), SIGMA_FLOOR)),
        max_drawdown=max_drawdown(pnl),
        turnover=int(sum(e.qty for e in ledger.entries)),
        n_trades=int(sum(1 for e in ledger.entries if e.qty > 0)),
    )


def aggregate(per_episode: Sequence[Metrics]) -> dict:
    """Mean, sample standard deviation and standard error of every metric."""
    out = {}
    n = len(per_episode)
    for name in METRIC_NAMES:
        x = np.array([getattr(m, name) for m in per_episode], dtype=float)
        sd = float(np.std(x, ddof=1)) if n > 1 else 0.0
        out[name] = {"mean": float(np.mean(x)), "std": sd, "stderr": sd / math.sqrt(n)}
    return out


def config_digest(env_cfg: EnvConfig, policy: PolicySpec) -> str:
    d = {"env": env_cfg.to_dict(), "policy": policy_name(policy)}
    if isinstance(policy, DqnAgent):
        d["agent"] = policy.online.digest()
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


@dataclass
class EvaluationReport:
    config_digest: str
    policy: str
    seed: int
    per_episode: list[Metrics]
    aggregate: dict
    ledgers: list[Ledger] = field(default_factory=list, repr=False)

    @property
    def n_episodes(self) -> int:
        return len(self.per_episode)

    def to_dict(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "policy": self.policy,
            "seed": self.seed,
            "n_episodes": self.n_episodes,
            "per_episode": [dict(episode=i, episode_seed=self.seed + i, **m.to_dict()) for i, m in enumerate(self.per_episode)],
            "aggregate": self.aggregate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        validate_report(d)
        per = [Metrics(**{k: row[k] for k in METRIC_NAMES}) for row in d["per_episode"]]
        return cls(d["config_digest"], d["policy"], d["seed"], per, d["aggregate"])


_STAT = {
    "type": "object",
    "properties": {k: {"type": "number"} for k in ("mean", "std", "stderr")},
    "required": ["mean", "std", "stderr"],
    "additionalProperties": False,
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["config_digest", "policy", "seed", "n_episodes", "per_episode", "aggregate"],
    "additionalProperties": False,
    "properties": {
        "config_digest": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "policy": {"type": "string"},
        "seed": {"type": "integer"},
        "n_episodes": {"type": "integer", "minimum": 1},
        "per_episode": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["episode", "episode_seed", *METRIC_NAMES],
                "additionalProperties": False,
                "properties": {
                    "episode": {"type": "integer"},
                    "episode_seed": {"type": "integer"},
                    "total_pnl": {"type": "number"},
                    "mean_step_pnl": {"type": "number"},
                    "risk_adjusted": {"type": "number"},
                    "max_drawdown": {"type": "number", "maximum": 0},
                    "turnover": {"type": "integer", "minimum": 0},
                    "n_trades": {"type": "integer", "minimum": 0},
                },
            },
        },
        "aggregate": {
            "type": "object",
            "required": list(METRIC_NAMES),
            "additionalProperties": False,
            "properties": {k: _STAT for k in METRIC_NAMES},
        },
    },
}


def validate_report(d: dict) -> None:
    try:
        jsonschema.validate(d, REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ValidationError(f"evaluation report: {exc.message}") from None
    if len(d["per_episode"]) != d["n_episodes"]:
        raise ValidationError("evaluation report: n_episodes does not match per_episode length")


def evaluate(policy: PolicySpec, env_cfg: EnvConfig, n_episodes: int, seed: int, jobs: int = 1) -> EvaluationReport:
    """Run ``n_episodes`` episodes with seeds ``seed + i`` and aggregate metrics.

    With ``jobs > 1`` episodes run on a thread pool against a frozen copy of
    the agent; results are folded in episode order either way.
    """
    if n_episodes < 1:
        raise ValidationError("n_episodes must be >= 1")
    if isinstance(policy, DqnAgent):
        policy = policy.frozen()
    seeds = [seed + i for i in range(n_episodes)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            ledgers = list(pool.map(lambda s: run_episode(policy, env_cfg, s), seeds))
    else:
        ledgers = [run_episode(policy, env_cfg, s) for s in seeds]
    per = [compute_metrics(led) for led in ledgers]
    return EvaluationReport(config_digest(env_cfg, policy), policy_name(policy), seed, per, aggregate(per), ledgers)
