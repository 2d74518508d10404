"""Tabular Q-learning and a value-iteration oracle on small finite MDPs.

The tabular learner applies the one-step update

    Q(s, a) += alpha * (r + gamma * max_a' Q(s', a') - Q(s, a))

with the max term taken as 0 on terminal transitions. The oracle solves the
Bellman optimality equation directly and is used as ground truth for both
the tabular learner and the DQN agent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConvergenceError, ValidationError

ORACLE_MAX_SWEEPS = 100_000
_PROB_TOL = 1e-12


class Outcome(NamedTuple):
    prob: float
    next_state: int
    reward: float
    terminal: bool


class Transition(NamedTuple):
    """A single transition over discrete state/action indices."""

    s: int
    a: int
    r: float
    s2: int
    terminal: bool = False


@dataclass(frozen=True)
class Hyperparameters:
    alpha: float = 0.1
    gamma: float = 0.95
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 10_000

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValidationError(f"gamma must lie in [0, 1), got {self.gamma}")
        for name in ("epsilon_start", "epsilon_end"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")
        if self.epsilon_end > self.epsilon_start:
            raise ValidationError("epsilon_end must not exceed epsilon_start")
        if self.epsilon_decay_steps < 0:
            raise ValidationError("epsilon_decay_steps must be >= 0")


class DiscreteMdp:
    """Finite MDP with an explicit outcome list for every (state, action).

    Args:
        n_states: number of states.
        n_actions: number of actions.
        outcomes: ``outcomes[s][a]`` is a list of :class:`Outcome`; a
            deterministic MDP has exactly one outcome with probability 1.
    """

    def __init__(self, n_states: int, n_actions: int, outcomes: Sequence[Sequence[Sequence[Outcome]]]):
        if n_states < 1 or n_actions < 1:
            raise ValidationError("n_states and n_actions must be positive")
        if len(outcomes) != n_states or any(len(row) != n_actions for row in outcomes):
            raise ValidationError("outcomes must be indexed [n_states][n_actions]")
        table = []
        for s, row in enumerate(outcomes):
            new_row = []
            for a, outs in enumerate(row):
                if not outs:
                    raise ValidationError(f"no outcome for (s={s}, a={a})")
                cleaned = []
                for o in outs:
                    o = Outcome(float(o[0]), int(o[1]), float(o[2]), bool(o[3]))
                    if not 0 <= o.next_state < n_states:
                        raise ValidationError(f"next_state {o.next_state} out of range at (s={s}, a={a})")
                    if not (0.0 <= o.prob <= 1.0) or not math.isfinite(o.reward):
                        raise ValidationError(f"bad probability or reward at (s={s}, a={a})")
                    cleaned.append(o)
                total = math.fsum(o.prob for o in cleaned)
                if abs(total - 1.0) > _PROB_TOL:
                    raise ValidationError(f"probabilities at (s={s}, a={a}) sum to {total!r}")
                new_row.append(tuple(cleaned))
            table.append(tuple(new_row))
        self.n_states = n_states
        self.n_actions = n_actions
        self.outcomes = tuple(table)

    @property
    def is_deterministic(self) -> bool:
        return all(len(outs) == 1 for row in self.outcomes for outs in row)

    def expected_reward(self) -> np.ndarray:
        r = np.zeros((self.n_states, self.n_actions))
        for s, row in enumerate(self.outcomes):
            for a, outs in enumerate(row):
                r[s, a] = math.fsum(o.prob * o.reward for o in outs)
        return r

    def continuation(self) -> np.ndarray:
        """P[s, a, s2]: probability of landing in s2 on a non-terminal transition."""
        p = np.zeros((self.n_states, self.n_actions, self.n_states))
        for s, row in enumerate(self.outcomes):
            for a, outs in enumerate(row):
                for o in outs:
                    if not o.terminal:
                        p[s, a, o.next_state] += o.prob
        return p

    def sample(self, s: int, a: int, rng: np.random.Generator | None = None) -> Outcome:
        outs = self.outcomes[s][a]
        if len(outs) == 1:
            return outs[0]
        if rng is None:
            raise ValidationError("stochastic transition needs an rng")
        u = rng.random()
        acc = 0.0
        for o in outs:
            acc += o.prob
            if u < acc:
                return o
        return outs[-1]

    def permuted(self, perm: Sequence[int]) -> "DiscreteMdp":
        """Relabel states so that old state ``s`` becomes ``perm[s]``."""
        inv = np.argsort(perm)
        outcomes = []
        for new_s in range(self.n_states):
            old_row = self.outcomes[inv[new_s]]
            outcomes.append([[o._replace(next_state=int(perm[o.next_state])) for o in outs] for outs in old_row])
        return DiscreteMdp(self.n_states, self.n_actions, outcomes)

    @classmethod
    def from_dict(cls, data: dict) -> "DiscreteMdp":
        try:
            n_s, n_a = int(data["n_states"]), int(data["n_actions"])
            rows = data["transitions"]
        except KeyError as exc:
            raise ValidationError(f"MDP fixture missing key {exc}") from None
        outcomes: list[list[list[Outcome]]] = [[[] for _ in range(n_a)] for _ in range(n_s)]
        for i, row in enumerate(rows):
            if len(row) != 6:
                raise ValidationError(f"transition {i}: expected [s, a, p, s2, r, terminal]")
            s, a, p, s2, r, term = row
            if not (0 <= s < n_s and 0 <= a < n_a):
                raise ValidationError(f"transition {i}: (s={s}, a={a}) out of range")
            outcomes[s][a].append(Outcome(float(p), int(s2), float(r), bool(term)))
        return cls(n_s, n_a, outcomes)

    def to_dict(self) -> dict:
        rows = []
        for s, row in enumerate(self.outcomes):
            for a, outs in enumerate(row):
                for o in outs:
                    rows.append([s, a, o.prob, o.next_state, o.reward, o.terminal])
        return {"n_states": self.n_states, "n_actions": self.n_actions, "transitions": rows}


def load_mdp(path: str | Path) -> DiscreteMdp:
    with open(path, encoding="utf-8") as fh:
        return DiscreteMdp.from_dict(json.load(fh))


def fixture_path(name: str) -> Path:
    return Path(__file__).with_name("fixtures") / name


def _apply_update(q: np.ndarray, t: Transition, alpha: float, gamma: float) -> None:
    old = q[t.s, t.a]
    target = t.r if t.terminal else t.r + gamma * q[t.s2].max()
    q[t.s, t.a] = old + alpha * (target - old)


def _check_transition(q: np.ndarray, t: Transition) -> None:
    n_s, n_a = q.shape
    if not (0 <= t.s < n_s and 0 <= t.s2 < n_s):
        raise IndexError(f"state index out of range for {n_s} states: {t}")
    if not 0 <= t.a < n_a:
        raise IndexError(f"action index out of range for {n_a} actions: {t}")
    if not math.isfinite(t.r):
        raise ValidationError(f"non-finite reward {t.r!r}")


def bellman_update(q: np.ndarray, t: Transition, h: Hyperparameters) -> np.ndarray:
    """Return a copy of ``q`` with the single entry ``(t.s, t.a)`` updated."""
    _check_transition(q, t)
    out = q.copy()
    _apply_update(out, t, h.alpha, h.gamma)
    return out


def sweep(q: np.ndarray, mdp: DiscreteMdp, h: Hyperparameters, rng: np.random.Generator | None = None) -> np.ndarray:
    """One pass of Q-learning updates over every (s, a) in row-major order.

    Updates are applied in sequence, so later pairs see earlier results.
    Stochastic MDPs draw one sampled outcome per pair from ``rng``.
    """
    out = np.array(q, dtype=float, copy=True)
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            o = mdp.sample(s, a, rng)
            _apply_update(out, Transition(s, a, o.reward, o.next_state, o.terminal), h.alpha, h.gamma)
    return out


def bellman_operator(q: np.ndarray, reward: np.ndarray, cont: np.ndarray, gamma: float) -> np.ndarray:
    return reward + gamma * cont @ q.max(axis=1)


def bellman_residual(q: np.ndarray, mdp: DiscreteMdp, gamma: float) -> float:
    return float(np.abs(q - bellman_operator(q, mdp.expected_reward(), mdp.continuation(), gamma)).max())


def value_iteration_oracle(mdp: DiscreteMdp, gamma: float, tol: float = 1e-12) -> np.ndarray:
    """Bellman-optimal Q-table with residual ``max |Q - T(Q)| < tol``."""
    if not 0.0 <= gamma < 1.0:
        raise ValidationError(f"gamma must lie in [0, 1), got {gamma}")
    if tol <= 0:
        raise ValidationError("tol must be positive")
    reward, cont = mdp.expected_reward(), mdp.continuation()
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(ORACLE_MAX_SWEEPS):
        tq = bellman_operator(q, reward, cont, gamma)
        if np.abs(tq - q).max() < tol:
            return q
        q = tq
    raise ConvergenceError(f"value iteration did not reach tol={tol} in {ORACLE_MAX_SWEEPS} sweeps")


def greedy_policy(q: np.ndarray) -> np.ndarray:
    return np.argmax(q, axis=1)


def epsilon_greedy(q_row, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy action; argmax ties go to the lowest index.

    With ``epsilon == 0`` no random numbers are drawn.
    """
    q_row = np.asarray(q_row, dtype=float)
    if q_row.ndim != 1 or q_row.size == 0:
        raise ValidationError("q_row must be a non-empty vector")
    if not np.all(np.isfinite(q_row)):
        raise ValidationError("q_row has non-finite entries")
    if not 0.0 <= epsilon <= 1.0:
        raise ValidationError(f"epsilon must lie in [0, 1], got {epsilon}")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(q_row.size))
    return int(np.argmax(q_row))


def epsilon_schedule(step: int, h: Hyperparameters) -> float:
    if step < 0:
        raise ValidationError("step must be >= 0")
    if h.epsilon_decay_steps == 0 or step >= h.epsilon_decay_steps:
        return h.epsilon_end
    frac = step / h.epsilon_decay_steps
    return h.epsilon_start + (h.epsilon_end - h.epsilon_start) * frac


class MdpEnv:
    """Environment adapter exposing a DiscreteMdp with one-hot observations.

    Episodes start in a state drawn uniformly from ``start_states`` and end on
    a terminal transition or after ``max_steps`` steps.
    """

    def __init__(self, mdp: DiscreteMdp, start_states: Sequence[int] | None = None, max_steps: int = 100):
        self.mdp = mdp
        self.start_states = list(start_states) if start_states is not None else list(range(mdp.n_states))
        self.max_steps = max_steps
        self.state_dim = mdp.n_states
        self.n_actions = mdp.n_actions
        self._s = 0
        self._t = 0
        self._rng = np.random.default_rng(0)

    def _obs(self) -> np.ndarray:
        x = np.zeros(self.state_dim)
        x[self._s] = 1.0
        return x

    def reset(self, seed: int) -> np.ndarray:
        self._rng = np.random.default_rng(seed)
        self._s = int(self.start_states[self._rng.integers(len(self.start_states))])
        self._t = 0
        return self._obs()

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        o = self.mdp.sample(self._s, int(action), self._rng)
        self._s = o.next_state
        self._t += 1
        return self._obs(), o.reward, o.terminal or self._t >= self.max_steps


def random_mdp(n_states: int, n_actions: int, seed: int, deterministic: bool = True, p_terminal: float = 0.1) -> DiscreteMdp:
    """Seeded random MDP with rewards in [-1, 1]; stochastic variants get 2-3 outcomes per pair."""
    rng = np.random.default_rng(seed)
    outcomes = []
    for _ in range(n_states):
        row = []
        for _ in range(n_actions):
            k = 1 if deterministic else int(rng.integers(2, 4))
            probs = [1.0] if k == 1 else list(rng.dirichlet(np.ones(k)))
            if k > 1:
                probs[-1] = 1.0 - math.fsum(probs[:-1])
            row.append(
                [
                    Outcome(p, int(rng.integers(n_states)), float(rng.uniform(-1, 1)), bool(rng.random() < p_terminal))
                    for p in probs
                ]
            )
        outcomes.append(row)
    return DiscreteMdp(n_states, n_actions, outcomes)
