"""Trading environment over a simulated OU spread or replayed bid/ask bars.

Inventory is band-limited to {-1, 0, +1}: Buy moves one unit toward +1,
Sell one unit toward -1, Hold keeps the position. Trades execute at the
current level, then the level advances and the held position is marked to
market. At ``episode_len`` the position is flattened at cost and the episode
ends.
"""

from __future__ import annotations

import csv
import hashlib
import math
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import StateError, ValidationError, WarmupError
from .features import SIGMA_FLOOR, Bar, FeatureConfig, FeatureTracker
from .rng import make_rng

CSV_HEADER = ["timestamp", "bid", "ask", "volume"]
SIM_T0_US = 1_700_000_000_000_000
SIM_BAR_US = 1_000_000
VOLUME_SCALE = 1000.0
VOLUME_LOG_SIGMA = 0.25
REWARD_MODES = ("raw_pnl", "risk_adjusted")


class Action(IntEnum):
    HOLD = 0
    BUY = 1
    SELL = 2


@dataclass(frozen=True)
class OuParams:
    mu: float = 100.0
    kappa: float = 0.1
    sigma: float = math.sqrt(0.19)
    dt: float = 1.0
    s0: float = 100.0

    def __post_init__(self) -> None:
        if self.kappa < 0 or self.sigma < 0:
            raise ValidationError("kappa and sigma must be >= 0")
        if self.dt <= 0:
            raise ValidationError("dt must be positive")
        if self.kappa * self.dt > 1:
            raise ValidationError(f"kappa*dt must be <= 1, got {self.kappa * self.dt}")

    @property
    def phi(self) -> float:
        """AR(1) coefficient of the discretized process."""
        return 1.0 - self.kappa * self.dt

    def stationary_std(self) -> float:
        if self.kappa == 0:
            return math.inf
        return self.sigma * math.sqrt(self.dt / (1.0 - self.phi**2))


def ou_step(level, p: OuParams, rng: np.random.Generator):
    """Euler step ``level + kappa (mu - level) dt + sigma sqrt(dt) z``.

    Works elementwise on arrays, drawing one normal per element.
    """
    z = rng.standard_normal(np.shape(level))
    out = level + p.kappa * (p.mu - level) * p.dt + p.sigma * math.sqrt(p.dt) * z
    return float(out) if np.ndim(out) == 0 else out


class BarSeries:
    """Column-wise bar storage with validated invariants."""

    def __init__(self, timestamp, bid, ask, volume):
        self.timestamp = np.asarray(timestamp, dtype=np.int64)
        self.bid = np.asarray(bid, dtype=float)
        self.ask = np.asarray(ask, dtype=float)
        self.volume = np.asarray(volume, dtype=float)
        n = self.timestamp.size
        if not (self.bid.size == self.ask.size == self.volume.size == n):
            raise ValidationError("bar columns must have equal length")
        if n and not (np.all(self.bid > 0) and np.all(self.ask >= self.bid) and np.all(self.volume >= 0)):
            raise ValidationError("bars must satisfy ask >= bid > 0 and volume >= 0")
        if n > 1 and not np.all(np.diff(self.timestamp) > 0):
            raise ValidationError("bar timestamps must be strictly increasing")

    def __len__(self) -> int:
        return int(self.timestamp.size)

    def __getitem__(self, i: int) -> Bar:
        return Bar(int(self.timestamp[i]), float(self.bid[i]), float(self.ask[i]), float(self.volume[i]))

    @property
    def mid(self) -> np.ndarray:
        return (self.bid + self.ask) / 2.0

    def digest(self) -> str:
        h = hashlib.sha256()
        for col in (self.timestamp.astype("<i8"), self.bid.astype("<f8"), self.ask.astype("<f8"), self.volume.astype("<f8")):
            h.update(col.tobytes())
        return h.hexdigest()


def read_bars_csv(path: str | Path) -> BarSeries:
    """Load ``timestamp,bid,ask,volume`` bars; malformed rows raise with their line number."""
    ts, bid, ask, vol = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValidationError(f"{path}:1: expected header {','.join(CSV_HEADER)}, got {header}")
        prev = None
        for row in reader:
            line = reader.line_num
            if len(row) != 4:
                raise ValidationError(f"{path}:{line}: expected 4 fields, got {len(row)}")
            try:
                t = int(row[0])
                b, a, v = float(row[1]), float(row[2]), float(row[3])
            except ValueError as exc:
                raise ValidationError(f"{path}:{line}: {exc}") from None
            if not all(math.isfinite(x) for x in (b, a, v)):
                raise ValidationError(f"{path}:{line}: non-finite value")
            if not (a >= b > 0):
                raise ValidationError(f"{path}:{line}: need ask >= bid > 0, got bid={b} ask={a}")
            if v < 0:
                raise ValidationError(f"{path}:{line}: negative volume {v}")
            if prev is not None and t <= prev:
                raise ValidationError(f"{path}:{line}: timestamp {t} not after {prev}")
            prev = t
            ts.append(t)
            bid.append(b)
            ask.append(a)
            vol.append(v)
    return BarSeries(ts, bid, ask, vol)


def write_bars_csv(bars: BarSeries, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i in range(len(bars)):
            w.writerow([int(bars.timestamp[i]), repr(float(bars.bid[i])), repr(float(bars.ask[i])), repr(float(bars.volume[i]))])


def simulate_bars(ou: OuParams, half_spread: float, n: int, seed: int) -> BarSeries:
    """OU-driven synthetic bars: bid/ask at level -/+ half_spread, log-normal volume."""
    price_rng = make_rng(seed, "price")
    volume_rng = make_rng(seed, "volume")
    levels = np.empty(n)
    level = ou.s0
    for i in range(n):
        levels[i] = level
        level = ou_step(level, ou, price_rng)
    volume = VOLUME_SCALE * np.exp(VOLUME_LOG_SIGMA * volume_rng.standard_normal(n))
    ts = SIM_T0_US + SIM_BAR_US * np.arange(n, dtype=np.int64)
    return BarSeries(ts, levels - half_spread, levels + half_spread, volume)


@dataclass(frozen=True)
class EnvConfig:
    mode: str = "simulate"
    ou: OuParams = field(default_factory=OuParams)
    bars: BarSeries | None = field(default=None, compare=False)
    half_spread: float = 0.0
    fee: float = 0.0
    episode_len: int = 200
    reward_mode: str = "risk_adjusted"
    reward_window: int = 50
    feature_cfg: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self) -> None:
        if self.mode not in ("simulate", "replay"):
            raise ValidationError(f"mode must be simulate or replay, got {self.mode!r}")
        if self.mode == "replay" and self.bars is None:
            raise ValidationError("replay mode needs bars")
        if self.half_spread < 0 or self.fee < 0:
            raise ValidationError("costs must be >= 0")
        if self.episode_len < 1:
            raise ValidationError("episode_len must be >= 1")
        if self.reward_mode not in REWARD_MODES:
            raise ValidationError(f"reward_mode must be one of {REWARD_MODES}")
        if self.reward_window < 1:
            raise ValidationError("reward_window must be >= 1")

    @property
    def state_dim(self) -> int:
        return self.feature_cfg.state_dim

    @property
    def min_bars(self) -> int:
        """Bars a replay episode consumes: feature warm-up plus one per step."""
        return self.feature_cfg.history_needed + self.episode_len

    def replace(self, **changes) -> "EnvConfig":
        from dataclasses import replace

        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode,
            "half_spread": self.half_spread,
            "fee": self.fee,
            "episode_len": self.episode_len,
            "reward_mode": self.reward_mode,
            "reward_window": self.reward_window,
            "features": self.feature_cfg.to_dict(),
        }
        if self.mode == "simulate":
            d["ou"] = {k: getattr(self.ou, k) for k in ("mu", "kappa", "sigma", "dt", "s0")}
        else:
            d["bars_sha256"] = self.bars.digest()
            d["n_bars"] = len(self.bars)
        return d


def risk_adjusted_reward(pnl_window) -> float:
    """Mean step pnl over the window divided by its floored population sigma."""
    w = np.asarray(pnl_window, dtype=float)
    if w.size == 0:
        raise ValidationError("pnl window must be non-empty")
    return float(np.mean(w) / max(float(np.std(w)), SIGMA_FLOOR))


class StepInfo(NamedTuple):
    t: int
    action: int
    qty: int
    level: float
    cost: float
    step_pnl: float
    position: int


class MarketEnv:
    """Single-episode trading environment; see module docstring for mechanics."""

    n_actions = len(Action)

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.state_dim = cfg.state_dim
        self.t = 0
        self.level = float("nan")
        self.position = 0
        self.cash = 0.0
        self.pnl_history: list[float] = []
        self.terminal = True
        self.last_step: StepInfo | None = None
        self.history: list[Bar] = []
        self._tracker = FeatureTracker(cfg.feature_cfg)
        self._reward_window: deque[float] = deque(maxlen=cfg.reward_window)

    @property
    def prices(self) -> list[float]:
        """Indicator input series observed so far, warm-up included."""
        return self._tracker.prices

    def _observe(self, price: float, bar: Bar) -> None:
        self.level = price
        self.history.append(bar)
        self._tracker.update(price, bar.volume, bar.ask - bar.bid)

    def _sim_bar(self, level: float) -> Bar:
        volume = VOLUME_SCALE * math.exp(VOLUME_LOG_SIGMA * float(self._volume_rng.standard_normal()))
        hs = self.cfg.half_spread
        return Bar(SIM_T0_US + SIM_BAR_US * len(self.history), level - hs, level + hs, volume)

    def reset(self, seed: int) -> np.ndarray:
        cfg = self.cfg
        warm = cfg.feature_cfg.history_needed
        self._tracker = FeatureTracker(cfg.feature_cfg)
        self.history = []
        if cfg.mode == "simulate":
            self._price_rng = make_rng(seed, "price")
            self._volume_rng = make_rng(seed, "volume")
            level = cfg.ou.s0
            for i in range(warm):
                if i:
                    level = ou_step(level, cfg.ou, self._price_rng)
                self._observe(level, self._sim_bar(level))
        else:
            bars = cfg.bars
            if len(bars) < cfg.min_bars:
                raise WarmupError(f"replay needs {cfg.min_bars} bars (warm-up {warm} + {cfg.episode_len} steps), got {len(bars)}")
            offset_rng = make_rng(seed, "offset")
            self._cursor = int(offset_rng.integers(0, len(bars) - cfg.min_bars + 1))
            self._mid = bars.mid
            for _ in range(warm):
                self._observe_bar()
        self.t = 0
        self.position = 0
        self.cash = 0.0
        self.pnl_history = []
        # the agent is flat during warm-up, so the reward window starts with zero pnls
        self._reward_window = deque([0.0] * cfg.reward_window, maxlen=cfg.reward_window)
        self.terminal = False
        self.last_step = None
        return self._tracker.state()

    def _observe_bar(self) -> None:
        i = self._cursor
        bars = self.cfg.bars
        self._observe(float(self._mid[i]), bars[i])
        self._cursor += 1

    def _advance(self) -> None:
        if self.cfg.mode == "simulate":
            level = ou_step(self.level, self.cfg.ou, self._price_rng)
            self._observe(level, self._sim_bar(level))
        else:
            self._observe_bar()

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self.terminal:
            raise StateError("episode is over; call reset()")
        try:
            a = Action(int(action))
        except ValueError:
            raise ValidationError(f"invalid action {action!r}") from None
        unit_cost = self.cfg.half_spread + self.cfg.fee
        if a is Action.BUY:
            target = min(self.position + 1, 1)
        elif a is Action.SELL:
            target = max(self.position - 1, -1)
        else:
            target = self.position
        trade_level = self.level
        qty = abs(target - self.position)
        cost = qty * unit_cost
        self.cash -= (target - self.position) * trade_level + cost
        self.position = target

        self._advance()
        self.t += 1
        step_pnl = self.position * (self.level - trade_level) - cost
        if self.t >= self.cfg.episode_len:
            flat_qty = abs(self.position)
            flat_cost = flat_qty * unit_cost
            self.cash += self.position * self.level - flat_cost
            step_pnl -= flat_cost
            qty += flat_qty
            cost += flat_cost
            self.position = 0
            self.terminal = True

        self.pnl_history.append(step_pnl)
        self._reward_window.append(step_pnl)
        if self.cfg.reward_mode == "raw_pnl":
            reward = step_pnl
        else:
            reward = risk_adjusted_reward(self._reward_window)
        self.last_step = StepInfo(self.t, int(a), qty, trade_level, cost, step_pnl, self.position)
        return self._tracker.state(), reward, self.terminal


def env_reset(cfg: EnvConfig, seed: int) -> tuple[MarketEnv, np.ndarray]:
    env = MarketEnv(cfg)
    return env, env.reset(seed)


def env_step(env: MarketEnv, action: int) -> tuple[np.ndarray, float, bool]:
    return env.step(action)
