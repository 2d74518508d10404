"""Technical indicators and state-vector assembly.

A state is ``[returns..., indicators..., volume, spread]`` where returns are
the ``n`` most recent log returns (newest first). Each coordinate is then
z-scored against its own trailing window of raw values (the current value
included) and clamped to ``[-clamp, +clamp]``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ValidationError, WarmupError

SIGMA_FLOOR = 1e-8
INDICATOR_KINDS = ("sma", "ema", "bollinger", "rsi")


class Bar(NamedTuple):
    timestamp: int
    bid: float
    ask: float
    volume: float


@dataclass(frozen=True)
class IndicatorSpec:
    kind: str
    window: int
    k: float = 2.0

    def __post_init__(self) -> None:
        if self.kind not in INDICATOR_KINDS:
            raise ValidationError(f"unknown indicator {self.kind!r}; expected one of {INDICATOR_KINDS}")
        if self.window < 2:
            raise ValidationError(f"{self.kind} window must be >= 2, got {self.window}")
        if self.kind == "bollinger" and self.k < 0:
            raise ValidationError("bollinger k must be >= 0")

    @property
    def n_outputs(self) -> int:
        return 2 if self.kind == "bollinger" else 1

    @classmethod
    def parse(cls, text: str) -> "IndicatorSpec":
        """Parse ``"sma:10"``, ``"rsi:14"`` or ``"bollinger:20:2"``."""
        parts = text.strip().split(":")
        try:
            if parts[0] == "bollinger":
                k = float(parts[2]) if len(parts) > 2 else 2.0
                if len(parts) > 3:
                    raise ValueError
                return cls("bollinger", int(parts[1]), k)
            if len(parts) != 2:
                raise ValueError
            return cls(parts[0], int(parts[1]))
        except (IndexError, ValueError):
            raise ValidationError(f"cannot parse indicator {text!r}; use kind:window or bollinger:window:k") from None

    def __str__(self) -> str:
        if self.kind == "bollinger":
            return f"bollinger:{self.window}:{self.k:g}"
        return f"{self.kind}:{self.window}"


DEFAULT_INDICATORS = (
    IndicatorSpec("sma", 10),
    IndicatorSpec("ema", 10),
    IndicatorSpec("bollinger", 20, 2.0),
    IndicatorSpec("rsi", 14),
)


@dataclass(frozen=True)
class FeatureConfig:
    n_returns: int = 4
    indicators: tuple[IndicatorSpec, ...] = field(default=DEFAULT_INDICATORS)
    zscore_window: int = 100
    clamp: float = 5.0

    def __post_init__(self) -> None:
        specs = tuple(IndicatorSpec.parse(s) if isinstance(s, str) else s for s in self.indicators)
        object.__setattr__(self, "indicators", specs)
        if self.n_returns < 0:
            raise ValidationError("n_returns must be >= 0")
        if self.zscore_window < 2:
            raise ValidationError("zscore_window must be >= 2")
        if self.clamp <= 0:
            raise ValidationError("clamp must be positive")

    @property
    def n_indicator_outputs(self) -> int:
        return sum(spec.n_outputs for spec in self.indicators)

    @property
    def state_dim(self) -> int:
        return self.n_returns + self.n_indicator_outputs + 2

    @property
    def min_prices(self) -> int:
        """Prices needed for one raw feature vector."""
        return max([self.n_returns + 1, 1] + [spec.window for spec in self.indicators])

    @property
    def history_needed(self) -> int:
        """Prices needed for one normalized state."""
        return self.min_prices + self.zscore_window - 1

    def to_dict(self) -> dict:
        return {
            "n_returns": self.n_returns,
            "indicators": [str(s) for s in self.indicators],
            "zscore_window": self.zscore_window,
            "clamp": self.clamp,
        }


def _prices(prices, need: int, what: str) -> np.ndarray:
    p = np.asarray(prices, dtype=float)
    if p.ndim != 1:
        raise ValidationError("price series must be one-dimensional")
    if p.size < need:
        raise WarmupError(f"{what} needs {need} prices, got {p.size}")
    return p


def log_returns(prices, n: int) -> np.ndarray:
    """The ``n`` most recent log returns, most recent first."""
    p = _prices(prices, n + 1, "log_returns")
    tail = p[p.size - n - 1 :]
    if np.any(tail <= 0):
        raise ValidationError("log returns need strictly positive prices")
    return np.log(tail[1:] / tail[:-1])[::-1]


def sma(prices, window: int) -> float:
    p = _prices(prices, window, "sma")
    return float(np.mean(p[-window:]))


def ema(prices, window: int) -> float:
    """EMA over the whole series, smoothing 2/(w+1), seeded by the first value."""
    p = _prices(prices, window, "ema")
    alpha = 2.0 / (window + 1)
    xs = p.tolist()
    value = xs[0]
    for x in xs[1:]:
        value += alpha * (x - value)
    return value


def bollinger(prices, window: int, k: float = 2.0) -> tuple[float, float]:
    """(upper, lower) bands: window mean +- k population standard deviations."""
    p = _prices(prices, window, "bollinger")[-window:]
    mid, sd = float(np.mean(p)), float(np.std(p))
    return mid + k * sd, mid - k * sd


def rsi(prices, window: int) -> float:
    """RSI from simple mean gain / mean loss over the last ``window`` prices.

    A flat window gives 50; no losses gives 100; no gains gives 0.
    """
    p = _prices(prices, window, "rsi")[-window:]
    d = np.diff(p)
    gain = float(np.mean(np.where(d > 0, d, 0.0)))
    loss = float(np.mean(np.where(d < 0, -d, 0.0)))
    if gain == 0.0 and loss == 0.0:
        return 50.0
    if loss == 0.0:
        return 100.0
    return 100.0 - 100.0 / (1.0 + gain / loss)


def indicator(spec: IndicatorSpec | str, prices) -> np.ndarray:
    if isinstance(spec, str):
        spec = IndicatorSpec.parse(spec)
    if spec.kind == "sma":
        return np.array([sma(prices, spec.window)])
    if spec.kind == "ema":
        return np.array([ema(prices, spec.window)])
    if spec.kind == "bollinger":
        return np.array(bollinger(prices, spec.window, spec.k))
    return np.array([rsi(prices, spec.window)])


def raw_features(prices, volume: float, spread: float, cfg: FeatureConfig) -> np.ndarray:
    """Un-normalized feature vector at the last point of ``prices``."""
    prices = np.asarray(prices, dtype=float)
    parts = [log_returns(prices, cfg.n_returns)]
    parts.extend(indicator(spec, prices) for spec in cfg.indicators)
    parts.append(np.array([float(volume), float(spread)]))
    return np.concatenate(parts)


def zscore_clamp(window: np.ndarray, clamp: float) -> np.ndarray:
    """Z-score of the last row against all rows, clamped to +-clamp.

    Coordinates whose window sigma is below the floor map to 0.
    """
    mean = window.mean(axis=0)
    sd = window.std(axis=0)
    safe = np.maximum(sd, SIGMA_FLOOR)
    z = np.where(sd > SIGMA_FLOOR, (window[-1] - mean) / safe, 0.0)
    return np.clip(z, -clamp, clamp)


class FeatureTracker:
    """Incremental state builder fed one observation at a time."""

    def __init__(self, cfg: FeatureConfig):
        self.cfg = cfg
        self.prices: list[float] = []
        self._raw: deque[np.ndarray] = deque(maxlen=cfg.zscore_window)

    def update(self, price: float, volume: float, spread: float) -> None:
        self.prices.append(float(price))
        if len(self.prices) >= self.cfg.min_prices:
            self._raw.append(raw_features(self.prices, volume, spread, self.cfg))

    @property
    def ready(self) -> bool:
        return len(self._raw) == self.cfg.zscore_window

    def state(self) -> np.ndarray:
        if not self.ready:
            raise WarmupError(
                f"state needs {self.cfg.history_needed} observations, have {len(self.prices)}"
            )
        return zscore_clamp(np.array(self._raw), self.cfg.clamp)


def assemble_state(history: Sequence[Bar], prices, cfg: FeatureConfig) -> np.ndarray:
    """Normalized state at the end of ``history``.

    ``prices`` is the indicator input series aligned with ``history`` (mid
    prices for recorded bars, the spread level for simulated data).
    """
    prices = np.asarray(prices, dtype=float)
    if len(history) != prices.size:
        raise ValidationError("history and prices must have equal length")
    if prices.size < cfg.history_needed:
        raise WarmupError(f"state needs {cfg.history_needed} observations, got {prices.size}")
    n = prices.size
    rows = [
        raw_features(prices[: t + 1], history[t].volume, history[t].ask - history[t].bid, cfg)
        for t in range(n - cfg.zscore_window, n)
    ]
    return zscore_clamp(np.array(rows), cfg.clamp)
