import numpy as np

from specarb.features import FeatureConfig
from specarb.market import EnvConfig, OuParams

# "PASS/FAIL" lines from the acceptance tests, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


SMALL_FEATURES = FeatureConfig(n_returns=2, indicators=("sma:5", "rsi:5"), zscore_window=10, clamp=5.0)

# zero-cost, unit-sigma OU env with a short warm-up, for fast episode loops
SMALL_ENV = EnvConfig(
    ou=OuParams(mu=100.0, kappa=0.1, sigma=np.sqrt(0.19), dt=1.0, s0=100.0),
    episode_len=50,
    reward_mode="raw_pnl",
    feature_cfg=SMALL_FEATURES,
)
