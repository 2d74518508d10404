"""Self-tests: tabular Q-learning against the oracle, backprop against finite differences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import neural
from .qcore import Hyperparameters, fixture_path, load_mdp, random_mdp, sweep, value_iteration_oracle

TABULAR_TOL = 1e-6
GRADIENT_TOL = 1e-6
FD_STEP = 1e-5
FAULTS = ("gradient-sign",)


@dataclass
class CheckResult:
    name: str
    residual: float
    tolerance: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.residual < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max residual {self.residual:.3e} (tol {self.tolerance:.0e}) {self.detail}".rstrip()


def tabular_gap(mdp, alpha: float = 0.5, gamma: float = 0.9, max_sweeps: int = 10_000, tol: float = TABULAR_TOL):
    """Sweep Q-learning until within ``tol`` of the oracle; returns (gap, sweeps)."""
    q_star = value_iteration_oracle(mdp, gamma, tol=1e-13)
    h = Hyperparameters(alpha=alpha, gamma=gamma)
    q = np.zeros_like(q_star)
    gap = float(np.abs(q - q_star).max())
    k = 0
    while gap >= tol and k < max_sweeps:
        q = sweep(q, mdp, h)
        k += 1
        gap = float(np.abs(q - q_star).max())
    return gap, k


def numeric_gradient(net: neural.Mlp, x: np.ndarray, upstream: np.ndarray, h: float = FD_STEP) -> neural.GradientBuffer:
    """Central differences of ``sum(upstream * forward(net, x))`` w.r.t. every parameter."""
    work = net.copy()
    out = []
    for p in work.parameters():
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            lp = float(np.sum(upstream * neural.forward(work, x)))
            p[i] = old - h
            lm = float(np.sum(upstream * neural.forward(work, x)))
            p[i] = old
            g[i] = (lp - lm) / (2 * h)
        out.append(g)
    return neural.GradientBuffer(out[0::2], out[1::2])


def gradient_error(analytic: neural.GradientBuffer, numeric: neural.GradientBuffer) -> float:
    """Largest per-tensor relative error ||a - n|| / max(||a||, ||n||)."""
    worst = 0.0
    for a, n in zip(analytic.parameters(), numeric.parameters()):
        den = max(np.linalg.norm(a), np.linalg.norm(n))
        if den > 0:
            worst = max(worst, float(np.linalg.norm(a - n) / den))
    return worst


def random_net_case(rng: np.random.Generator, max_sizes: Sequence[int], batch: int = 4):
    """Random architecture no larger than ``max_sizes`` (output fixed), random biases, input, upstream."""
    sizes = [int(rng.integers(1, m + 1)) for m in max_sizes[:-1]] + [int(max_sizes[-1])]
    net = neural.init_weights(sizes, int(rng.integers(2**31)))
    for b in net.biases:
        b[:] = rng.normal(0.0, 0.1, b.shape)
    x = rng.normal(size=(batch, sizes[0]))
    upstream = rng.normal(size=(batch, sizes[-1]))
    return net, x, upstream


def gradient_check(n_nets: int = 50, seed: int = 0, max_sizes: Sequence[int] = (16, 32, 32, 3), fault: str | None = None) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_nets):
        net, x, upstream = random_net_case(rng, max_sizes)
        analytic = neural.backward(net, x, upstream)
        if fault == "gradient-sign":
            analytic = neural.GradientBuffer([-g for g in analytic.weights], [-g for g in analytic.biases])
        worst = max(worst, gradient_error(analytic, numeric_gradient(net, x, upstream)))
    return CheckResult("gradient-fd", worst, GRADIENT_TOL, f"({n_nets} nets up to {'-'.join(map(str, max_sizes))})")


def tabular_check() -> list[CheckResult]:
    results = []
    cases = [("chain5", load_mdp(fixture_path("chain5.json"))), ("random5x3", random_mdp(5, 3, seed=2024))]
    for name, mdp in cases:
        gap, sweeps = tabular_gap(mdp)
        results.append(CheckResult(f"tabular-{name}", gap, TABULAR_TOL, f"({sweeps} sweeps)"))
    return results


def run_all(fault: str | None = None, n_nets: int = 50) -> list[CheckResult]:
    return tabular_check() + [gradient_check(n_nets=n_nets, fault=fault)]
