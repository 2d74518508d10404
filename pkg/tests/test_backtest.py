import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import SMALL_ENV
from specarb.agent import AgentConfig, DqnAgent
from specarb.backtest import (
    EvaluationReport,
    Ledger,
    LedgerEntry,
    aggregate,
    compute_metrics,
    evaluate,
    max_drawdown,
    run_episode,
    validate_report,
)
from specarb.errors import ValidationError


def brute_drawdown(pnls):
    cum = [0.0]
    for p in pnls:
        cum.append(cum[-1] + p)
    return min(0.0, min(cum[j] - cum[i] for i in range(len(cum)) for j in range(i, len(cum))))


def test_max_drawdown_examples():
    assert max_drawdown([1.0, -2.0, 0.5, -1.0, 3.0]) == -2.5
    assert max_drawdown([1.0, 2.0]) == 0.0
    assert max_drawdown([-1.0]) == -1.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=30))
def test_max_drawdown_brute_force(pnls):
    assert max_drawdown(pnls) == pytest.approx(brute_drawdown(pnls), abs=1e-9)


def ledger_of(pnls, qtys):
    entries = [LedgerEntry(t + 1, 0, q, 100.0, 0.0, p, 0) for t, (p, q) in enumerate(zip(pnls, qtys))]
    return Ledger(entries, 0, math.fsum(pnls))


def test_compute_metrics_hand_values():
    m = compute_metrics(ledger_of([1.0, -1.0, 3.0, 1.0], [1, 0, 2, 1]))
    assert m.total_pnl == 4.0 and m.mean_step_pnl == 1.0
    assert m.risk_adjusted == pytest.approx(1.0 / math.sqrt(2.0))
    assert m.max_drawdown == -1.0
    assert (m.turnover, m.n_trades) == (4, 3)
    with pytest.raises(ValidationError):
        compute_metrics(Ledger([], 0))


def test_aggregate_stats():
    ms = [compute_metrics(ledger_of([x], [0])) for x in (1.0, 2.0, 3.0, 6.0)]
    agg = aggregate(ms)["total_pnl"]
    assert agg["mean"] == 3.0
    assert agg["std"] == pytest.approx(math.sqrt(14 / 3))
    assert agg["stderr"] == pytest.approx(math.sqrt(14 / 3) / 2)
    assert aggregate(ms[:1])["total_pnl"]["std"] == 0.0


def test_flat_policy_earns_nothing():
    led = run_episode("flat", SMALL_ENV.replace(half_spread=0.1), 3)
    assert len(led.entries) == SMALL_ENV.episode_len
    assert all(e.step_pnl == 0.0 and e.qty == 0 for e in led.entries)


def test_scripted_policy_and_identity():
    actions = [1, 1, 0, 2, 2, 2, 1] + [0] * 43
    led = run_episode(actions, SMALL_ENV.replace(fee=0.02), 11)
    assert led.actions == actions
    assert abs(math.fsum(led.step_pnls) - led.final_cash) < 1e-9


def test_evaluate_report_round_trip_and_schema():
    rep = evaluate("random", SMALL_ENV, 4, seed=20)
    d = json.loads(rep.to_json())
    validate_report(d)
    assert [r["episode_seed"] for r in d["per_episode"]] == [20, 21, 22, 23]
    back = EvaluationReport.from_dict(d)
    assert back.per_episode == rep.per_episode
    d["n_episodes"] = 5
    with pytest.raises(ValidationError):
        validate_report(d)
    d["n_episodes"] = 4
    d["extra"] = 1
    with pytest.raises(ValidationError):
        validate_report(d)


def test_evaluate_is_deterministic_and_jobs_agnostic():
    agent = DqnAgent.create(SMALL_ENV.state_dim, AgentConfig(hidden_layers=(6,)), seed=2)
    a = evaluate(agent, SMALL_ENV, 5, seed=1).to_json()
    b = evaluate(agent, SMALL_ENV, 5, seed=1, jobs=3).to_json()
    assert a == b
    assert evaluate("random", SMALL_ENV, 3, seed=1).to_json() == evaluate("random", SMALL_ENV, 3, seed=1).to_json()


def test_evaluate_errors():
    agent = DqnAgent.create(3, AgentConfig(hidden_layers=(4,)), seed=0)
    with pytest.raises(ValidationError, match="state length"):
        evaluate(agent, SMALL_ENV, 1, seed=0)
    with pytest.raises(ValidationError):
        evaluate("random", SMALL_ENV, 0, seed=0)
    with pytest.raises(ValidationError):
        evaluate("genius", SMALL_ENV, 1, seed=0)


def test_ledger_csv(tmp_path):
    led = run_episode([1] + [0] * 49, SMALL_ENV, 0)
    path = tmp_path / "l.csv"
    led.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,action,qty,level,cost,step_pnl,position"
    assert lines[1].split(",")[1] == "buy" and len(lines) == 51


def test_metric_examples():
    assert max_drawdown([1.0, -2.0, 1.0]) == -2.0
    m = compute_metrics(ledger_of([0.01, 0.03], [0, 0]))
    assert m.risk_adjusted == pytest.approx(2.0)
    one = compute_metrics(ledger_of([1.0], [0]))
    assert (one.total_pnl, one.max_drawdown) == (1.0, 0.0)
    assert compute_metrics(ledger_of([0.0, 0.0], [0, 0])).risk_adjusted == 0.0


def test_single_episode_aggregate_equals_episode():
    rep = evaluate("random", SMALL_ENV, 1, seed=4)
    m = rep.per_episode[0]
    for name, stats in rep.aggregate.items():
        assert stats == {"mean": getattr(m, name), "std": 0.0, "stderr": 0.0}


def test_flat_aggregate_is_exactly_zero():
    agg = evaluate("flat", SMALL_ENV, 5, seed=0).aggregate
    assert agg["total_pnl"]["mean"] == 0.0 and agg["turnover"]["mean"] == 0.0


def test_replaying_recorded_actions_reproduces_ledger():
    cfg = SMALL_ENV.replace(half_spread=0.02)
    led = run_episode("random", cfg, 17)
    again = run_episode("random", cfg, 17)
    assert again.entries == led.entries
    replay = run_episode(led.actions, cfg, 17)
    assert replay.step_pnls == led.step_pnls


@pytest.mark.slow
def test_random_policy_null_mean():
    # zero cost, mu == s0: a random policy earns nothing on average
    rep = evaluate("random", SMALL_ENV, 1000, seed=100)
    s = rep.aggregate["total_pnl"]
    assert abs(s["mean"]) < 3 * s["stderr"]
