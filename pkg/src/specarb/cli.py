"""Command-line entry point: train, backtest, simulate-data, oracle-check.

Exit status is 0 on success, 1 when a run fails or a check does not pass,
and 2 for invalid configuration or arguments. Set SPECARB_LOG (e.g. INFO,
DEBUG) for progress logging on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from pathlib import Path

from . import selfcheck
from .agent import DqnAgent, train_loop
from .backtest import METRIC_NAMES, evaluate
from .config import RunConfig, load_config
from .errors import ValidationError
from .market import MarketEnv, simulate_bars, write_bars_csv
from .rng import derive_seed

log = logging.getLogger("specarb")

CHECKPOINT = "checkpoint.json"
TRAINING_REPORT = "training_report.jsonl"
EVALUATION_REPORT = "evaluation_report.json"


class CliError(Exception):
    def __init__(self, message: str, status: int = 1):
        super().__init__(message)
        self.status = status


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _overrides(args: argparse.Namespace, episodes_key: str) -> dict:
    out = {}
    if getattr(args, "seed", None) is not None:
        out["run.seed"] = args.seed
    if getattr(args, "episodes", None) is not None:
        out[episodes_key] = args.episodes
    if getattr(args, "out", None) is not None:
        out["run.output_dir"] = str(args.out)
    return out


def _output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc.strerror or exc}") from None
    return out


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, _overrides(args, "run.episodes"))
    out = _output_dir(cfg)
    agent = DqnAgent.create(cfg.env.state_dim, cfg.agent, derive_seed(cfg.seed, "init"))
    log.info("training %d episodes, state length %d, seed %d", cfg.episodes, cfg.env.state_dim, cfg.seed)
    report = train_loop(agent, MarketEnv(cfg.env), cfg.episodes, cfg.seed)
    agent.save(out / CHECKPOINT)
    report.write(out / TRAINING_REPORT)
    cfg.write(out / "train_config.toml")
    print(f"episodes: {len(report)}  train steps: {agent.step_count}  target syncs: {agent.sync_count}")
    print(f"checkpoint: {out / CHECKPOINT} sha256={file_digest(out / CHECKPOINT)}")
    return 0


def _format_table(aggregate: dict) -> str:
    rows = [f"{'metric':<16}{'mean':>14}{'std':>14}{'stderr':>14}"]
    for name in METRIC_NAMES:
        s = aggregate[name]
        rows.append(f"{name:<16}{s['mean']:>14.6g}{s['std']:>14.6g}{s['stderr']:>14.6g}")
    return "\n".join(rows)


def cmd_backtest(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, _overrides(args, "run.eval_episodes"))
    if args.policy == "agent":
        if args.checkpoint is None:
            raise CliError("--policy agent needs --checkpoint", status=2)
        try:
            policy = DqnAgent.load(args.checkpoint)
        except OSError as exc:
            raise CliError(f"cannot read checkpoint {args.checkpoint}: {exc.strerror or exc}", status=2) from None
        if policy.state_dim != cfg.env.state_dim:
            raise CliError(
                f"checkpoint input length {policy.state_dim} does not match the configured state length {cfg.env.state_dim}",
                status=2,
            )
    else:
        policy = args.policy
    if cfg.eval_episodes < 1:
        raise CliError("backtest needs at least one episode", status=2)
    out = _output_dir(cfg)
    report = evaluate(policy, cfg.env, cfg.eval_episodes, cfg.seed, jobs=args.jobs)
    (out / EVALUATION_REPORT).write_text(report.to_json(), encoding="utf-8")
    ledger_dir = out / "ledgers"
    ledger_dir.mkdir(exist_ok=True)
    for i, ledger in enumerate(report.ledgers):
        ledger.write_csv(ledger_dir / f"episode_{i:04d}.csv")
    cfg.write(out / "backtest_config.toml")
    print(f"policy: {report.policy}  episodes: {report.n_episodes}  config digest: {report.config_digest[:16]}")
    print(_format_table(report.aggregate))
    return 0


def cmd_simulate_data(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, {"run.seed": args.seed} if args.seed is not None else None)
    if cfg.env.mode != "simulate":
        raise CliError("simulate-data needs env.mode = \"simulate\"", status=2)
    if args.steps < 0:
        raise CliError("--steps must be >= 0", status=2)
    bars = simulate_bars(cfg.env.ou, cfg.env.half_spread, args.steps, derive_seed(cfg.seed, "simulate"))
    out = Path(args.out)
    try:
        write_bars_csv(bars, out)
        cfg.write(out.with_name(out.name + ".config.toml"))
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc.strerror or exc}") from None
    print(f"wrote {args.steps} bars to {out}")
    return 0


def cmd_oracle_check(args: argparse.Namespace) -> int:
    results = selfcheck.run_all(fault=args.inject_fault)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specarb", description="Deep Q-learning statistical arbitrage engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a DQN agent and write checkpoint + report")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", help="output directory (overrides run.output_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("backtest", help="evaluate a policy and write report + ledgers")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--policy", choices=("agent", "random", "flat"), default="agent")
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="output directory (overrides run.output_dir)")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("simulate-data", help="write OU-driven synthetic bars as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate_data)

    p = sub.add_parser("oracle-check", help="run the tabular and gradient self-tests")
    p.add_argument("--inject-fault", choices=selfcheck.FAULTS, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_oracle_check)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("SPECARB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.status
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
