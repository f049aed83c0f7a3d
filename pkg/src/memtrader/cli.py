"""Command line: ``memtrader validate|run|compare|replay``.

Exit codes: 0 ok, 1 validation/configuration, 2 runtime, 3 provider.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Sequence

from .backbone import FormatError, parse_decision, read_transcript
from .config import load_config, load_environment, make_agent_factory
from .errors import (
    ComparisonError,
    ConfigurationError,
    ExperimentError,
    MemTraderError,
    ParseError,
    ProviderError,
    ValidationError,
)
from .market_data import Phase
from .metrics import buy_and_hold, format_table, table_csv
from .simulation import RunReport, run_experiment

log = logging.getLogger("memtrader")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_PROVIDER = 0, 1, 2, 3


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ExperimentError):
        return _exit_code(exc.cause)
    if isinstance(exc, ProviderError):
        return EXIT_PROVIDER
    if isinstance(exc, (ConfigurationError, ValidationError, ParseError, ComparisonError)):
        return EXIT_VALIDATION
    return EXIT_RUNTIME


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    env = load_environment(cfg)
    print(f"{env.symbol} ({env.asset_class.value})")
    for phase in Phase:
        days = env.trading_days(phase)
        news = sum(len(env.news_on(d)) for d in days)
        filings = sum(len(env.filings_on(d)) for d in days)
        print(f"  {phase.value:<7} {env.phase_range(phase)}  trading days={len(days)}  news={news}  filings={filings}")
    for phase in Phase:
        if len(env.trading_days(phase)) < 2:
            raise ConfigurationError(f"{phase.value} range needs at least 2 trading days")
    for kind, n in sorted(env.dropped.items()):
        print(f"  dropped {kind}: {n}")
    print("ok")
    return EXIT_OK


def _write_days_csv(report: RunReport, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "action", "position", "asset_logret", "strategy_ret", "cum_pnl"])
        for r in report.records:
            writer.writerow(
                [r.date.isoformat(), r.action.value, r.position, repr(r.log_return_asset),
                 repr(r.strategy_return), repr(r.pnl_cumulative)]
            )


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.seed_override is not None:
        cfg = dataclasses.replace(cfg, sim=dataclasses.replace(cfg.sim, seed=args.seed_override))
    factory = make_agent_factory(cfg)  # fails fast on a missing API key
    env = load_environment(cfg)
    result = run_experiment(env, cfg.sim, factory, jobs=args.jobs)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    transcript_name = "transcript.jsonl"
    selected = result.selected
    selected.transcript_path = transcript_name
    body = selected.as_dict()
    body["config"] = cfg.echo()
    body["selection"] = {"epoch": result.selected_epoch, "note": result.note, "epochs": len(result.reports)}
    (out / "report.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    with (out / "epochs.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "seed", "cr_percent", "sr", "av_percent", "mdd_percent", "selected"])
        for rep in result.reports:
            m = rep.metrics
            writer.writerow([rep.epoch, rep.seed, repr(m.cr_percent), repr(m.sr), repr(m.av_percent),
                             repr(m.mdd_percent), int(rep.epoch == result.selected_epoch)])
    _write_days_csv(selected, out / "days.csv")
    path = out / transcript_name
    path.write_text("", encoding="utf-8")
    for transcript in result.transcripts:
        transcript.write(path, append=True)

    baseline = buy_and_hold(env, risk_free_daily=cfg.sim.risk_free_daily, annualize_sharpe=cfg.sim.annualize_sharpe)
    print(format_table({f"Agent (epoch {result.selected_epoch})": selected.metrics, "Buy & Hold": baseline}))
    print(f"selection: {result.note}; outputs in {out}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    env = load_environment(cfg)
    data = json.loads(Path(args.report).read_text(encoding="utf-8"))
    report = RunReport.from_dict(data)
    expected = env.trading_days(Phase.TEST)[:-1]
    got = [r.date for r in report.records]
    if got != expected:
        span = f"{got[0]}..{got[-1]}" if got else "empty"
        raise ComparisonError(
            f"report covers {span} ({len(got)} days) but the test window trades "
            f"{expected[0]}..{expected[-1]} ({len(expected)} days)"
        )
    baseline = buy_and_hold(env, risk_free_daily=cfg.sim.risk_free_daily, annualize_sharpe=cfg.sim.annualize_sharpe)
    rows = {"Agent": report.metrics, "Buy & Hold": baseline}
    print(format_table(rows))
    if args.csv:
        Path(args.csv).write_text(table_csv(rows), encoding="utf-8")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    """Re-parse recorded test-phase responses and check they give the recorded actions."""
    entries = read_transcript(args.transcript)
    responses = {}
    for e in entries:
        if e.get("task") == "decide" and "response" in e:
            # keep the last attempt (re-prompts come later)
            responses[(e.get("epoch"), e.get("date"))] = e["response"]
    checked = mismatched = 0
    tally: Counter[str] = Counter()
    for e in entries:
        if e.get("kind") != "decision" or e.get("phase") != Phase.TEST.value:
            continue
        key = (e.get("epoch"), e.get("date"))
        raw = responses.get(key)
        try:
            action = parse_decision(raw, e["presented_ids"]).action.value if raw is not None else "Hold"
        except FormatError:
            action = "Hold"
        checked += 1
        tally[action] += 1
        ok = action == e["action"]
        mismatched += not ok
        if args.verbose or not ok:
            print(f"epoch {key[0]} {key[1]}: recorded {e['action']}, replayed {action}{'' if ok else '  MISMATCH'}")
    print(f"{checked - mismatched}/{checked} decisions reproduced  " + " ".join(f"{k}={v}" for k, v in sorted(tally.items())))
    return EXIT_OK if mismatched == 0 else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memtrader", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="load and validate all data referenced by a config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run warm-up + test for every epoch and write reports")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="epochs to run in parallel")
    p.add_argument("--seed-override", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="strategy vs Buy & Hold table")
    p.add_argument("--report", required=True, help="report.json written by 'run'")
    p.add_argument("--config", required=True)
    p.add_argument("--csv", default=None, help="also write the table as CSV")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("replay", help="re-parse a transcript offline")
    p.add_argument("--transcript", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (MemTraderError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
