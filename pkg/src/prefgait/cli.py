"""Command-line entry point: simulation campaigns, analysis, serving."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .engine import ConfigError, SessionConfig

STRATEGY_ALIASES = {"mi": "mutual_information", "random": "random"}


def _load_json_arg(value):
    """Accept a path to a JSON file or an inline JSON object."""
    if value is None:
        return None
    text = value.strip()
    if text.startswith("{"):
        return json.loads(text)
    with open(value, encoding="utf-8") as f:
        return json.load(f)


def _session_config(args) -> SessionConfig:
    raw = _load_json_arg(args.config) or {}
    cfg = SessionConfig.from_dict(raw)
    if getattr(args, "strategy", None):
        from dataclasses import replace
        cfg = replace(cfg, strategy=STRATEGY_ALIASES[args.strategy])
    return cfg


def cmd_simulate(args) -> int:
    from .simulate import run_campaign

    config = _session_config(args)
    oracle_spec = _load_json_arg(args.oracle)
    seeds = range(args.seed_start, args.seed_start + args.seed_count)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = run_campaign(config, oracle_spec, list(seeds), out_dir=out,
                           with_validation=args.validation)
    print(f"campaign: {len(summary.rows)} sessions "
          f"(seeds {args.seed_start}..{args.seed_start + args.seed_count - 1}, "
          f"strategy {config.strategy})")
    print(f"  top-1 hit rate: {summary.top1_rate:.3f}")
    print(f"  top-3 hit rate: {summary.top3_rate:.3f}")
    print(f"  mean cos(posterior mean, w*): {summary.mean_cos:.3f}")
    print(f"  wrote {out / 'campaign.csv'} and {len(summary.rows)} logs")
    return 0


def cmd_analyze(args) -> int:
    from .reports import analyze_logs

    summary = analyze_logs(args.logs, args.out, traces_dir=args.traces)
    n_omissions = len(summary.get("omissions", []))
    print(f"analyzed {len(args.logs)} log(s) -> {args.out}")
    print(f"  figures: {', '.join(summary.get('figures', [])) or 'none'}")
    if n_omissions:
        print(f"  omissions: {n_omissions} (see summary.json)")
    return 0


def cmd_serve(args) -> int:
    from .service import run

    run(args.config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefgait",
        description="Preference learning for hip assistance torque profiles",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run simulated sessions across seeds")
    sim.add_argument("--config", help="session config JSON (path or inline)")
    sim.add_argument("--oracle", help="oracle spec JSON (path or inline)")
    sim.add_argument("--seed-start", type=int, default=0)
    sim.add_argument("--seed-count", type=int, default=1)
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--strategy", choices=sorted(STRATEGY_ALIASES))
    sim.add_argument("--validation", action="store_true",
                     help="also run the perturbation-validation round")
    sim.set_defaults(func=cmd_simulate)

    ana = sub.add_parser("analyze", help="build the report bundle from logs")
    ana.add_argument("logs", nargs="+", help="session JSONL log path(s)")
    ana.add_argument("--traces", help="directory of gait trace CSVs")
    ana.add_argument("--out", required=True, help="output directory")
    ana.set_defaults(func=cmd_analyze)

    srv = sub.add_parser("serve", help="run the session service")
    srv.add_argument("--config", help="service config JSON path")
    srv.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, json.JSONDecodeError) as e:
        print(f"error: invalid configuration: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
