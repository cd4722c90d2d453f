"""Command-line entry point: ``trustavg {validate,run,sweep}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .adversary import BehaviorError
from .engine import ScenarioError, run_scenario
from .io import FORMATS, ScenarioSyntaxError, bundled_names, emit_outputs, load_scenario

log = logging.getLogger("trustavg")

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_IO = 3


def _seed_range(text: str) -> range:
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START:STOP, got {text!r}") from None
    if hi <= lo:
        raise argparse.ArgumentTypeError("STOP must exceed START")
    return range(lo, hi)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trustavg", description="Trust-aware average consensus simulator.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, rounds=True):
        p.add_argument("--scenario", required=True, help="scenario file or bundled name (%s)" % ", ".join(bundled_names()))
        p.add_argument("--seed", type=int, help="override the scenario seed")
        if rounds:
            p.add_argument("--max-rounds", type=int, help="override max_rounds")

    p = sub.add_parser("validate", help="parse a scenario and report assumption violations")
    common(p, rounds=False)

    p = sub.add_parser("run", help="simulate one scenario and write its trace")
    common(p)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--format", choices=FORMATS, default="both")

    p = sub.add_parser("sweep", help="repeat a scenario over a seed range")
    common(p)
    p.add_argument("--seeds", type=_seed_range, default=range(0, 20), help="START:STOP (default 0:20)")
    p.add_argument("--out", help="directory for sweep.json (default: stdout only)")
    return ap


def cmd_validate(args) -> int:
    s = load_scenario(args.scenario, seed=args.seed)
    report = {
        "scenario": s.name,
        "n": s.n,
        "edges": len(s.graph.edges),
        "trust_mode": s.trust_mode,
        "assumption_violations": [v.as_dict() for v in s.assumption_report()],
    }
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_run(args) -> int:
    s = load_scenario(args.scenario, seed=args.seed, max_rounds=args.max_rounds)
    trace = run_scenario(s)
    try:
        paths = emit_outputs(trace, args.out, args.format)
    except OSError as exc:
        log.error("cannot write outputs: %s", exc)
        return EXIT_IO
    for path in paths:
        print(path)
    return EXIT_OK


def sweep_stats(ref: str, seeds, max_rounds=None) -> dict:
    runs = []
    for seed in seeds:
        summary = run_scenario(load_scenario(ref, seed=seed, max_rounds=max_rounds)).summary()
        runs.append(summary)
    out = {
        "scenario": runs[0]["scenario"] if runs else "",
        "seeds": [seeds[0], seeds[-1] + 1] if len(seeds) else [],
        "runs": len(runs),
        "converged": sum(r["converged"] for r in runs),
        "detection": {},
    }
    for adv in runs[0]["detection_rounds"] if runs else []:
        latest = []
        for r in runs:
            obs = r["detection_rounds"][adv].values()
            latest.append(None if any(v is None for v in obs) else max(obs, default=None))
        found = [v for v in latest if v is not None]
        out["detection"][adv] = {
            "detected_by_all": len(found),
            "mean_round": float(np.mean(found)) if found else None,
            "max_round": max(found) if found else None,
        }
    return out


def cmd_sweep(args) -> int:
    stats = sweep_stats(args.scenario, args.seeds, args.max_rounds)
    text = json.dumps(stats, indent=2, sort_keys=True)
    if args.out:
        try:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            (Path(args.out) / "sweep.json").write_text(text + "\n")
        except OSError as exc:
            log.error("cannot write outputs: %s", exc)
            return EXIT_IO
    print(text)
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "run": cmd_run, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ScenarioSyntaxError as exc:
        log.error("syntax error: %s", exc)
    except (ScenarioError, BehaviorError) as exc:
        log.error("invalid scenario: %s", exc)
    except FileNotFoundError as exc:
        log.error("%s", exc)
    return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
