"""Scenario documents (YAML) and trace/summary emission."""

from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from .adversary import BehaviorError, behavior_from_dict
from .engine import DEFAULT_MAX_ROUNDS, DEFAULT_TOL, Scenario, ScenarioError, Trace
from .graph import GraphError, build_graph
from .trust import TrustError, TrustSchedule

TOP_KEYS = {"name", "n", "edges", "x0", "malicious", "trust_mode", "seed", "max_rounds", "tol"}
REQUIRED = ("n", "edges", "x0")
MODE_KEYS = {
    "oracle": {"kind", "schedule", "settle_round", "seed", "table"},
    "concurrent": {"kind"},
    "infrequent": {"kind", "check_probability", "seed"},
}
TABLE_COLUMNS = ("round", "node", "x", "sigma", "trust_set", "verdicts")
FORMATS = ("table", "summary", "both")


class ScenarioSyntaxError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.column = column


def _int(value: Any, field: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(field, f"expected an integer, got {value!r}")
    return value


def _real(value: Any, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(field, f"expected a number, got {value!r}")
    return float(value)


def _mapping(value: Any, field: str) -> dict:
    if not isinstance(value, dict):
        raise ScenarioError(field, f"expected a mapping, got {value!r}")
    return value


def load_document(text: str) -> dict:
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ScenarioSyntaxError(str(exc.problem), mark.line + 1, mark.column + 1) from None
    except yaml.YAMLError as exc:
        raise ScenarioSyntaxError(str(exc)) from None
    if not isinstance(doc, dict):
        raise ScenarioSyntaxError("scenario document must be a mapping at top level")
    return doc


def _schedule(mode: dict, n: int, truth: frozenset, seed: int) -> TrustSchedule:
    kind = mode.get("schedule", "correct_from_start")
    settle = mode.get("settle_round")
    table = mode.get("table")
    if settle is not None:
        settle = _int(settle, "trust_mode.settle_round")
    if table is not None:
        table = {
            _int(k, "trust_mode.table"): {
                _int(j, "trust_mode.table"): frozenset(_int(v, "trust_mode.table") for v in ids)
                for j, ids in _mapping(row, "trust_mode.table").items()
            }
            for k, row in _mapping(table, "trust_mode.table").items()
        }
    sched_seed = seed if mode.get("seed") is None else _int(mode["seed"], "trust_mode.seed")
    try:
        return TrustSchedule(truth, n, kind, settle, sched_seed, table)
    except TrustError as exc:
        raise ScenarioError("trust_mode", str(exc)) from None


def scenario_from_document(doc: dict, seed: Optional[int] = None, max_rounds: Optional[int] = None) -> Scenario:
    unknown = set(doc) - TOP_KEYS
    if unknown:
        raise ScenarioError(sorted(unknown)[0], "unknown key")
    for key in REQUIRED:
        if key not in doc:
            raise ScenarioError(key, "missing required key")
    n = _int(doc["n"], "n")
    if not isinstance(doc["edges"], list):
        raise ScenarioError("edges", "expected a list of [a, b] pairs")
    for pair in doc["edges"]:
        if not isinstance(pair, list) or len(pair) != 2:
            raise ScenarioError("edges", f"bad edge {pair!r}")
        for v in pair:
            _int(v, "edges")
    try:
        graph = build_graph(n, doc["edges"])
    except GraphError as exc:
        raise ScenarioError("edges" if n >= 2 else "n", str(exc)) from None
    if not isinstance(doc["x0"], list):
        raise ScenarioError("x0", "expected a list of numbers")
    x0 = [_real(v, "x0") for v in doc["x0"]]

    malicious = {}
    for key, spec in _mapping(doc.get("malicious") or {}, "malicious").items():
        j = _int(key, "malicious")
        try:
            malicious[j] = behavior_from_dict(spec)
        except BehaviorError as exc:
            raise ScenarioError(f"malicious.{j}", str(exc)) from None

    run_seed = _int(doc.get("seed", 0), "seed") if seed is None else seed
    rounds = _int(doc.get("max_rounds", DEFAULT_MAX_ROUNDS), "max_rounds") if max_rounds is None else max_rounds
    tol = _real(doc.get("tol", DEFAULT_TOL), "tol")

    mode = doc.get("trust_mode", {"kind": "oracle"})
    if isinstance(mode, str):
        mode = {"kind": mode}
    mode = _mapping(mode, "trust_mode")
    kind = mode.get("kind")
    if kind not in MODE_KEYS:
        raise ScenarioError("trust_mode", f"unknown kind {kind!r}")
    extra = set(mode) - MODE_KEYS[kind]
    if extra:
        raise ScenarioError(f"trust_mode.{sorted(extra)[0]}", "unknown key")

    schedule, prob, check_seed = None, 1.0, None
    if kind == "oracle":
        for j in malicious:
            if not 0 <= j < n:
                raise ScenarioError("malicious", f"node id {j} out of range [0, {n})")
        truth = frozenset(range(n)) - set(malicious)
        schedule = _schedule(mode, n, truth, run_seed)
    elif kind == "infrequent":
        prob = _real(mode.get("check_probability", 1.0), "trust_mode.check_probability")
        if mode.get("seed") is not None:
            check_seed = _int(mode["seed"], "trust_mode.seed")

    name = doc.get("name", "")
    if not isinstance(name, str):
        raise ScenarioError("name", "expected a string")
    return Scenario(
        graph=graph,
        initial_values=x0,
        malicious=malicious,
        trust_mode=kind,
        schedule=schedule,
        check_probability=prob,
        check_seed=check_seed,
        max_rounds=rounds,
        convergence_tol=tol,
        seed=run_seed,
        name=name,
    )


def parse_scenario(text: str, seed: Optional[int] = None, max_rounds: Optional[int] = None) -> Scenario:
    """Parse a scenario document; ``seed``/``max_rounds`` override the file.

    Raises :class:`ScenarioSyntaxError` (with line/column) for malformed
    text and :class:`ScenarioError` (naming the field) for bad content.
    """
    return scenario_from_document(load_document(text), seed=seed, max_rounds=max_rounds)


def scenario_to_document(s: Scenario) -> dict:
    doc: dict = {
        "name": s.name,
        "n": s.n,
        "edges": [list(e) for e in s.graph.edge_list()],
        "x0": list(s.initial_values),
        "malicious": {j: b.to_dict() for j, b in s.malicious.items()},
    }
    if s.trust_mode == "oracle":
        sch = s.schedule
        mode: dict = {"kind": "oracle", "schedule": sch.mode, "seed": sch.seed}
        if sch.settle_round is not None:
            mode["settle_round"] = sch.settle_round
        if sch.table is not None:
            mode["table"] = {k: {j: sorted(ids) for j, ids in sorted(row.items())} for k, row in sorted(sch.table.items())}
    elif s.trust_mode == "infrequent":
        mode = {"kind": "infrequent", "check_probability": s.check_probability}
        if s.check_seed is not None:
            mode["seed"] = s.check_seed
    else:
        mode = {"kind": "concurrent"}
    doc.update(trust_mode=mode, seed=s.seed, max_rounds=s.max_rounds, tol=s.convergence_tol)
    return doc


def serialize_scenario(s: Scenario) -> str:
    return yaml.safe_dump(scenario_to_document(s), sort_keys=False, default_flow_style=None)


def bundled_names() -> list[str]:
    root = resources.files("trustavg") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def bundled_text(name: str) -> str:
    return (resources.files("trustavg") / "scenarios" / f"{name}.yaml").read_text()


def read_scenario_text(ref: str) -> str:
    """Read a scenario by path, falling back to a bundled scenario name."""
    path = Path(ref)
    if path.is_file():
        return path.read_text()
    if ref in bundled_names():
        return bundled_text(ref)
    raise FileNotFoundError(f"no scenario file or bundled scenario named {ref!r}")


def load_scenario(ref: str, seed: Optional[int] = None, max_rounds: Optional[int] = None) -> Scenario:
    return parse_scenario(read_scenario_text(ref), seed=seed, max_rounds=max_rounds)


def _verdict_cell(events) -> str:
    return ";".join(f"{e.subject}:{e.status}:{e.reason or ''}" for e in events)


def write_table(t: Trace, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for k, j, x, sigma, trust, events in t.records():
            w.writerow([k, j, repr(x), repr(sigma), " ".join(map(str, sorted(trust))), _verdict_cell(events)])


def read_table(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["round"], row["node"] = int(row["round"]), int(row["node"])
        row["x"], row["sigma"] = float(row["x"]), float(row["sigma"])
        row["trust_set"] = [int(v) for v in row["trust_set"].split()]
    return rows


def write_summary(t: Trace, path: Path) -> None:
    path.write_text(json.dumps(t.summary(), indent=2, sort_keys=True) + "\n")


def emit_outputs(t: Trace, out_dir, fmt: str = "both", stem: Optional[str] = None) -> list[Path]:
    """Write ``<stem>.csv`` and/or ``<stem>.summary.json`` into ``out_dir``."""
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}, got {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or t.scenario.name or "run"
    written = []
    if fmt in ("table", "both"):
        written.append(out / f"{stem}.csv")
        write_table(t, written[-1])
    if fmt in ("summary", "both"):
        written.append(out / f"{stem}.summary.json")
        write_summary(t, written[-1])
    return written
