"""Synchronous round loop, scenarios and traces."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from . import consensus as cs
from .adversary import Behavior, UnfairDeclare, behavior_rng
from .graph import AssumptionViolation, Graph, two_hop_set, validate_assumptions
from .trust import (
    MALICIOUS,
    CheckEvidence,
    ParityChecks,
    TrustError,
    TrustSchedule,
    Verdict,
    classify,
    concurrent_check,
    infrequent_check,
    oracle_trust,
)

log = logging.getLogger(__name__)

TRUST_MODES = ("oracle", "concurrent", "infrequent")
DEFAULT_MAX_ROUNDS = 2000
DEFAULT_TOL = 1e-6


class ScenarioError(ValueError):
    """A scenario that cannot be simulated; ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class Scenario:
    graph: Graph
    initial_values: tuple
    malicious: Mapping[int, Behavior] = field(default_factory=dict)
    trust_mode: str = "oracle"
    schedule: Optional[TrustSchedule] = None
    check_probability: float = 1.0
    check_seed: Optional[int] = None
    max_rounds: int = DEFAULT_MAX_ROUNDS
    convergence_tol: float = DEFAULT_TOL
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "initial_values", tuple(float(v) for v in self.initial_values))
        object.__setattr__(self, "malicious", {int(k): v for k, v in sorted(self.malicious.items())})
        n = self.graph.node_count
        if len(self.initial_values) != n:
            raise ScenarioError("x0", f"expected {n} initial values, got {len(self.initial_values)}")
        for j, b in self.malicious.items():
            if not 0 <= j < n:
                raise ScenarioError("malicious", f"node id {j} out of range [0, {n})")
            inner = getattr(b, "then", b)
            if isinstance(inner, UnfairDeclare) and inner.victim not in self.graph.neighbors(j):
                raise ScenarioError("malicious", f"victim {inner.victim} is not a neighbor of node {j}")
        if self.trust_mode not in TRUST_MODES:
            raise ScenarioError("trust_mode", f"unknown mode {self.trust_mode!r}")
        if self.trust_mode == "oracle":
            if self.schedule is None:
                raise ScenarioError("trust_mode", "oracle mode needs a trust schedule")
            if self.schedule.n_total != n:
                raise ScenarioError("trust_mode", "schedule size does not match the graph")
        if not 0 < self.check_probability <= 1:
            raise ScenarioError("check_probability", f"must lie in (0, 1], got {self.check_probability}")
        if self.max_rounds < 0:
            raise ScenarioError("max_rounds", "must be >= 0")
        if not self.convergence_tol > 0:
            raise ScenarioError("tol", "must be > 0")
        if not self.honest:
            raise ScenarioError("malicious", "at least one node must be honest")

    @property
    def n(self) -> int:
        return self.graph.node_count

    @property
    def honest(self) -> frozenset:
        return frozenset(range(self.n)) - set(self.malicious)

    def assumption_report(self) -> list[AssumptionViolation]:
        return validate_assumptions(self.graph, self.malicious, self.trust_mode)


def label_average(s: Scenario) -> float:
    return float(np.mean([s.initial_values[j] for j in sorted(s.honest)]))


def behavior_average(s: Scenario) -> float:
    """Average over nodes whose behavior never emits incorrect values."""
    members = sorted(s.honest | {j for j, b in s.malicious.items() if b.is_benign()})
    return float(np.mean([s.initial_values[j] for j in members]))


def trustworthy_average(s: Scenario) -> float:
    """Consensus target: label-based with oracle trust, behavior-based when checking."""
    if s.trust_mode == "oracle":
        return label_average(s)
    return behavior_average(s)


@dataclass(frozen=True)
class VerdictEvent:
    round: int
    observer: int
    subject: int
    status: str
    reason: Optional[str]


@dataclass
class Trace:
    """Per-round record of a run.

    Row ``k`` holds x[k], sigma[k] and the trust set T[k] each node uses (or
    reports) in iteration k; ``events`` are verdict changes decided at the
    end of iteration ``event.round``.
    """

    scenario: Scenario
    x: np.ndarray
    sigma: np.ndarray
    trust: list
    events: list
    violations: list
    # honest nodes that initiated a two-hop check, per iteration (infrequent mode)
    initiators: list = field(default_factory=list)

    @property
    def rounds(self) -> int:
        return self.x.shape[0] - 1

    def records(self):
        by_key: dict = {}
        for ev in self.events:
            by_key.setdefault((ev.round, ev.observer), []).append(ev)
        for k in range(self.x.shape[0]):
            for j in range(self.scenario.n):
                yield k, j, float(self.x[k, j]), float(self.sigma[k, j]), self.trust[k][j], by_key.get((k, j), [])

    def detection_rounds(self) -> dict:
        s = self.scenario
        out = {}
        for a in s.malicious:
            watchers = sorted(s.graph.neighbors(a) & s.honest)
            first = {o: None for o in watchers}
            for ev in self.events:
                if ev.subject == a and ev.status == MALICIOUS and ev.observer in first and first[ev.observer] is None:
                    first[ev.observer] = ev.round
            out[a] = first
        return out

    def summary(self) -> dict:
        s = self.scenario
        target = trustworthy_average(s)
        converged, at, err = convergence_metrics(self, target, s.convergence_tol)
        honest = sorted(s.honest)
        return {
            "scenario": s.name,
            "n": s.n,
            "trust_mode": s.trust_mode,
            "rounds": self.rounds,
            "seed": s.seed,
            "targets": {
                "label_based": label_average(s),
                "behavior_based": behavior_average(s),
                "primary": target,
            },
            "final_honest_values": {str(j): float(self.x[-1, j]) for j in honest},
            "max_error_final": err,
            "converged": converged,
            "rounds_to_tolerance": at,
            "tolerance": s.convergence_tol,
            "detection_rounds": {
                str(a): {str(o): r for o, r in obs.items()} for a, obs in self.detection_rounds().items()
            },
            "verdict_events": len(self.events),
            "assumption_violations": [v.as_dict() for v in self.violations],
        }


def convergence_metrics(t: Trace, target: float, tol: float) -> tuple[bool, Optional[int], float]:
    """(converged, first round from which every honest node stays within tol, final max error)."""
    honest = sorted(t.scenario.honest)
    err = np.abs(t.x[:, honest] - target).max(axis=1)
    inside = err <= tol
    if not inside[-1]:
        return False, None, float(err[-1])
    outside = np.flatnonzero(~inside)
    first = 0 if outside.size == 0 else int(outside[-1]) + 1
    return True, first, float(err[-1])


class World:
    """Mutable simulation state; advance it with :meth:`run_round`."""

    def __init__(self, scenario: Scenario):
        self.scenario = s = scenario
        self.k = 0
        n = s.n
        self.everyone = frozenset(range(n))
        self.nbrs = [s.graph.neighbors(j) for j in range(n)]
        self.states = [cs.init_node(j, s.initial_values[j], self.nbrs[j], n) for j in range(n)]
        self.reported_prev = [self.everyone] * n
        self.verdicts: dict = {}
        self.declared = [set() for _ in range(n)]
        self.events: list = []
        self.initiators: list = []
        self.adv_rng = {j: behavior_rng(s.seed, j, b) for j, b in s.malicious.items()}
        check_seed = s.seed if s.check_seed is None else s.check_seed
        self.check_rng = np.random.default_rng([int(check_seed), 2])
        self._two_hop = [two_hop_set(s.graph, j) for j in range(n)]
        # (pre states, post states, reported T[k-1], T[k]) of the last round
        self.last = None

    def trust_input(self, j: int, k: int) -> frozenset:
        s = self.scenario
        b = s.malicious.get(j)
        if s.trust_mode == "oracle":
            try:
                base = oracle_trust(s.schedule, k, j)
            except TrustError:
                if b is None:
                    raise
                base = self.everyone
        elif b is None:
            base = self.everyone - self.declared[j]
        else:
            base = self.everyone
        if b is not None:
            base = b.trust(base, k)
        return frozenset(base) | {j}

    def run_round(self) -> list[VerdictEvent]:
        s, k = self.scenario, self.k
        n = s.n
        trust = [self.trust_input(j, k) for j in range(n)]
        pre = self.states

        deltas, corrections, sigma_next = [], [], []
        for j, st in enumerate(pre):
            d = cs.update_trust_sets(st, trust[j])
            deltas.append(d)
            corrections.append(cs.correction_term(st, d))
            sig = cs.advance_running_sum(st)
            if j in s.malicious:
                sig = s.malicious[j].sigma(sig, k, self.adv_rng[j])
            sigma_next.append(sig)

        post = []
        for j, st in enumerate(pre):
            received = {i: sigma_next[i] for i in self.nbrs[j]}
            mu_next = cs.update_mu(st, deltas[j], received)
            x_next = cs.step_value(st, deltas[j], mu_next, corrections[j])
            if j in s.malicious:
                x_next = s.malicious[j].value(x_next, k, self.adv_rng[j])
            post.append(cs.commit(st, trust[j], sigma_next[j], mu_next, x_next))

        events = []
        if s.trust_mode != "oracle":
            events = self._audit(k, pre, post, self.reported_prev, trust)
        self.last = (pre, post, self.reported_prev, trust)
        self.states = post
        self.reported_prev = trust
        self.k += 1
        return events

    def _tilde(self, l: int, pre, post, k: int) -> tuple[float, float]:
        prev, now = pre[l].sigma, post[l].sigma
        b = self.scenario.malicious.get(l)
        return (prev, now) if b is None else b.two_hop(prev, now, k)

    def _audit(self, k, pre, post, t_prev, t_now) -> list[VerdictEvent]:
        s = self.scenario
        infrequent = s.trust_mode == "infrequent"
        evidence: dict = {}
        if infrequent:
            draws = self.check_rng.random(s.n)
            initiators = [j for j in range(s.n) if j in s.honest and draws[j] < s.check_probability]
            self.initiators.append(tuple(initiators))
            responders = set()
            subjects = set()
            for j in initiators:
                responders |= self._two_hop[j] | {j}
                subjects |= self.nbrs[j]
            tilde = {l: self._tilde(l, pre, post, k) for l in sorted(responders)}
            for i in sorted(subjects):
                evidence[i] = infrequent_check(self._evidence(i, pre, post, t_prev, t_now, tilde), s.n)
            for l in sorted(responders - subjects):
                q = post[l].sigma - (pre[l].sigma + pre[l].x)
                sv = abs(tilde[l][0] - pre[l].sigma) + abs(tilde[l][1] - post[l].sigma)
                mag = max(abs(v) for v in (*tilde[l], pre[l].sigma, post[l].sigma, pre[l].x))
                evidence[l] = ParityChecks(p=0.0, q=q, s=sv, scale=mag)
        else:
            tilde = {l: (pre[l].sigma, post[l].sigma) for l in range(s.n)}
            for i in range(s.n):
                if any(o in s.honest for o in self.nbrs[i]):
                    evidence[i] = concurrent_check(self._evidence(i, pre, post, t_prev, t_now, tilde), s.n)

        events = []
        for o in sorted(s.honest):
            for i in sorted(self.nbrs[o]):
                prior = self.verdicts.get((o, i), Verdict())
                if prior.status == MALICIOUS:
                    continue
                if not infrequent and not t_now[i] <= t_prev[i]:
                    log.warning("round %d: node %d enlarged its reported trust set", k, i)
                v = classify(
                    prior,
                    evidence.get(i),
                    t_now[i],
                    t_prev[i],
                    o,
                    mode=s.trust_mode,
                    max_shrinks=len(self.nbrs[i]),
                )
                self.verdicts[(o, i)] = v
                if v.status != prior.status:
                    events.append(VerdictEvent(k, o, i, v.status, v.reason))
                    if v.status == MALICIOUS:
                        self.declared[o].add(i)
        self.events.extend(events)
        return events

    def _evidence(self, i, pre, post, t_prev, t_now, tilde) -> CheckEvidence:
        nb = self.nbrs[i]
        return CheckEvidence(
            subject=i,
            observer=-1,
            subject_nbrs=nb,
            x0=self.scenario.initial_values[i],
            x_prev=pre[i].x,
            x_now=post[i].x,
            sigma_prev=pre[i].sigma,
            sigma_now=post[i].sigma,
            trust_prev=t_prev[i],
            trust_now=t_now[i],
            nbr_sigma_prev={l: tilde[l][0] for l in nb},
            nbr_sigma_now={l: tilde[l][1] for l in nb},
            tilde_sigma_prev=tilde[i][0],
            tilde_sigma_now=tilde[i][1],
        )

    def evidence_for(self, subject: int) -> CheckEvidence:
        """Full two-hop evidence about ``subject`` for the round just run."""
        pre, post, t_prev, t_now = self.last
        tilde = {l: self._tilde(l, pre, post, self.k - 1) for l in range(self.scenario.n)}
        return self._evidence(subject, pre, post, t_prev, t_now, tilde)


def run_scenario(s: Scenario) -> Trace:
    world = World(s)
    n, rounds = s.n, s.max_rounds
    x = np.empty((rounds + 1, n))
    sigma = np.empty((rounds + 1, n))
    trust = []
    for k in range(rounds + 1):
        x[k] = [st.x for st in world.states]
        sigma[k] = [st.sigma for st in world.states]
        trust.append([world.trust_input(j, k) for j in range(n)])
        if k < rounds:
            world.run_round()
    return Trace(s, x, sigma, trust, list(world.events), s.assumption_report(), list(world.initiators))
