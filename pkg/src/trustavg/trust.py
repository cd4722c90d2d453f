"""Trust assessments: scripted oracle schedules and evidence-based checking.

Two sources of trust sets are supported. An oracle :class:`TrustSchedule`
hands every node a set per round (eventually the true honest set). The
checking path instead lets each node audit its neighbors from one-hop and
two-hop broadcasts with four parity residuals:

``p``  reported value minus the value recomputed from the subject's inputs
``q``  running-sum step minus the previously reported value
``r``  the subject's value/running-sum invariant
``s``  disagreement between one-hop and two-hop copies of its running sum
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from .consensus import (
    EPS,
    NodeState,
    active_delta,
    correction_term,
    invariant_residual,
    step_value,
    tolerance,
    update_mu,
    update_trust_sets,
)

TRUSTED = "trusted"
POSSIBLY_UNTRUSTWORTHY = "possibly_untrustworthy"
MALICIOUS = "malicious"

REASONS = (
    "p_fail",
    "q_fail",
    "r_fail",
    "s_fail",
    "no_shrink_after_suspect",
    "unfairly_declared_me",
    "trust_set_grew",
)

SCHEDULE_MODES = ("correct_from_start", "random_until", "custom")


class TrustError(ValueError):
    pass


@dataclass(frozen=True)
class TrustSchedule:
    """Scripted trust assessments.

    ``random_until``: every t_ij[k] with k < settle_round is a fair coin
    flip seeded by ``(seed, k, j)``; from ``settle_round`` on the set is
    ``truth``. ``custom``: ``table[k][j]`` is looked up directly; when
    ``settle_round`` is given, rounds at or past it fall back to ``truth``.
    Nodes outside ``truth`` receive ``truth`` plus themselves once settled.
    """

    truth: frozenset
    n_total: int
    mode: str = "correct_from_start"
    settle_round: Optional[int] = None
    seed: int = 0
    table: Optional[Mapping[int, Mapping[int, frozenset]]] = None

    def __post_init__(self):
        if self.mode not in SCHEDULE_MODES:
            raise TrustError(f"unknown schedule mode {self.mode!r}")
        if self.mode == "random_until" and self.settle_round is None:
            raise TrustError("random_until needs settle_round")
        if self.mode == "custom" and self.table is None:
            raise TrustError("custom schedule needs a table")
        object.__setattr__(self, "truth", frozenset(self.truth))


def oracle_trust(schedule: TrustSchedule, k: int, j: int) -> frozenset:
    if k < 0:
        raise TrustError(f"round must be >= 0, got {k}")
    settled = schedule.settle_round is not None and k >= schedule.settle_round
    if schedule.mode == "correct_from_start" or (schedule.mode == "random_until" and settled):
        base = schedule.truth
    elif schedule.mode == "random_until":
        bits = np.random.default_rng([schedule.seed, 0, k, j]).integers(0, 2, schedule.n_total)
        base = frozenset(int(i) for i in np.flatnonzero(bits))
    else:
        row = schedule.table.get(k, {})
        if j in row:
            base = frozenset(row[j])
        elif settled:
            base = schedule.truth
        else:
            raise TrustError(f"custom trust table has no entry for round {k}, node {j}")
    return base | {j}


@dataclass(frozen=True)
class CheckEvidence:
    """What ``observer`` knows about neighbor ``subject`` around iteration K.

    ``*_prev`` hold index-K quantities and ``*_now`` index K+1, except the
    trust sets, which are T_i[K-1] and T_i[K]. ``nbr_sigma_*`` are the
    two-hop running sums of the subject's neighbors; ``tilde_sigma_*`` are
    the subject's own two-hop copies (default: the one-hop values).
    """

    subject: int
    observer: int
    subject_nbrs: frozenset
    x0: float
    x_prev: float
    x_now: float
    sigma_prev: float
    sigma_now: float
    trust_prev: frozenset
    trust_now: frozenset
    nbr_sigma_prev: Mapping[int, float]
    nbr_sigma_now: Mapping[int, float]
    tilde_sigma_prev: Optional[float] = None
    tilde_sigma_now: Optional[float] = None

    def magnitude(self) -> float:
        vals = [self.x_prev, self.x_now, self.sigma_prev, self.sigma_now]
        vals += list(self.nbr_sigma_prev.values()) + list(self.nbr_sigma_now.values())
        vals += [v for v in (self.tilde_sigma_prev, self.tilde_sigma_now) if v is not None]
        return max(abs(v) for v in vals)


@dataclass(frozen=True)
class ParityChecks:
    p: float
    q: float
    r: float = 0.0
    s: float = 0.0
    scale: float = 1.0


def _require(ev: CheckEvidence, table: Mapping[int, float], name: str) -> None:
    missing = ev.subject_nbrs - set(table)
    if missing:
        raise TrustError(f"{name} lacks running sums for neighbors {sorted(missing)} of {ev.subject}")


def _subject_state(ev: CheckEvidence, n_total: int) -> NodeState:
    i = ev.subject
    trust_prev = frozenset(ev.trust_prev) | {i}
    active_prev = ev.subject_nbrs & trust_prev
    return NodeState(
        id=i,
        x0=ev.x0,
        x=ev.x_prev,
        sigma=ev.sigma_prev,
        mu={l: (float(ev.nbr_sigma_prev[l]) if l in active_prev else 0.0) for l in sorted(ev.subject_nbrs)},
        prev_trust=trust_prev,
        prev_sigma=0.0,
        n_total=n_total,
        nbrs=ev.subject_nbrs,
    )


def predict_value(ev: CheckEvidence, n_total: int) -> float:
    """Recompute the subject's next value exactly as an honest node would."""
    _require(ev, ev.nbr_sigma_prev, "nbr_sigma_prev")
    _require(ev, ev.nbr_sigma_now, "nbr_sigma_now")
    state = _subject_state(ev, n_total)
    delta = update_trust_sets(state, frozenset(ev.trust_now) | {ev.subject})
    e = correction_term(state, delta)
    mu_next = update_mu(state, delta, ev.nbr_sigma_now)
    return step_value(state, delta, mu_next, e)


def concurrent_check(ev: CheckEvidence, n_total: int) -> ParityChecks:
    p = ev.x_now - predict_value(ev, n_total)
    q = ev.sigma_now - (ev.sigma_prev + ev.x_prev)
    return ParityChecks(p=p, q=q, scale=ev.magnitude())


def infrequent_check(ev: CheckEvidence, n_total: int) -> ParityChecks:
    base = concurrent_check(ev, n_total)
    now = replace(_subject_state(ev, n_total), x=ev.x_now, sigma=ev.sigma_now)
    r = invariant_residual(now, active_delta(ev.subject_nbrs, frozenset(ev.trust_now) | {ev.subject}), ev.nbr_sigma_now)
    t_prev = ev.sigma_prev if ev.tilde_sigma_prev is None else ev.tilde_sigma_prev
    t_now = ev.sigma_now if ev.tilde_sigma_now is None else ev.tilde_sigma_now
    s = abs(t_prev - ev.sigma_prev) + abs(t_now - ev.sigma_now)
    return ParityChecks(p=base.p, q=base.q, r=r, s=s, scale=base.scale)


@dataclass(frozen=True)
class Verdict:
    status: str = TRUSTED
    reason: Optional[str] = None
    shrinks: int = field(default=0, compare=False)


def classify(
    prior: Verdict,
    checks: Optional[ParityChecks],
    trust_now: frozenset,
    trust_prev: frozenset,
    observer_id: int,
    mode: str = "infrequent",
    eps: float = EPS,
    max_shrinks: Optional[int] = None,
) -> Verdict:
    """Update one observer's verdict on one subject after an iteration.

    ``checks`` is None on rounds where no parity evidence was gathered; the
    trust-set rules still apply because reported sets arrive every round.
    ``trust_now``/``trust_prev`` are the subject's reported T[k] and T[k-1].
    A pending suspicion is settled before fresh evidence is weighed.
    """
    if prior.status == MALICIOUS:
        return prior
    if mode not in ("concurrent", "infrequent"):
        raise TrustError(f"unknown checking mode {mode!r}")
    trust_now, trust_prev = frozenset(trust_now), frozenset(trust_prev)

    def bad(v: float) -> bool:
        return abs(v) > tolerance(checks.scale, eps=eps)

    if checks is not None:
        if bad(checks.q):
            return Verdict(MALICIOUS, "q_fail", prior.shrinks)
        if bad(checks.s):
            return Verdict(MALICIOUS, "s_fail", prior.shrinks)
    if observer_id in trust_prev - trust_now:
        return Verdict(MALICIOUS, "unfairly_declared_me", prior.shrinks)
    shrunk = trust_now < trust_prev
    if mode == "infrequent" and not trust_now <= trust_prev:
        return Verdict(MALICIOUS, "trust_set_grew", prior.shrinks)

    current = prior
    if prior.status == POSSIBLY_UNTRUSTWORTHY:
        used = prior.shrinks + 1
        if not shrunk or (max_shrinks is not None and used > max_shrinks):
            return Verdict(MALICIOUS, "no_shrink_after_suspect", prior.shrinks)
        current = Verdict(TRUSTED, None, used)

    if checks is not None:
        if mode == "concurrent":
            if bad(checks.p):
                return Verdict(MALICIOUS, "p_fail", current.shrinks)
        elif bad(checks.r):
            return Verdict(POSSIBLY_UNTRUSTWORTHY, "r_fail", current.shrinks)
        elif bad(checks.p) and not shrunk:
            # a neighbor dropped this round was reconstructed from its two-hop
            # copy; with the invariant intact that mismatch is not the subject's
            return Verdict(POSSIBLY_UNTRUSTWORTHY, "p_fail", current.shrinks)
    return current
