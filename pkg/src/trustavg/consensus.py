"""Honest-node update with trust-driven add/remove compensation.

One iteration for node ``j`` runs, in this order::

    delta = update_trust_sets(state, trust_now)
    e = correction_term(state, delta)          # reads sigma[k]
    sigma_next = advance_running_sum(state)    # broadcast this
    mu_next = update_mu(state, delta, received)
    x_next = step_value(state, delta, mu_next, e)
    state = commit(state, trust_now, sigma_next, mu_next, x_next)

All functions are pure; :class:`NodeState` is immutable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

EPS = 1e-9


def tolerance(*magnitudes: float, eps: float = EPS) -> float:
    """Absolute tolerance ``eps * max(1, |m|...)`` for "exactly zero" claims."""
    return eps * max([1.0, *(abs(m) for m in magnitudes)])


class ConsensusError(ValueError):
    pass


@dataclass(frozen=True)
class NodeState:
    id: int
    x0: float
    x: float
    sigma: float
    mu: Mapping[int, float]
    prev_trust: frozenset
    prev_sigma: float
    n_total: int
    nbrs: frozenset


@dataclass(frozen=True)
class TrustDelta:
    active_nbrs: frozenset
    degree: int
    dropped: frozenset
    added: frozenset


@dataclass(frozen=True)
class Broadcast:
    """One-hop payload sent at the end of an iteration."""

    sender: int
    sigma_next: float
    x_next: float
    trust_set: frozenset


def init_node(id: int, x0: float, nbrs, n_total: int) -> NodeState:
    nbrs = frozenset(nbrs)
    if id in nbrs:
        raise ConsensusError(f"node {id} listed as its own neighbor")
    if n_total < len(nbrs) + 1:
        raise ConsensusError(f"n_total={n_total} too small for {len(nbrs)} neighbors")
    return NodeState(
        id=id,
        x0=float(x0),
        x=float(x0),
        sigma=0.0,
        mu={i: 0.0 for i in sorted(nbrs)},
        prev_trust=frozenset(range(n_total)),
        prev_sigma=0.0,
        n_total=n_total,
        nbrs=nbrs,
    )


def update_trust_sets(state: NodeState, trust_now) -> TrustDelta:
    trust_now = frozenset(trust_now)
    if state.id not in trust_now:
        raise ConsensusError(f"trust set of node {state.id} must contain the node itself")
    active = state.nbrs & trust_now
    return TrustDelta(
        active_nbrs=active,
        degree=len(active),
        dropped=state.nbrs & (state.prev_trust - trust_now),
        added=state.nbrs & (trust_now - state.prev_trust),
    )


def advance_running_sum(state: NodeState) -> float:
    return state.sigma + state.x


def update_mu(state: NodeState, delta: TrustDelta, received: Mapping[int, float]) -> dict[int, float]:
    """New per-neighbor running-sum table; distrusted neighbors read as 0."""
    missing = state.nbrs - set(received)
    if missing:
        raise ConsensusError(f"node {state.id} missing running sums from {sorted(missing)}")
    return {i: (float(received[i]) if i in delta.active_nbrs else 0.0) for i in sorted(state.nbrs)}


def correction_term(state: NodeState, delta: TrustDelta) -> float:
    # state.sigma must still be sigma[k]
    return (len(delta.dropped) - len(delta.added)) * state.sigma / state.n_total


def step_value(state: NodeState, delta: TrustDelta, mu_next: Mapping[int, float], e: float) -> float:
    n = state.n_total
    inflow = sum(mu_next[i] - state.mu[i] for i in sorted(state.nbrs))
    return (1.0 - delta.degree / n) * state.x + inflow / n + e


def commit(state: NodeState, trust_now, sigma_next: float, mu_next: Mapping[int, float], x_next: float) -> NodeState:
    return replace(
        state,
        x=float(x_next),
        prev_sigma=state.sigma,
        sigma=float(sigma_next),
        mu=dict(mu_next),
        prev_trust=frozenset(trust_now),
    )


def invariant_residual(state: NodeState, delta_prev: TrustDelta, nbr_sigmas: Mapping[int, float]) -> float:
    """Deviation from the conserved relation between value and running sums.

    ``delta_prev`` describes the trusted neighbors used in the previous
    iteration and ``nbr_sigmas`` their current running sums. Zero, up to
    rounding, for every node that has updated honestly since the start.
    """
    missing = delta_prev.active_nbrs - set(nbr_sigmas)
    if missing:
        raise ConsensusError(f"missing running sums for {sorted(missing)}")
    n = state.n_total
    inflow = sum(nbr_sigmas[i] for i in sorted(delta_prev.active_nbrs))
    return (state.x - state.x0) + delta_prev.degree / n * state.sigma - inflow / n


def active_delta(nbrs, trust) -> TrustDelta:
    """TrustDelta carrying only the active set for ``trust`` (no transitions)."""
    active = frozenset(nbrs) & frozenset(trust)
    return TrustDelta(active, len(active), frozenset(), frozenset())

