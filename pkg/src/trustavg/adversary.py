"""Fault models for malicious nodes.

A behavior rewrites what an otherwise honest node emits. The engine calls
the hooks at the point in the iteration where each quantity is produced:
``trust`` before the update, ``sigma`` when the running sum is broadcast,
``value`` when the new value is formed, and ``two_hop`` when the node
answers a two-hop running-sum request. Forged one-hop values are adopted as
the node's own state, so a forgery stays self-consistent afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import ClassVar, Optional

import numpy as np

from .consensus import Broadcast


class BehaviorError(ValueError):
    pass


class Behavior:
    kind: ClassVar[str] = ""
    #: True when the behavior never emits an incorrect running sum or value.
    benign: ClassVar[bool] = False

    def trust(self, trust: frozenset, k: int) -> frozenset:
        return trust

    def sigma(self, sigma_next: float, k: int, rng: np.random.Generator) -> float:
        return sigma_next

    def value(self, x_next: float, k: int, rng: np.random.Generator) -> float:
        return x_next

    def two_hop(self, sigma_prev: float, sigma_now: float, k: int) -> tuple[float, float]:
        return sigma_prev, sigma_now

    def is_benign(self) -> bool:
        return self.benign

    def stream_key(self) -> tuple[int, ...]:
        return ()

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for f in fields(self):
            val = getattr(self, f.name)
            if val is None:
                continue
            out[f.name] = val.to_dict() if isinstance(val, Behavior) else val
        return out


@dataclass(frozen=True)
class HonestDespiteLabel(Behavior):
    kind: ClassVar[str] = "honest_despite_label"
    benign: ClassVar[bool] = True


@dataclass(frozen=True)
class RandomOffset(Behavior):
    """Adds a fresh uniform(-amplitude, amplitude) offset to every new value."""

    kind: ClassVar[str] = "random_offset"
    amplitude: float
    seed: Optional[int] = None
    start_round: int = 0

    def __post_init__(self):
        if not self.amplitude > 0:
            raise BehaviorError(f"random_offset amplitude must be > 0, got {self.amplitude}")

    def value(self, x_next, k, rng):
        if k < self.start_round:
            return x_next
        return x_next + rng.uniform(-self.amplitude, self.amplitude)

    def stream_key(self):
        return () if self.seed is None else (int(self.seed),)


@dataclass(frozen=True)
class SigmaForge(Behavior):
    kind: ClassVar[str] = "sigma_forge"
    delta: float
    start_round: int = 0

    def sigma(self, sigma_next, k, rng):
        return sigma_next + self.delta if k >= self.start_round else sigma_next


@dataclass(frozen=True)
class TwoHopMismatch(Behavior):
    """Honest one-hop traffic, skewed answers to two-hop requests."""

    kind: ClassVar[str] = "two_hop_mismatch"
    delta: float
    start_round: int = 0

    def two_hop(self, sigma_prev, sigma_now, k):
        if k < self.start_round:
            return sigma_prev, sigma_now
        return sigma_prev + self.delta, sigma_now + self.delta


@dataclass(frozen=True)
class UnfairDeclare(Behavior):
    """Reports ``victim`` as untrustworthy and computes honestly without it."""

    kind: ClassVar[str] = "unfair_declare"
    benign: ClassVar[bool] = True
    victim: int
    start_round: int = 0

    def trust(self, trust, k):
        return trust - {self.victim} if k >= self.start_round else trust


@dataclass(frozen=True)
class DelayedMisbehavior(Behavior):
    kind: ClassVar[str] = "delayed_misbehavior"
    honest_until: int
    then: Behavior

    def trust(self, trust, k):
        return trust if k < self.honest_until else self.then.trust(trust, k)

    def sigma(self, sigma_next, k, rng):
        return sigma_next if k < self.honest_until else self.then.sigma(sigma_next, k, rng)

    def value(self, x_next, k, rng):
        return x_next if k < self.honest_until else self.then.value(x_next, k, rng)

    def two_hop(self, sigma_prev, sigma_now, k):
        if k < self.honest_until:
            return sigma_prev, sigma_now
        return self.then.two_hop(sigma_prev, sigma_now, k)

    def is_benign(self):
        return self.then.is_benign()

    def stream_key(self):
        return self.then.stream_key()


BEHAVIORS = {
    cls.kind: cls
    for cls in (HonestDespiteLabel, RandomOffset, SigmaForge, TwoHopMismatch, UnfairDeclare, DelayedMisbehavior)
}


def _check_type(kind: str, name: str, annotation: str, value) -> None:
    if value is None and annotation.startswith("Optional"):
        return
    ok = not isinstance(value, bool) and isinstance(value, (int, float) if annotation == "float" else int)
    if not ok:
        raise BehaviorError(f"{kind}.{name} must be {'a number' if annotation == 'float' else 'an integer'}, got {value!r}")


def behavior_from_dict(spec: dict) -> Behavior:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise BehaviorError(f"behavior must be a mapping with a 'kind' key, got {spec!r}")
    params = dict(spec)
    kind = params.pop("kind")
    cls = BEHAVIORS.get(kind)
    if cls is None:
        raise BehaviorError(f"unknown behavior kind {kind!r}")
    unknown = set(params) - {f.name for f in fields(cls)}
    if unknown:
        raise BehaviorError(f"unknown parameters for {kind}: {sorted(unknown)}")
    for f in fields(cls):
        if f.name in params and f.name != "then":
            _check_type(kind, f.name, f.type, params[f.name])
    if "then" in params:
        params["then"] = behavior_from_dict(params["then"])
    try:
        return cls(**params)
    except TypeError as exc:
        raise BehaviorError(f"bad parameters for {kind}: {exc}") from None


def behavior_rng(scenario_seed: int, node: int, behavior: Behavior) -> np.random.Generator:
    """Adversary stream, disjoint from every honest-side stream."""
    return np.random.default_rng([int(scenario_seed), 1, int(node), *behavior.stream_key()])


@dataclass(frozen=True)
class Outgoing:
    """Everything a node emits in one iteration."""

    broadcast: Broadcast
    tilde_sigma_prev: float
    tilde_sigma_now: float


def apply_behavior(b: Behavior, honest: Outgoing, k: int, rng: np.random.Generator) -> Outgoing:
    """Forge a node's emitted payload.

    Only the reported trust set is rewritten here; the engine consults
    :meth:`Behavior.trust` before the update so that the numbers are
    recomputed under the forged set. The two-hop copy of the current running
    sum follows the forged one-hop value before any two-hop skew.
    """
    out = honest.broadcast
    sigma_next = b.sigma(out.sigma_next, k, rng)
    x_next = b.value(out.x_next, k, rng)
    trust_set = b.trust(out.trust_set, k) | {out.sender}
    t_prev, t_now = b.two_hop(honest.tilde_sigma_prev, sigma_next, k)
    return Outgoing(replace(out, sigma_next=sigma_next, x_next=x_next, trust_set=trust_set), t_prev, t_now)
