"""Shared fixtures and independent reference computations."""

import numpy as np
import pytest

from trustavg.adversary import HonestDespiteLabel, RandomOffset, SigmaForge, TwoHopMismatch
from trustavg.engine import Scenario
from trustavg.graph import build_graph, random_connected_graph
from trustavg.trust import TrustSchedule

CANON_EDGES = [(0, 1), (1, 2), (2, 3), (3, 0), (3, 4)]


@pytest.fixture
def canon():
    return build_graph(5, CANON_EDGES)


def weight_matrix(n, edges, active=None):
    """Dense W = I - L/N over the edges whose endpoints trust each other."""
    W = np.eye(n)
    for a, b in edges:
        if active is not None and not (active[a] and active[b]):
            continue
        W[a, b] = W[b, a] = 1.0 / n
        W[a, a] -= 1.0 / n
        W[b, b] -= 1.0 / n
    return W


def reachable_by_powers(n, nodes, edges):
    """Connectivity via (I + A)^(n-1) > 0, restricted to ``nodes``."""
    nodes = sorted(nodes)
    if len(nodes) <= 1:
        return True
    idx = {v: i for i, v in enumerate(nodes)}
    A = np.eye(len(nodes), dtype=np.int64)
    for a, b in edges:
        if a in idx and b in idx:
            A[idx[a], idx[b]] = A[idx[b], idx[a]] = 1
    R = np.linalg.matrix_power(A, len(nodes) - 1)
    return bool((R[0] > 0).all())


def residuals_from_trace(t):
    """Recompute the value/running-sum invariant for every honest node from a trace."""
    s = t.scenario
    n = s.n
    x0 = np.array(s.initial_values)
    out = np.zeros((t.x.shape[0], n))
    for k in range(t.x.shape[0]):
        for j in sorted(s.honest):
            used = s.graph.neighbors(j) if k == 0 else s.graph.neighbors(j) & t.trust[k - 1][j]
            inflow = sum(t.sigma[k, i] for i in sorted(used)) if k else 0.0
            deg = len(used) if k else len(s.graph.neighbors(j))
            out[k, j] = (t.x[k, j] - x0[j]) + deg / n * t.sigma[k, j] - inflow / n
    return out


def random_adversary(rng, n_rounds=30):
    kind = rng.integers(0, 4)
    start = int(rng.integers(0, n_rounds))
    if kind == 0:
        return HonestDespiteLabel()
    if kind == 1:
        return RandomOffset(float(rng.uniform(0.1, 3.0)), start_round=start)
    if kind == 2:
        return SigmaForge(float(rng.uniform(-2, 2)) or 0.5, start_round=start)
    return TwoHopMismatch(float(rng.uniform(0.1, 2.0)), start_round=start)


def random_oracle_scenario(seed, n_max=10, rounds=60, settle_max=30):
    """Random graph, random malicious set meeting connectivity, fluctuating trust."""
    rng = np.random.default_rng([seed, 99])
    n = int(rng.integers(3, n_max + 1))
    m = int(rng.integers(0, max(1, n // 3) + 1))
    bad = sorted(int(v) for v in rng.choice(n, size=m, replace=False))
    g = random_connected_graph(n, float(rng.uniform(0.3, 0.8)), seed=int(rng.integers(1 << 30)), malicious=bad)
    settle = int(rng.integers(0, settle_max + 1))
    sched = TrustSchedule(frozenset(range(n)) - set(bad), n, "random_until", settle, seed=seed)
    x0 = [float(v) for v in rng.uniform(-10, 10, n)]
    return Scenario(
        g, x0, {b: random_adversary(rng, rounds) for b in bad}, "oracle", sched, max_rounds=rounds, seed=seed
    )


def detection_graph(rng, n, n_bad):
    """Random graph satisfying connectivity of the honest part and no adjacent malicious pair."""
    bad = sorted(int(v) for v in rng.choice(n, size=n_bad, replace=False))
    g = random_connected_graph(
        n, float(rng.uniform(0.3, 0.7)), seed=int(rng.integers(1 << 30)), malicious=bad, forbid_adjacent_malicious=True
    )
    # every malicious node needs at least one honest neighbor to be observable
    if any(not g.neighbors(b) for b in bad):
        return detection_graph(rng, n, n_bad)
    return g, bad


# acceptance reporting: one line per criterion at the end of the run

_criteria: dict = {}
_criterion_of: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _criterion_of[item.nodeid] = (m.args[0], m.args[1])


def pytest_runtest_logreport(report):
    key = _criterion_of.get(report.nodeid)
    if key is None:
        return
    entry = _criteria.setdefault(key, {"ok": True, "details": []})
    if report.failed or (report.when == "call" and report.skipped):
        entry["ok"] = False
    if report.when == "call":
        entry["details"].extend(f"{k}={v}" for k, v in report.user_properties)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (num, title), entry in sorted(_criteria.items()):
        status = "PASS" if entry["ok"] else "FAIL"
        detail = f" ({', '.join(entry['details'])})" if entry["details"] else ""
        terminalreporter.write_line(f"criterion {num:2d} {status}: {title}{detail}")
