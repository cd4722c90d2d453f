from dataclasses import replace

import numpy as np
import pytest

from trustavg import consensus as cs
from trustavg.adversary import HonestDespiteLabel, RandomOffset, SigmaForge, TwoHopMismatch, UnfairDeclare
from trustavg.engine import (
    Scenario,
    ScenarioError,
    Trace,
    World,
    behavior_average,
    convergence_metrics,
    label_average,
    run_scenario,
    trustworthy_average,
)
from trustavg.graph import build_graph
from trustavg.io import load_scenario
from trustavg.trust import MALICIOUS, TrustSchedule

from conftest import CANON_EDGES, weight_matrix

V = frozenset(range(5))


def _scenario(malicious=None, mode="oracle", truth=V, n=5, edges=CANON_EDGES, **kw):
    g = build_graph(n, edges)
    sched = TrustSchedule(frozenset(truth), n) if mode == "oracle" else None
    return Scenario(g, list(range(1, n + 1)), malicious or {}, mode, sched, **kw)


def test_two_node_round():
    s = Scenario(build_graph(2, [(0, 1)]), [0, 1], {}, "oracle", TrustSchedule(frozenset({0, 1}), 2), max_rounds=1)
    t = run_scenario(s)
    assert list(t.x[1]) == [0.5, 0.5]


def test_canonical_first_round_matches_matrix():
    t = run_scenario(_scenario(max_rounds=1))
    np.testing.assert_allclose(t.x[1], weight_matrix(5, CANON_EDGES) @ np.arange(1.0, 6.0), atol=1e-15)
    np.testing.assert_allclose(t.x[1], [1.8, 2.0, 3.0, 3.4, 4.8], atol=1e-15)


def test_forged_sigma_caught_same_round():
    w = World(_scenario({4: SigmaForge(0.5, start_round=6)}, mode="concurrent"))
    for _ in range(6):
        assert w.run_round() == []
    events = w.run_round()
    assert [(e.observer, e.subject, e.status, e.reason) for e in events] == [(3, 4, MALICIOUS, "q_fail")]


def test_zero_rounds():
    t = run_scenario(_scenario({4: HonestDespiteLabel()}, truth=range(4), max_rounds=0))
    assert t.x.shape == (1, 5) and t.rounds == 0
    assert len(list(t.records())) == 5
    assert convergence_metrics(t, 2.5, 1e-6)[:2] == (False, None)


def test_reference_targets():
    x5 = _scenario({4: HonestDespiteLabel()}, truth=range(4))
    assert trustworthy_average(x5) == 2.5
    g20 = build_graph(20, [(i, i + 1) for i in range(19)])

    def s20(bad):
        bad0 = {b - 1 for b in bad}
        truth = frozenset(range(20)) - bad0
        return Scenario(g20, range(1, 21), {b: HonestDespiteLabel() for b in bad0}, "oracle", TrustSchedule(truth, 20))

    assert round(trustworthy_average(s20({6, 8, 11, 14, 15, 19})), 4) == 9.7857
    assert round(trustworthy_average(s20({2, 6, 9})), 4) == 11.3529


def test_targets_by_mode():
    s = _scenario({1: UnfairDeclare(0), 4: SigmaForge(1.0)}, mode="concurrent")
    assert label_average(s) == pytest.approx(8 / 3)
    assert trustworthy_average(s) == behavior_average(s) == 2.5
    o = replace(s, trust_mode="oracle", schedule=TrustSchedule(frozenset({0, 2, 3}), 5))
    assert trustworthy_average(o) == label_average(o)


def test_empty_trustworthy_set_rejected():
    with pytest.raises(ScenarioError):
        _scenario({j: HonestDespiteLabel() for j in range(5)}, mode="concurrent")


@pytest.mark.parametrize(
    "kw, field",
    [
        (dict(malicious={7: HonestDespiteLabel()}), "malicious"),
        (dict(malicious={4: UnfairDeclare(0)}), "malicious"),
        (dict(check_probability=0.0, mode="infrequent"), "check_probability"),
        (dict(check_probability=1.5, mode="infrequent"), "check_probability"),
        (dict(mode="sometimes"), "trust_mode"),
        (dict(max_rounds=-1), "max_rounds"),
        (dict(convergence_tol=0.0), "tol"),
    ],
)
def test_scenario_validation(kw, field):
    with pytest.raises(ScenarioError) as exc:
        _scenario(**kw)
    assert exc.value.field == field


def test_scenario_wrong_x0_length():
    with pytest.raises(ScenarioError) as exc:
        Scenario(build_graph(3, [(0, 1), (1, 2)]), [1.0], {}, "concurrent")
    assert exc.value.field == "x0"


def test_oracle_needs_schedule():
    with pytest.raises(ScenarioError):
        Scenario(build_graph(3, [(0, 1), (1, 2)]), [1, 2, 3], {}, "oracle")


def _const_trace(value, rounds=5):
    s = _scenario(mode="concurrent", max_rounds=rounds)
    x = np.full((rounds + 1, 5), value)
    return Trace(s, x, np.zeros_like(x), [[V] * 5] * (rounds + 1), [], [])


def test_convergence_constant():
    assert convergence_metrics(_const_trace(2.5), 2.5, 1e-6) == (True, 0, 0.0)


def test_convergence_excludes_malicious():
    t = _const_trace(2.5)
    t = Trace(replace(t.scenario, malicious={4: RandomOffset(1.0)}), t.x.copy(), t.sigma, t.trust, [], [])
    t.x[:, 4] = np.linspace(0, 100, t.x.shape[0])
    assert convergence_metrics(t, 2.5, 1e-6)[0]


def test_convergence_must_stay_inside():
    t = _const_trace(2.5, rounds=6)
    t.x[3, 1] = 9.0
    assert convergence_metrics(t, 2.5, 1e-6) == (True, 4, 0.0)
    t.x[-1, 1] = 2.6
    conv, at, err = convergence_metrics(t, 2.5, 1e-6)
    assert (conv, at) == (False, None) and err == pytest.approx(0.1)


def test_fig2_middle_settles_in_expected_window():
    t = run_scenario(load_scenario("fig2_middle"))
    conv, at, _ = convergence_metrics(t, 2.5, 1e-2)
    assert conv and 30 <= at <= 60


def test_determinism_in_memory():
    s = load_scenario("infrequent_sigma_forge")
    a, b = run_scenario(s), run_scenario(s)
    assert a.x.tobytes() == b.x.tobytes() and a.sigma.tobytes() == b.sigma.tobytes()
    assert a.events == b.events and a.trust == b.trust


@pytest.mark.parametrize("mode", ["concurrent", "infrequent"])
def test_honest_despite_label_invisible_when_checking(mode):
    base = _scenario(mode=mode, max_rounds=80, check_probability=0.3, seed=4)
    labelled = replace(base, malicious={4: HonestDespiteLabel(), 1: HonestDespiteLabel()})
    a, b = run_scenario(base), run_scenario(labelled)
    assert a.x.tobytes() == b.x.tobytes() and a.sigma.tobytes() == b.sigma.tobytes()
    assert a.trust == b.trust and a.events == b.events == []


def _replay_honest(t):
    """Recompute each honest node's step from the trace alone."""
    s = t.scenario
    for j in sorted(s.honest):
        st = cs.init_node(j, s.initial_values[j], s.graph.neighbors(j), s.n)
        for k in range(t.rounds):
            d = cs.update_trust_sets(st, t.trust[k][j])
            e = cs.correction_term(st, d)
            sig = cs.advance_running_sum(st)
            mu = cs.update_mu(st, d, {i: t.sigma[k + 1, i] for i in st.nbrs})
            st = cs.commit(st, t.trust[k][j], sig, mu, cs.step_value(st, d, mu, e))
            assert st.x == t.x[k + 1, j] and st.sigma == t.sigma[k + 1, j]


@pytest.mark.parametrize("name", ["fig2_right", "infrequent_sigma_forge", "collusion_line6", "unfair_declare"])
def test_replay_reproduces_trace(name):
    _replay_honest(run_scenario(load_scenario(name, max_rounds=120)))


def test_random_offset_cannot_move_oracle_limit():
    for seed in range(5):
        s = _scenario({4: RandomOffset(2.0)}, truth=range(4), max_rounds=400, seed=seed)
        s = replace(s, schedule=TrustSchedule(frozenset(range(4)), 5, "random_until", 15, seed=seed))
        t = run_scenario(s)
        assert convergence_metrics(t, 2.5, 1e-6)[0]


def test_detection_modes_reach_behavior_target():
    for b in (RandomOffset(1.0, start_round=3), SigmaForge(0.3, 2), TwoHopMismatch(0.5, 1)):
        s = _scenario({1: b}, mode="infrequent", check_probability=0.3, max_rounds=500, seed=2)
        t = run_scenario(s)
        assert trustworthy_average(s) == 3.25
        assert convergence_metrics(t, 3.25, 1e-6)[0], b


def test_unfair_declare_link_removed():
    t = run_scenario(load_scenario("unfair_declare"))
    summary = t.summary()
    assert summary["detection_rounds"] == {"1": {"0": 5, "2": None}}
    assert summary["targets"]["primary"] == 3.0
    assert summary["converged"]


def test_summary_fields():
    t = run_scenario(load_scenario("collusion_line6", max_rounds=50))
    s = t.summary()
    assert set(s) >= {
        "targets",
        "final_honest_values",
        "rounds_to_tolerance",
        "detection_rounds",
        "assumption_violations",
        "max_error_final",
        "converged",
    }
    assert s["assumption_violations"][0]["kind"] == "adjacent_malicious_pair"
    assert set(s["final_honest_values"]) == {"0", "1", "2", "3"}
