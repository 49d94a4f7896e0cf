"""Smoke test for the Python bindings.

Build and install first, e.g. `pip install ./crates/python`, then run
`python python/smoke_test.py`.
"""

import json
import math

import emorl_py as em


def main():
    assert em.reward("losing", "happy", "present") == 1.0
    assert em.reward("winning", "angry", "absent") == -1.0
    assert abs(em.upper_bound() - 45.28) < 0.01
    assert len(em.state_labels()) == 18 and len(em.action_labels()) == 9

    sim = em.Simulator()
    data = sim.generate_dataset(42)
    assert data.episode_count == 5
    assert 175 <= len(data) <= 290
    assert 0.0 < data.exploration_rate <= 1.0
    assert sum(map(sum, data.visit_counts())) == len(data)
    stats = json.loads(data.stats_json())
    assert stats["steps"] == len(data)
    assert abs(sum(sim.transition_distribution(3, 4)) - 1.0) < 1e-12

    q = sim.optimal_q()
    start = em.state_labels().index("draw/neutral/absent")
    v_star = max(q[start])
    assert 30.0 < v_star < 32.0, v_star

    run = em.train_agent("bcq", data, {"total_steps": 500, "seed": 1})
    assert len(run.epochs) == 5
    assert run.selected_value is not None and math.isfinite(run.selected_value)
    again = em.train_agent("bcq", data, {"total_steps": 500, "seed": 1})
    assert again.to_json() == run.to_json()

    try:
        em.train_agent("sac", data)
    except ValueError as e:
        assert "nfq, dqn, ddqn, bcq, cql" in str(e)
    else:
        raise AssertionError("unknown algorithm accepted")

    fake = em.train_agent("dqn", data, {"total_steps": 100})
    report = em.report_markdown([run, fake])
    assert "45.28" in report

    print("V*(start) = %.3f" % v_star)
    print(run)
    print("smoke test passed")


if __name__ == "__main__":
    main()
