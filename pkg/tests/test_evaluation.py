import json
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expmem.agent.mock import MockAgent, MockAgentScript
from expmem.construction import build
from expmem.evaluation import (
    AblationSpec,
    CaseSetMismatch,
    EvalConfig,
    GridError,
    TrialCountMismatch,
    compute_metrics,
    load_grid,
    parse_grid,
    read_runlogs,
    render_report,
    run_ablation,
    run_eval,
)
from expmem.retrieval import RetrievalConfig
from helpers import agent_for, logs_from_matrix, make_case, metrics_oracle, mock_world, random_matrix


def test_four_case_worked_example():
    base = [[True, True, False, False]]
    exp = [[(True, False), (True, True), (True, True), (False, True)]]
    report = compute_metrics(*logs_from_matrix(base, exp))
    assert report.accuracy_baseline == 0.5
    assert report.accuracy_exp == 0.75
    assert report.delta == 0.25
    assert report.recall == 0.75
    assert report.precision == pytest.approx(2 / 3)
    assert report.beneficial == 0.25
    assert report.harmful == 0.0
    assert report.beneficial_cases == ("case0002",)


def test_precision_undefined_without_retrieval():
    report = compute_metrics(*logs_from_matrix([[True, False]], [[(True, False), (False, False)]]))
    assert report.precision is None
    assert report.recall == 0.0
    assert "n/a" in render_report(report)


def test_multi_trial_semantics():
    # case0: wrong in both baseline trials, right in both exp trials -> beneficial
    # case1: wrong then right in baseline -> not beneficial even though exp always right
    base = [[False, False], [False, True]]
    exp = [[(True, True), (True, False)], [(True, False), (True, False)]]
    report = compute_metrics(*logs_from_matrix(base, exp))
    assert report.beneficial_cases == ("case0000",)
    assert report.recall == 0.5
    assert report.precision == 1.0
    assert report.accuracy_baseline == 0.25


def test_mismatched_logs_rejected():
    b, e = logs_from_matrix([[True, False]], [[(True, False), (True, False)]])
    with pytest.raises(TrialCountMismatch):
        compute_metrics(b, e + e)
    _, other = logs_from_matrix([[True, False]], [[(True, False), (True, False)]], ids=["x", "y"])
    with pytest.raises(CaseSetMismatch):
        compute_metrics(b, other)
    with pytest.raises(TrialCountMismatch):
        compute_metrics([], [])


@settings(max_examples=60)
@given(st.integers(1, 40), st.integers(1, 3), st.integers(0, 10_000))
def test_metrics_match_oracle_and_decompose(n, T, seed):
    base, exp = random_matrix(random.Random(seed), n, T)
    report = compute_metrics(*logs_from_matrix(base, exp))
    assert dict(report.counts) == metrics_oracle(base, exp)
    for name in ("accuracy_baseline", "accuracy_exp", "recall", "beneficial", "harmful"):
        assert 0.0 <= getattr(report, name) <= 1.0
    assert report.beneficial + report.harmful <= 1.0
    # exact rational decomposition: per-case accuracy gains sum to the delta
    gain = sum(
        Fraction(sum(exp[t][i][0] for t in range(T)) - sum(base[t][i] for t in range(T)), n * T)
        for i in range(n)
    )
    assert report.delta == pytest.approx(float(gain))


def test_run_eval_is_paired_and_memory_helps(provider, taxonomy):
    script, corpus, test = mock_world(n_construction=40, n_test=20)
    agent = agent_for(script)
    store, _ = build(corpus, agent, provider, taxonomy=taxonomy)
    baseline = run_eval(test, agent, None, None, EvalConfig(), "baseline", 2)
    exp = run_eval(test, agent, store, provider, EvalConfig(), "with-memory", 2)
    assert [len(log.entries) for log in baseline] == [20, 20]
    report = compute_metrics(baseline, exp)
    assert report.delta > 0 and report.harmful == 0
    assert all(not e.retrieved for log in baseline for e in log.entries)


def test_run_eval_argument_checks(store, provider):
    with pytest.raises(ValueError):
        run_eval([], MockAgent(), None, None, trials=0)
    with pytest.raises(ValueError):
        run_eval([], MockAgent(), None, None, mode="with-memory")


def test_failures_count_as_incorrect(store, provider):
    agent = agent_for(MockAgentScript.from_dict({"failures": {"diagnose": ["c2"]}}))
    cases = [make_case("c1", "A"), make_case("c2", "B")]
    (log,) = run_eval(cases, agent, store, provider, EvalConfig(), "with-memory")
    assert [e.correct for e in log.entries] == [True, False]
    assert log.failures == 1 and log.entries[1].diagnosis is None


def test_judge_grading_uses_agent(store, provider):
    class Lenient(MockAgent):
        def judge_match(self, case, predicted):
            return True

    agent = Lenient(MockAgentScript.from_dict({"confusions": [{"truth": "A", "distractor": "B"}]}))
    cases = [make_case("c1", "A")]
    assert not run_eval(cases, agent, None, None, EvalConfig(), "baseline")[0].entries[0].correct
    assert run_eval(cases, agent, None, None, EvalConfig(grading="judge"), "baseline")[0].entries[0].correct


class CountingAgent(MockAgent):
    def __init__(self, script=None, explode_after=None):
        super().__init__(script)
        self.calls = 0
        self.explode_after = explode_after

    def diagnose(self, case, notes, attempt=0):
        self.calls += 1
        if self.explode_after is not None and self.calls > self.explode_after:
            raise KeyboardInterrupt
        return super().diagnose(case, notes, attempt)


def test_resume_after_interruption(tmp_path):
    cases = [make_case(f"c{i}", f"Entity {i}") for i in range(6)]
    path = tmp_path / "baseline.jsonl"
    with pytest.raises(KeyboardInterrupt):
        run_eval(cases, CountingAgent(explode_after=4), None, None, EvalConfig(), "baseline", 2, log_path=path)
    meta, logs, complete = read_runlogs(path)
    assert not complete and sum(len(l.entries) for l in logs) == 4
    agent = CountingAgent()
    resumed = run_eval(cases, agent, None, None, EvalConfig(), "baseline", 2, log_path=path)
    assert agent.calls == 8
    fresh = run_eval(cases, MockAgent(), None, None, EvalConfig(), "baseline", 2, log_path=tmp_path / "fresh.jsonl")
    assert [l.entries for l in resumed] == [l.entries for l in fresh]
    assert path.read_text() == (tmp_path / "fresh.jsonl").read_text()


def test_torn_last_line_is_ignored(tmp_path):
    cases = [make_case(f"c{i}", "A") for i in range(3)]
    path = tmp_path / "log.jsonl"
    run_eval(cases, MockAgent(), None, None, EvalConfig(), "baseline", 1, log_path=path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:3]) + "\n" + lines[3][:10])
    _, logs, complete = read_runlogs(path)
    assert not complete and len(logs[0].entries) == 2


def test_changed_settings_restart_the_log(tmp_path):
    cases = [make_case("c1", "A")]
    path = tmp_path / "log.jsonl"
    run_eval(cases, MockAgent(), None, None, EvalConfig(), "baseline", 1, log_path=path)
    agent = CountingAgent()
    run_eval(cases, agent, None, None, EvalConfig(grading="judge"), "baseline", 1, log_path=path)
    assert agent.calls == 1


def test_worker_count_does_not_change_logs(provider, taxonomy):
    script, corpus, test = mock_world(n_construction=40, n_test=30)
    agent = agent_for(script)
    store, _ = build(corpus, agent, provider, taxonomy=taxonomy)
    one = run_eval(test, agent, store, provider, EvalConfig(workers=1), "with-memory", 2)
    many = run_eval(test, agent, store, provider, EvalConfig(workers=8), "with-memory", 2)
    assert [l.entries for l in one] == [l.entries for l in many]


# --------------------------------------------------------------------- grid


def test_shipped_grid():
    grid = load_grid()
    assert [s.name for s in grid][0] == "two-round (default)"
    assert len(grid) == 6
    by_name = {s.name: s for s in grid}
    assert by_name["one-round construction"].rounds == 1
    assert by_name["single-department retrieval"].cross_department is False
    assert [by_name[f"tau={t}"].tau for t in ("0.80", "0.90", "0.95")] == [0.8, 0.9, 0.95]


def test_grid_errors(tmp_path):
    with pytest.raises(GridError, match="empty"):
        parse_grid({"grid": []})
    with pytest.raises(GridError, match="'taux'"):
        parse_grid([{"name": "x", "taux": 0.5}])
    with pytest.raises(GridError):
        parse_grid([{"name": "x", "rounds": 3}])
    with pytest.raises(GridError):
        parse_grid([{"name": "x"}, {"name": "x"}])


def test_spec_overrides_only_given_fields():
    base = RetrievalConfig(tau=0.9, top_k=5)
    assert AblationSpec("x", tau=0.5).retrieval(base) == RetrievalConfig(tau=0.5, top_k=5)


def test_ablation_builds_once_per_rounds_value(provider, taxonomy):
    script, corpus, test = mock_world(n_construction=40, n_test=20)
    grid = parse_grid([
        {"name": "a", "rounds": 2, "tau": 0.5},
        {"name": "b", "rounds": 2, "tau": 0.95},
        {"name": "c", "rounds": 1},
    ])
    stores = {}
    table = run_ablation(test, corpus, agent_for(script), provider, grid, stores=stores, taxonomy=taxonomy)
    assert sorted(stores) == [1, 2]
    assert len({r.report.accuracy_baseline for r in table.rows}) == 1
    text = table.render()
    assert text.splitlines()[2].startswith("baseline (no memory)")
    json.dumps(table.to_dict())


def test_recall_monotone_in_tau(provider, taxonomy):
    script, corpus, test = mock_world(n_construction=40, n_test=30)
    agent = agent_for(script)
    store, _ = build(corpus, agent, provider, taxonomy=taxonomy)
    baseline = run_eval(test, agent, None, None, EvalConfig(), "baseline")
    recalls = []
    for tau in (0.0, 0.2, 0.5, 0.9, 1.0):
        exp = run_eval(test, agent, store, provider, EvalConfig(retrieval=RetrievalConfig(tau=tau)), "with-memory")
        recalls.append(compute_metrics(baseline, exp).recall)
    assert recalls == sorted(recalls, reverse=True)
