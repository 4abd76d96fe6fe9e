"""Fixture builders shared by the test modules."""

from __future__ import annotations

from expmem.agent.mock import MockAgent, MockAgentScript
from expmem.core import CaseRecord, DiagnosisLabel, ExperienceNote, PairKey, Provenance, default_taxonomy


def make_note(
    a: str = "Lymphoma",
    b: str = "Metastasis",
    department: str = "Neuroradiology",
    organ: str = "brain parenchyma",
    case_id: str = "c1",
    phase: str = "phase1",
    confusions=("Both present as enhancing masses",),
    error_analysis=(),
    **overrides,
) -> ExperienceNote:
    fields = dict(
        department=department,
        organ_region=organ,
        differentials=PairKey(DiagnosisLabel(a), DiagnosisLabel(b)),
        confusions=confusions,
        discriminators={a: f"Typical findings of {a}.", b: f"Typical findings of {b}."},
        decision_rule=(
            f"If restricted diffusion → favor {a}",
            f"If multiple lesions at grey-white junction → favor {b}",
        ),
        error_analysis=error_analysis,
        provenance=(Provenance(case_id, phase),),
    )
    fields.update(overrides)
    return ExperienceNote(**fields)


def make_case(case_id: str, truth: str, year: int | None = 2020, **kw) -> CaseRecord:
    kw.setdefault("clinical_history", f"History for {case_id}")
    kw.setdefault("discussion", f"Expert discussion for {case_id}")
    return CaseRecord(id=case_id, ground_truth=DiagnosisLabel(truth), published_year=year, **kw)


def confused_truth(i: int) -> str:
    return f"Condition {i} alpha"


def distractor(i: int) -> str:
    return f"Condition {i} beta"


def mock_world(
    n_construction: int = 200,
    n_test: int = 50,
    n_pairs: int = 10,
    n_seen: int = 8,
    n_benign: int = 20,
):
    """Deterministic world: ``n_pairs`` scripted confusions, of which the first
    ``n_seen`` occur during construction; every pair occurs in the test set."""
    script = MockAgentScript.from_dict(
        {
            "seed": 11,
            "confusions": [
                {"truth": confused_truth(i), "distractor": distractor(i), "mode": "always"}
                for i in range(n_pairs)
            ],
        }
    )
    construction = []
    for k in range(n_construction):
        truth = confused_truth((k // 2) % n_seen) if k % 2 == 0 else f"Benign entity {k % n_benign}"
        construction.append(make_case(f"b{k:03d}", truth, year=2020 + k % 5))
    test = []
    for k in range(n_test):
        truth = confused_truth(k % n_pairs) if k % 5 < 3 else f"Benign entity {k % n_benign}"
        test.append(make_case(f"t{k:03d}", truth, year=2025))
    return script, construction, test


def stochastic_world(n_pairs: int = 40, p: float = 0.5, seed: int = 3):
    """Every confused truth occurs once in construction and once in test."""
    script = MockAgentScript.from_dict(
        {
            "seed": seed,
            "confusions": [
                {"truth": confused_truth(i), "distractor": distractor(i), "probability": p}
                for i in range(n_pairs)
            ],
        }
    )
    construction = [make_case(f"s{i:03d}", confused_truth(i)) for i in range(n_pairs)]
    test = [make_case(f"q{i:03d}", confused_truth(i), year=2025) for i in range(n_pairs)]
    return script, construction, test


def agent_for(script: MockAgentScript) -> MockAgent:
    return MockAgent(script, default_taxonomy())


class TableEmbedder:
    """Provider returning hand-picked vectors; unknown texts get a fixed fallback."""

    def __init__(self, table, fallback=None):
        import numpy as np

        self._np = np
        self.table = {k: np.asarray(v, dtype=float) for k, v in table.items()}
        self.dimension = len(next(iter(self.table.values())))
        self.fallback = np.asarray(fallback if fallback is not None else [0.0] * (self.dimension - 1) + [1.0])
        self.calls = 0

    def embed(self, texts):
        self.calls += 1
        rows = [self.table.get(t, self.fallback) for t in texts]
        rows = [r / self._np.linalg.norm(r) for r in rows]
        return self._np.vstack(rows) if rows else self._np.zeros((0, self.dimension))


class BrokenEmbedder:
    dimension = 4

    def embed(self, texts):
        raise ConnectionError("encoder offline")


def brute_force_retrieve(store, paths, candidates, provider, tau, top_k):
    """Independent reference: nested loops over plain floats, no numpy."""
    import math
    from itertools import combinations

    from expmem.core import normalize

    seen, labels = set(), []
    for c in candidates:
        text = str(c)
        if normalize(text) not in seen:
            seen.add(normalize(text))
            labels.append(text)
    queries = set()
    for a, b in combinations(labels, 2):
        lo, hi = sorted([a, b], key=normalize)
        queries.add(f"{lo} vs. {hi}")
    wanted = {(d, o) for d, o in paths}
    notes = [n for n in store if n.path in wanted]
    if not queries or not notes:
        return []

    def vec(text):
        return [float(x) for x in provider.embed([text])[0]]

    def cos(u, v):
        dot = sum(x * y for x, y in zip(u, v))
        return dot / (math.sqrt(sum(x * x for x in u)) * math.sqrt(sum(y * y for y in v)))

    qv = [vec(q) for q in sorted(queries)]
    rows = []
    for n in notes:
        nv = vec(n.differentials.display)
        best = round(min(1.0, max(-1.0, max(cos(q, nv) for q in qv))), 12)
        if best >= tau:
            rows.append((best, n.differentials.display, n.department, n.organ_region))
    rows.sort(key=lambda r: (-r[0], r[1], r[2], r[3]))
    return rows[:top_k]


def logs_from_matrix(base, exp, ids=None):
    """Build run logs from ``base[t][i] = correct`` and ``exp[t][i] = (correct, retrieved)``."""
    from expmem.evaluation import EvalEntry, RunLog

    n = len(base[0])
    ids = ids or [f"case{i:04d}" for i in range(n)]
    b = [RunLog("baseline", t, [EvalEntry(ids[i], False, (), "x", bool(row[i])) for i in range(n)])
         for t, row in enumerate(base)]
    e = [RunLog("with-memory", t, [EvalEntry(ids[i], bool(row[i][1]), ("k",) if row[i][1] else (), "x",
                                             bool(row[i][0])) for i in range(n)])
         for t, row in enumerate(exp)]
    return b, e


def metrics_oracle(base, exp):
    """Reference counts straight from the definitions, using integer tallies only."""
    T, n = len(base), len(base[0])
    base_hits = exp_hits = 0
    retrieved_cases = retrieved_trials = retrieved_correct = 0
    beneficial = harmful = 0
    for i in range(n):
        b_col = [base[t][i] for t in range(T)]
        e_col = [exp[t][i][0] for t in range(T)]
        r_col = [exp[t][i][1] for t in range(T)]
        base_hits += sum(b_col)
        exp_hits += sum(e_col)
        if any(r_col):
            retrieved_cases += 1
        for t in range(T):
            if r_col[t]:
                retrieved_trials += 1
                retrieved_correct += e_col[t]
        if not any(b_col) and all(e_col):
            beneficial += 1
        if all(b_col) and not any(e_col):
            harmful += 1
    return {
        "cases": n,
        "total_trials": n * T,
        "baseline_correct": base_hits,
        "exp_correct": exp_hits,
        "retrieved_cases": retrieved_cases,
        "retrieved_trials": retrieved_trials,
        "retrieved_correct": retrieved_correct,
        "beneficial_cases": beneficial,
        "harmful_cases": harmful,
    }


def random_matrix(rng, n, T):
    base = [[rng.random() < 0.5 for _ in range(n)] for _ in range(T)]
    exp = [[(rng.random() < 0.6, rng.random() < 0.4) for _ in range(n)] for _ in range(T)]
    return base, exp
