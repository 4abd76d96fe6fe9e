import io
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from expmem.core import (
    CaseRecord,
    DiagnosisLabel,
    DuplicateId,
    EqualLabels,
    ParseError,
    Taxonomy,
    TaxonomyError,
    canonical_pair_key,
    default_taxonomy,
    grade,
    normalize,
    parse_case_corpus,
    parse_rule,
    serialize_case_corpus,
    validate_note,
)
from helpers import make_note
from strategies import corpora, label_pairs


def test_pair_key_display_and_symmetry():
    key = canonical_pair_key("Lymphoma", "Metastasis")
    assert key.display == "Lymphoma vs. Metastasis"
    assert canonical_pair_key("Metastasis", "Lymphoma") == key
    assert canonical_pair_key("Metastasis", "Lymphoma").display == key.display


def test_pair_key_rejects_equal_labels():
    with pytest.raises(EqualLabels):
        canonical_pair_key("  lymphoma ", "LYMPHOMA")


@given(label_pairs())
def test_pair_key_symmetric_property(pair):
    a, b = pair
    assert canonical_pair_key(a, b) == canonical_pair_key(b, a)
    assert canonical_pair_key(a, b).display == canonical_pair_key(b, a).display


@given(st.text())
def test_normalize_idempotent(s):
    assert normalize(normalize(s)) == normalize(s)


def test_label_equality_is_normalized():
    assert DiagnosisLabel("Dandy  Walker\tmalformation") == DiagnosisLabel("dandy walker malformation")
    assert DiagnosisLabel("  x ").text == "x"
    with pytest.raises(ValueError):
        DiagnosisLabel("   ")
    assert grade("MENINGIOMA ", DiagnosisLabel("meningioma"))
    assert not grade(None, "meningioma")


def test_default_taxonomy_shape():
    tax = default_taxonomy()
    assert len(tax.departments) == 11
    assert tax.organ_count == 118
    assert all(tax.organs[d][-1] == "others" for d in tax.departments)


def test_taxonomy_rejects_missing_others():
    with pytest.raises(TaxonomyError):
        Taxonomy(("A",), {"A": ("liver",)})
    with pytest.raises(TaxonomyError):
        Taxonomy(("A", "A"), {"A": ("others",)})


def test_taxonomy_resolution_is_case_insensitive(taxonomy):
    assert taxonomy.resolve_department("neuroradiology") == "Neuroradiology"
    assert taxonomy.resolve_organ("Neuroradiology", "Brain  Parenchyma") == "brain parenchyma"
    assert taxonomy.resolve_department("Cardiology") is None


def test_valid_note_passes(taxonomy):
    assert validate_note(make_note(), taxonomy) == []


def test_unknown_department(taxonomy):
    violations = validate_note(make_note(department="Cardiology"), taxonomy)
    assert any("unknown department" in v for v in violations)


def test_missing_discriminator_side(taxonomy):
    note = make_note(discriminators={"Lymphoma": "x"})
    assert "discriminators must cover both labels" in validate_note(note, taxonomy)


def test_rules_must_target_both_labels(taxonomy):
    note = make_note(decision_rule=("If restricted diffusion → favor Lymphoma",))
    assert "decision_rule must target both labels" in validate_note(note, taxonomy)


def test_rule_grammar():
    assert parse_rule("If X → favor A") == ("X", "favor", "A")
    assert parse_rule("if x -> Exclude B")[1] == "exclude"
    assert parse_rule("favor A when X") is None


def test_discriminator_keys_follow_pair_spelling():
    note = make_note(discriminators={"LYMPHOMA": "a", "metastasis": "b"})
    assert list(note.discriminators) == ["Lymphoma", "Metastasis"]


def test_parse_three_lines_in_order():
    lines = [json.dumps({"id": f"c{i}", "ground_truth": "X"}) for i in range(3)]
    cases = parse_case_corpus(lines)
    assert [c.id for c in cases] == ["c0", "c1", "c2"]
    assert cases[0] == CaseRecord(id="c0", ground_truth=DiagnosisLabel("X"))


def test_parse_missing_ground_truth_reports_line():
    lines = [json.dumps({"id": "c1", "ground_truth": "X"}), json.dumps({"id": "c2"})]
    with pytest.raises(ParseError) as info:
        parse_case_corpus(lines)
    assert info.value.line == 2


def test_parse_duplicate_id():
    lines = [json.dumps({"id": "c1", "ground_truth": "X"})] * 2
    with pytest.raises(DuplicateId) as info:
        parse_case_corpus(lines)
    assert info.value.case_id == "c1"


def test_parse_ignores_unknown_fields_and_checks_types():
    rec = {"id": "c1", "ground_truth": "X", "extra": 1, "image_refs": ["a.png"]}
    assert parse_case_corpus([json.dumps(rec)])[0].image_refs == ("a.png",)
    with pytest.raises(ParseError):
        parse_case_corpus([json.dumps({"id": "c1", "ground_truth": "X", "image_refs": "a.png"})])
    with pytest.raises(ParseError):
        parse_case_corpus(["{not json"])


@given(corpora())
def test_corpus_round_trip(corpus):
    buf = io.StringIO()
    serialize_case_corpus(corpus, buf)
    buf.seek(0)
    assert parse_case_corpus(buf) == corpus
