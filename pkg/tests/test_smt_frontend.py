import json
from fractions import Fraction

import pytest

from src.errors import (
    BadNamedTag, CertNotSubsetError, ExclusionShapeError, MissingAnnotation, PatientFactError, SmtSyntaxError,
    UnbalancedParens, UndeclaredSymbol,
)
from src.formula import And, Cmp, CountAtLeast, Iff, Implies, NonCanonicalPredicate, Not, TriState, eval_formula, iter_atoms
from src.sexpr import SList, read_sexprs, to_text
from src.smt_frontend import (
    BOOL_ANNOTATION_KEYS, load_patient_facts, load_trial_program, parse_annotation, parse_named_tag,
    parse_patient_facts, parse_trial_program, render_named_tag, serialize_patient_facts, serialize_trial_program,
)
from src.temporal import TimeWindow
from tests.conftest import EXCLUSION, INCLUSION, PATIENTS

NOW_END = {"temporal_direction": "now", "temporal_magnitude": 0, "units": "hours"}


def _fact(name, value, kind="Bool", cert=None, poss=None, **extra):
    cert = cert or {"start_time": NOW_END, "end_time": NOW_END}
    poss = poss or {"start_time": NOW_END, "end_time": NOW_END}
    item = {"entity_variable_name": name, "type": kind, "extracted_value": value,
            "timewindow_this_patient_fact_certainly_holds": cert,
            "largest_timewindow_this_patient_fact_may_hold": poss}
    item.update(extra)
    return item


class TestSexpr:
    def test_comments_by_line(self):
        exprs, comments = read_sexprs('(a b) ;; uno\n(c "d e")\n')
        assert len(exprs) == 2
        assert comments == {1: ";; uno"}
        assert to_text(exprs[1]) == '(c "d e")'

    def test_positions(self):
        exprs, _ = read_sexprs("\n  (foo\n bar)")
        node = exprs[0]
        assert isinstance(node, SList)
        assert (node.line, node.col, node.end_line) == (2, 3, 3)

    @pytest.mark.parametrize("text", ["(a (b)", "a)", "("])
    def test_unbalanced(self, text):
        with pytest.raises(UnbalancedParens):
            read_sexprs(text)


class TestNamedTags:
    def test_component(self):
        tag = parse_named_tag("REQ3_COMPONENT1_PRESCREEN_NOTES_MUST_COMPLETELY_SUFFICE")
        assert (tag.req_idx, tag.kind, tag.component_idx) == (3, "Component", 1)
        assert tag.constraint_class == "PrescreenMustSuffice"

    def test_auxiliary(self):
        tag = parse_named_tag("REQ7_AUXILIARY1")
        assert tag.kind == "Auxiliary" and not tag.is_component

    def test_misspelled_class_is_accepted_and_kept(self):
        label = "REQ2_COMPONENT1_NOT_REQUIREMNET_OR_ALWAYS_SATISFIABLE_WITH_ACTION"
        tag = parse_named_tag(label)
        assert tag.constraint_class == "NotRequirementOrOneOffAction"
        assert render_named_tag(tag) == label

    @pytest.mark.parametrize("label", ["REQ1", "REQ1_COMPONENT1_SOMETHING_ELSE", "COMPONENT1_OTHER_REQUIREMENTS"])
    def test_bad(self, label):
        with pytest.raises(BadNamedTag):
            parse_named_tag(label)


class TestAnnotations:
    def test_full_object(self):
        obj = {k: "x" for k in BOOL_ANNOTATION_KEYS}
        text, annotation = parse_annotation(f';; "is pregnant" {json.dumps(obj)}', "Bool")
        assert text == "is pregnant"
        assert annotation == obj

    def test_wrong_keys_become_empty(self):
        text, annotation = parse_annotation(';; "age" {"meaning": "m"}', "Real")
        assert text == "age"
        assert annotation == {}

    def test_plain_text(self):
        assert parse_annotation(";; just words", "Bool") == ("just words", {})


PROGRAM = """
(declare-const patient_is_pregnant_now Bool) ;; "pregnant"
(declare-const patient_age_value_recorded_now_in_years Real) ;; "age"
(declare-const site_x_local_flag Bool) ;; "site specific"
(assert (! (not patient_is_pregnant_now) :named REQ1_COMPONENT1_PRESCREEN_NOTES_MUST_COMPLETELY_SUFFICE))
(assert (! (>= patient_age_value_recorded_now_in_years 18.0) :named REQ2_COMPONENT1_PRESCREEN_NOTES_MUST_COMPLETELY_SUFFICE))
(assert (! (>= (+ (ite patient_is_pregnant_now 1 0) (ite site_x_local_flag 1 0)) 1) :named REQ3_COMPONENT1_OTHER_REQUIREMENTS))
(check-sat)
"""


class TestTrialProgram:
    def test_small_program(self):
        p = parse_trial_program(PROGRAM, "T1", "main", "Inclusion")
        assert p.entity_id == "T1/main/inclusion"
        assert len(p.components) == 3
        assert isinstance(p.declaration("site_x_local_flag").predicate, NonCanonicalPredicate)
        assert isinstance(p.assertions[2].formula, CountAtLeast)
        age = next(iter_atoms(p.assertions[1].formula))
        assert age.constraint.target.value == Fraction(18)
        assert age.constraint.unit == "years"

    def test_missing_annotation(self):
        with pytest.raises(MissingAnnotation) as exc:
            parse_trial_program("(declare-const patient_is_pregnant_now Bool)\n")
        assert exc.value.line == 1

    def test_undeclared_symbol(self):
        text = "(assert (! nobody_declared_me :named REQ1_AUXILIARY1))"
        with pytest.raises(UndeclaredSymbol):
            parse_trial_program(text)

    def test_assert_without_name(self):
        text = '(declare-const patient_is_pregnant_now Bool) ;; "p"\n(assert patient_is_pregnant_now)'
        with pytest.raises(BadNamedTag):
            parse_trial_program(text)

    def test_unsupported_command(self):
        with pytest.raises(SmtSyntaxError):
            parse_trial_program("(push 1)")

    def test_distinct(self):
        text = """
(declare-const patient_is_pregnant_now Bool) ;; "pregnant"
(declare-const patient_is_taking_aspirin_now Bool) ;; "aspirin"
(declare-const patient_has_finding_of_sepsis_now Bool) ;; "sepsis"
(declare-const patient_age_value_recorded_now_in_years Real) ;; "age"
(assert (! (distinct patient_is_pregnant_now patient_is_taking_aspirin_now) :named REQ0_COMPONENT0_OTHER_REQUIREMENTS))
(assert (! (distinct patient_is_pregnant_now patient_is_taking_aspirin_now patient_has_finding_of_sepsis_now) :named REQ1_COMPONENT0_OTHER_REQUIREMENTS))
(assert (! (distinct patient_age_value_recorded_now_in_years 40.0) :named REQ2_COMPONENT0_OTHER_REQUIREMENTS))
"""
        p = parse_trial_program(text, "T1")
        two, three, numeric = (a.formula for a in p.assertions)
        assert isinstance(two, Not) and isinstance(two.child, Iff)
        assert isinstance(three, And) and len(three.children) == 3
        pregnant, aspirin, sepsis = (p.declaration(s).predicate for s in (
            "patient_is_pregnant_now", "patient_is_taking_aspirin_now", "patient_has_finding_of_sepsis_now"))
        assert eval_formula(two, {pregnant: True, aspirin: False}) == TriState.TRUE
        assert eval_formula(two, {pregnant: True, aspirin: True}) == TriState.FALSE
        # tres booleanos nunca son distintos dos a dos
        assert eval_formula(three, {pregnant: True, aspirin: False, sepsis: True}) == TriState.FALSE
        assert numeric.constraint.cmp == Cmp.NE
        again = parse_trial_program(serialize_trial_program(p), "T1")
        assert again.assertions == p.assertions

    def test_load_infers_ids_from_path(self):
        p = load_trial_program(INCLUSION)
        assert (p.trial_id, p.subcohort_id, p.side) == ("NCT00362869", "main", "Inclusion")
        assert len(p.auxiliaries) >= 1
        classes = {a.tag.constraint_class for a in p.components}
        assert "PrescreenMustSuffice" in classes

    @pytest.mark.parametrize("path", [INCLUSION, EXCLUSION])
    def test_corpus_serialization_is_stable(self, path):
        p = load_trial_program(path)
        text = serialize_trial_program(p)
        again = parse_trial_program(text, p.trial_id, p.subcohort_id, p.side, targets=p.targets)
        assert again.declarations == p.declarations
        assert again.assertions == p.assertions
        assert again.helpers == p.helpers
        assert serialize_trial_program(again) == text


EXCLUSION_DECLS = """
(declare-const patient_is_pregnant_now Bool) ;; "pregnant"
(declare-const patient_has_finding_of_sepsis_now Bool) ;; "sepsis"
(declare-const patient_is_taking_aspirin_now Bool) ;; "aspirin"
"""


def _exclusion(body, tag="REQ0_COMPONENT0_PRESCREEN_NOTES_MUST_COMPLETELY_SUFFICE"):
    return EXCLUSION_DECLS + f"(assert (! {body} :named {tag}))\n"


class TestExclusionShape:
    @pytest.mark.parametrize("body", [
        "patient_is_pregnant_now",
        "(or patient_is_pregnant_now patient_has_finding_of_sepsis_now)",
        "(and (not patient_is_pregnant_now) (not patient_is_taking_aspirin_now))",
    ])
    def test_rejects_unguarded_component(self, body):
        with pytest.raises(ExclusionShapeError) as exc:
            parse_trial_program(_exclusion(body), "T1", "main", "Exclusion")
        assert exc.value.line == 5

    def test_same_component_is_fine_on_inclusion(self):
        p = parse_trial_program(_exclusion("patient_is_pregnant_now"), "T1", "main", "Inclusion")
        assert len(p.components) == 1

    @pytest.mark.parametrize("body, root", [
        ("(not patient_is_pregnant_now)", Not),
        ("(not (or patient_is_pregnant_now patient_has_finding_of_sepsis_now))", Not),
        ("(=> patient_has_finding_of_sepsis_now (not patient_is_taking_aspirin_now))", Implies),
        ("(=> patient_is_pregnant_now patient_has_finding_of_sepsis_now (not patient_is_taking_aspirin_now))", Implies),
    ])
    def test_accepts_negated_or_guarded_component(self, body, root):
        p = parse_trial_program(_exclusion(body), "T1", "main", "Exclusion")
        assert isinstance(p.components[0].formula, root)

    def test_auxiliary_is_not_checked(self):
        text = _exclusion("(= patient_is_pregnant_now patient_has_finding_of_sepsis_now)", "REQ0_AUXILIARY0")
        p = parse_trial_program(text, "T1", "main", "Exclusion")
        assert len(p.auxiliaries) == 1 and not p.components

    def test_corpus_exclusion_program_loads(self):
        p = load_trial_program(EXCLUSION)
        assert p.side == "Exclusion"
        assert all(isinstance(a.formula, (Not, Implies)) for a in p.components)


class TestPatientFacts:
    def test_fixture_patient(self):
        pid, facts = load_patient_facts(PATIENTS / "P004.json")
        assert pid == "P004"
        crohn = next(f for f in facts if f.variable.concept == "crohn_s_disease")
        assert crohn.labels == ("ChiefComplaint",)
        assert crohn.cert_window == TimeWindow(-400 * 24, -200 * 24)
        age = next(f for f in facts if f.is_numeric)
        assert age.value == Fraction(33)

    def test_null_and_noncanonical_are_dropped(self):
        raw = [
            _fact("patient_is_pregnant_now", None),
            _fact("some_free_text_thing", True),
            _fact("patient_is_taking_aspirin_now", True),
        ]
        facts = parse_patient_facts(json.dumps(raw))
        assert [f.name for f in facts] == ["patient_is_taking_aspirin_now"]

    def test_cert_outside_poss(self):
        past = {"temporal_direction": "past", "temporal_magnitude": 10, "units": "days"}
        raw = [_fact("patient_is_taking_aspirin_now", True,
                     cert={"start_time": past, "end_time": NOW_END},
                     poss={"start_time": NOW_END, "end_time": NOW_END})]
        with pytest.raises(CertNotSubsetError):
            parse_patient_facts(json.dumps(raw))

    def test_type_mismatch(self):
        with pytest.raises(PatientFactError):
            parse_patient_facts(json.dumps([_fact("patient_is_taking_aspirin_now", 3, kind="Bool")]))
        with pytest.raises(PatientFactError):
            parse_patient_facts(json.dumps([_fact("patient_is_taking_aspirin_now", True, patient_fact_relations=["Favorite"])]))

    def test_invalid_json(self):
        with pytest.raises(PatientFactError):
            parse_patient_facts("[{")

    def test_serialization_is_stable(self):
        _, facts = load_patient_facts(PATIENTS / "P004.json")
        text = serialize_patient_facts(facts)
        assert parse_patient_facts(text, "P004") == facts
