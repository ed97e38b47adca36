import random

import pytest

from src.errors import MalformedTimeframe, UnrecognizedStem
from src.naming import (
    OUTCOMES, SEXES, TEMPLATES, TimeframeToken, VariableName, for_predicate, parse_timeframe, parse_variable_name,
    render_variable_name, with_concept,
)
from tests.conftest import EXCLUSION, INCLUSION, read


class TestParseVariableName:
    def test_finding_with_qualifier(self):
        v = parse_variable_name("patient_has_finding_of_heart_disease_now@@clinically_significant")
        assert v.relation == "HasFindingOf"
        assert v.concept == "heart_disease"
        assert v.timeframe == TimeframeToken("Now")
        assert v.free_qualifiers == ("clinically_significant",)
        assert v.stem == "patient_has_finding_of_heart_disease_now"

    def test_numeric(self):
        v = parse_variable_name("patient_age_value_recorded_now_in_years")
        assert v.relation == "ValueRecorded"
        assert v.concept == "age"
        assert v.unit == "years"
        assert v.unit_style == "in"
        assert v.is_numeric

    def test_outcome(self):
        v = parse_variable_name("patient_has_undergone_urinalysis_now_outcome_is_normal")
        assert (v.relation, v.concept, v.outcome) == ("HasUndergone", "urinalysis", "normal")

    def test_fixed_concept(self):
        v = parse_variable_name("patient_is_pregnant_now")
        assert (v.relation, v.concept) == ("IsPregnant", "pregnancy")

    def test_without_timeframe(self):
        v = parse_variable_name("patient_sex_is_female")
        assert (v.relation, v.concept, v.timeframe) == ("SexIs", "female", None)

    def test_parametrized_timeframe(self):
        v = parse_variable_name("patient_has_taken_antacid_inthepast7days")
        assert v.timeframe == TimeframeToken("InThePastN", 7, "days")

    @pytest.mark.parametrize("name", [
        "patient_has_history_of_suicide_attempt",
        "household_contact_age_value_recorded_now_in_years",
        "patient_has_finding_of_x_now@@Bad-Qualifier",
        "",
    ])
    def test_unrecognized(self, name):
        with pytest.raises(UnrecognizedStem):
            parse_variable_name(name)

    def test_malformed_timeframe(self):
        with pytest.raises(MalformedTimeframe):
            parse_timeframe("inthepast0days")


class TestRender:
    def test_corpus_names_render_back(self):
        names = set()
        for path in (INCLUSION, EXCLUSION):
            for line in read(path).splitlines():
                if line.startswith("(declare-const"):
                    names.add(line.split()[1])
        parsed = 0
        for name in sorted(names):
            try:
                v = parse_variable_name(name)
            except UnrecognizedStem:
                continue
            assert render_variable_name(v) == name
            parsed += 1
        assert parsed > len(names) // 2

    def test_for_predicate(self):
        v = for_predicate("HasDiagnosisOf", "asthma", parse_timeframe("inthehistory"))
        assert v.render() == "patient_has_diagnosis_of_asthma_inthehistory"

    def test_for_predicate_numeric_needs_unit(self):
        with pytest.raises(UnrecognizedStem):
            for_predicate("ValueRecorded", "age")

    def test_with_concept_keeps_fixed(self):
        v = parse_variable_name("patient_is_pregnant_now")
        assert with_concept(v, "anything") == v
        w = with_concept(parse_variable_name("patient_has_finding_of_sepsis_now"), "infection")
        assert w.render() == "patient_has_finding_of_infection_now"


WORDS = ("heart", "renal", "disease", "crohn", "b12", "aspirin", "hemoglobin", "type2", "chronic", "x")
UNITS = ("years", "mg", "mmol_per_l", "percent", "kg")
QUALIFIERS = ("clinically_significant", "severe", "specific_to_dispersin", "temporalcontext_within7days_before_x")
TRICKY = WORDS + ("now", "in", "withunit", "is", "normal", "inthepast", "outcome", "value", "recorded", "of", "male")


def random_timeframe(rng):
    form = rng.choice(["Now", "InTheHistory", "InTheFuture", "InThePastN", "InTheFutureN", "ForADurationOfN", None])
    if form is None or not form.endswith("N"):
        return TimeframeToken(form) if form else None
    return TimeframeToken(form, rng.randint(1, 99), rng.choice(["minutes", "hours", "days", "weeks", "months", "years"]))


def random_variable(rng):
    t = rng.choice(TEMPLATES)
    if t.fixed_concept:
        concept = t.fixed_concept
    elif t.key == "sex":
        concept = rng.choice(SEXES)
    else:
        concept = "_".join(rng.choice(WORDS) for _ in range(rng.randint(1, 3)))
    numeric = t.key == "numeric"
    return VariableName(
        template=t.key,
        relation=t.relation,
        concept=concept,
        timeframe=random_timeframe(rng),
        outcome=rng.choice(OUTCOMES) if "{o}" in t.fmt else None,
        unit=rng.choice(UNITS) if numeric else None,
        unit_style=rng.choice(["withunit", "in"]) if numeric else None,
        free_qualifiers=tuple(rng.sample(QUALIFIERS, rng.randint(0, 2))),
    )


class TestRandomNames:
    def test_parse_inverts_render(self):
        rng = random.Random(11)
        for _ in range(10_000):
            v = random_variable(rng)
            assert parse_variable_name(render_variable_name(v)) == v, v

    def test_render_inverts_parse(self):
        # nombres armados con tokens ambiguos: si se reconocen, se reconstruyen idénticos
        rng = random.Random(12)
        recognized = 0
        for _ in range(10_000):
            v = random_variable(rng)
            tokens = render_variable_name(v).split("_")
            i = rng.randrange(len(tokens))
            tokens[i] = rng.choice(TRICKY)
            name = "_".join(tokens)
            try:
                parsed = parse_variable_name(name)
            except (UnrecognizedStem, MalformedTimeframe):
                continue
            recognized += 1
            assert render_variable_name(parsed) == name
        assert recognized > 500
