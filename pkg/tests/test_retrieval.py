from dataclasses import replace
from fractions import Fraction

import pytest

from src.closure import load_relation_rules, run_closure
from src.db import build_store, dump_all
from src.errors import RetrievalError, UnitMismatch, UnknownEntity, UnknownObjective
from src.formula import AtomicConstraint, Cmp, Interval, Quantity, predicate_from_variable
from src.naming import parse_variable_name
from src.oracle import generate_world, world_gates
from src.projection import Literal, load_salience_policy, project_patient, project_trial
from src.retrieval import (
    admissible_pairs, atoms_compatible, explain, get_objective, render_explanation, retrieve, retrieve_memory,
)
from src.smt_frontend import load_patient_facts, load_trial_program
from src.temporal import HISTORY, NOW, TimeWindow
from tests.conftest import DATA, EXCLUSION, INCLUSION, PATIENTS

OBJECTIVES = ("treat-chief", "treat-any", "relevant-to-any")


def pairs(results):
    return {(r.trial_id, r.patient_id) for r in results}


@pytest.fixture(scope="module")
def store(tmp_path_factory, corpus_ontology):
    policy = load_salience_policy(DATA / "policy_empty.json", corpus_ontology)
    rules = load_relation_rules()
    gates = [project_trial(load_trial_program(p), corpus_ontology, policy) for p in (INCLUSION, EXCLUSION)]
    for path in sorted(PATIENTS.glob("*.json")):
        pid, facts = load_patient_facts(path)
        gates.append(project_patient(run_closure(facts, corpus_ontology, rules).facts, pid))
    path = tmp_path_factory.mktemp("store") / "satir.db"
    h = build_store(gates, path)
    yield h
    h.close()


class TestRetrieve:
    def test_fixture_patients(self, store, corpus_ontology):
        obj = get_objective("treat-chief", o=corpus_ontology)
        results = retrieve(store, corpus_ontology, obj)
        assert pairs(results) == {("NCT00362869", "P001"), ("NCT00362869", "P004")}
        assert all(r.supported_clause_count == r.relevant_clause_count == 5 for r in results)

    def test_knockout_removes_patient(self, store, corpus_ontology):
        obj = get_objective("treat-chief", o=corpus_ontology, enforce_knockouts=True)
        assert pairs(retrieve(store, corpus_ontology, obj)) == {("NCT00362869", "P001")}

    @pytest.mark.parametrize("name", OBJECTIVES)
    @pytest.mark.parametrize("knockouts", [False, True])
    def test_engines_agree(self, store, corpus_ontology, name, knockouts):
        obj = get_objective(name, o=corpus_ontology, enforce_knockouts=knockouts)
        sql = retrieve(store, corpus_ontology, obj, engine="sql")
        memory = retrieve(store, corpus_ontology, obj, engine="memory")
        assert [r.to_dict() for r in sql] == [r.to_dict() for r in memory]

    def test_objectives_are_nested(self, store, corpus_ontology):
        found = [pairs(retrieve(store, corpus_ontology, get_objective(n, o=corpus_ontology))) for n in OBJECTIVES]
        assert found[0] <= found[1] <= found[2]

    def test_patient_filter_and_workers(self, store, corpus_ontology):
        obj = get_objective("treat-any", o=corpus_ontology)
        single = retrieve(store, corpus_ontology, obj, patients=["P004", "P002"])
        assert pairs(single) == {("NCT00362869", "P004")}
        threaded = retrieve(store, corpus_ontology, obj, patients=["P004", "P002", "P001"], workers=3)
        assert [r.patient_id for r in threaded] == ["P001", "P004"]

    @pytest.mark.parametrize("name", OBJECTIVES)
    def test_workers_without_patient_filter(self, store, corpus_ontology, name):
        obj = get_objective(name, o=corpus_ontology)
        single = retrieve(store, corpus_ontology, obj)
        threaded = retrieve(store, corpus_ontology, obj, workers=4)
        assert [r.to_dict() for r in threaded] == [r.to_dict() for r in single]

    def test_memory_engine_from_gates(self, store, corpus_ontology):
        obj = get_objective("treat-chief", o=corpus_ontology)
        results = retrieve_memory(dump_all(store, "Trial"), dump_all(store, "Patient"), corpus_ontology, obj)
        assert pairs(results) == {("NCT00362869", "P001"), ("NCT00362869", "P004")}

    def test_unknown_engine(self, store, corpus_ontology):
        with pytest.raises(RetrievalError):
            retrieve(store, corpus_ontology, get_objective("treat-chief"), engine="gpu")

    @pytest.mark.parametrize("name,objectives", [
        ("cure-everything", None),
        ("mine", {"custom": {"mine": [["Treats", "Nobody"]]}}),
        ("mine", {"custom": {"mine": [["Treats"]]}}),
    ])
    def test_unknown_objective(self, small_ontology, name, objectives):
        with pytest.raises(UnknownObjective):
            get_objective(name, objectives, small_ontology)

    def test_custom_objective(self, corpus_ontology):
        obj = get_objective("chief-only", {"custom": {"chief-only": [["Treats", "ChiefComplaint"]]}}, corpus_ontology)
        assert obj.intent_map == frozenset({("Treats", "ChiefComplaint")})


class TestExplain:
    def test_filtered(self, store, corpus_ontology):
        obj = get_objective("treat-chief", o=corpus_ontology)
        report = explain(store, corpus_ontology, "NCT00362869", "P002", obj)
        assert report["status"] == "filtered"
        unsupported = [c for c in report["clauses"] if c["status"] == "unsupported"]
        assert [c["origin"] for c in unsupported] == ["REQ3_COMPONENT1"]
        assert report["first_unsupported"] == unsupported[0]["clause"]

    def test_retrieved(self, store, corpus_ontology):
        obj = get_objective("treat-chief", o=corpus_ontology)
        report = explain(store, corpus_ontology, "NCT00362869", "P001", obj)
        assert report["status"] == "retrieved"
        assert all(c["supported_by"] for c in report["clauses"])
        assert render_explanation(report).startswith("✅")

    def test_knocked_out(self, store, corpus_ontology):
        obj = get_objective("treat-chief", o=corpus_ontology, enforce_knockouts=True)
        report = explain(store, corpus_ontology, "NCT00362869", "P004", obj)
        assert report["status"] == "knocked-out"
        assert any("chronic_digestive_system_disorder" in k["trial"] for k in report["knockouts"])

    def test_unknown(self, store, corpus_ontology):
        obj = get_objective("treat-chief")
        with pytest.raises(UnknownEntity):
            explain(store, corpus_ontology, "NCT00000000", "P001", obj)
        with pytest.raises(UnknownEntity):
            explain(store, corpus_ontology, "NCT00362869", "P001", obj, subcohort="nope")


def with_donor_facts(patient_gates):
    """Cada paciente recibe además los hechos del siguiente (en orden de id)"""
    ordered = sorted(patient_gates, key=lambda g: g.entity_id)
    return [replace(g, clauses=g.clauses + ordered[(i + 1) % len(ordered)].clauses) for i, g in enumerate(ordered)]


@pytest.mark.parametrize("engine", ["sql", "memory"])
class TestMonotoneInPatientFacts:
    def test_donor_facts_recover_filtered_patient(self, store, corpus_ontology, tmp_path, engine):
        obj = get_objective("treat-chief", o=corpus_ontology)
        patients = {g.entity_id: g for g in dump_all(store, "Patient")}
        p002 = replace(patients["P002"], clauses=patients["P002"].clauses + patients["P001"].clauses)
        with build_store(dump_all(store, "Trial") + [p002], tmp_path / "p002.db") as h:
            assert pairs(retrieve(h, corpus_ontology, obj, engine=engine)) == {("NCT00362869", "P002")}

    @pytest.mark.parametrize("seed", range(6))
    def test_more_facts_never_lose_a_trial(self, tmp_path, engine, seed):
        world = generate_world(seed)
        gates = world_gates(world)
        trials = [g for g in gates if g.entity_kind == "Trial"]
        patients = [g for g in gates if g.entity_kind == "Patient"]
        for name in OBJECTIVES:
            obj = get_objective(name)
            found = []
            for i, patient_gates in enumerate((patients, with_donor_facts(patients))):
                with build_store(trials + patient_gates, tmp_path / f"{name}-{i}.db") as h:
                    found.append(pairs(retrieve(h, world.ontology, obj, engine=engine)))
            assert found[0] <= found[1]


def lit(name, target=True, window=None, cert=None, positive=True, cmp=Cmp.EQ):
    p = predicate_from_variable(parse_variable_name(name))
    return Literal(AtomicConstraint(p, cmp, target), positive, window if window is not None else p.window, cert)


class TestAtomsCompatible:
    def test_relation_subsumption(self, small_ontology):
        obj = get_objective("treat-chief")
        trial = lit("patient_has_finding_of_sepsis_now")
        patient = lit("patient_has_diagnosis_of_sepsis_now", window=NOW, cert=NOW)
        assert atoms_compatible(trial, patient, small_ontology, obj)
        assert not atoms_compatible(lit("patient_has_diagnosis_of_sepsis_now"),
                                    lit("patient_has_finding_of_sepsis_now", window=NOW), small_ontology, obj)

    def test_concept_fallback(self, small_ontology):
        trial = lit("patient_has_finding_of_infection_now")
        patient = lit("patient_has_finding_of_pneumonia_now", window=NOW)
        assert not atoms_compatible(trial, patient, small_ontology, get_objective("treat-chief"))
        fallback = get_objective("treat-chief", subsumption_fallback=True)
        assert atoms_compatible(trial, patient, small_ontology, fallback)
        assert not atoms_compatible(patient, trial, small_ontology, fallback)

    def test_time_window(self, small_ontology):
        obj = get_objective("treat-chief")
        trial = lit("patient_has_finding_of_sepsis_inthepast7days")
        recent = lit("patient_has_finding_of_sepsis_now", window=TimeWindow(-48, 0))
        old = lit("patient_has_finding_of_sepsis_now", window=TimeWindow(-9000, -8000))
        # el timeframe del nombre no cuenta: sólo calificadores Outcome y Free
        assert atoms_compatible(trial, recent, small_ontology, obj)
        assert not atoms_compatible(trial, old, small_ontology, obj)

    def test_knockout_needs_certain_containment(self, small_ontology):
        obj = get_objective("treat-chief")
        trial = lit("patient_has_finding_of_sepsis_inthehistory", positive=False)
        certain = lit("patient_has_finding_of_sepsis_inthehistory", window=HISTORY, cert=TimeWindow(-500, -100))
        uncertain = lit("patient_has_finding_of_sepsis_inthehistory", window=HISTORY, cert=None)
        future = lit("patient_has_finding_of_sepsis_inthehistory", window=HISTORY, cert=TimeWindow(-10, 10))
        assert atoms_compatible(trial, certain, small_ontology, obj, knockout=True)
        assert not atoms_compatible(trial, uncertain, small_ontology, obj, knockout=True)
        assert not atoms_compatible(trial, future, small_ontology, obj, knockout=True)

    def test_qualifiers_must_be_present(self, small_ontology):
        obj = get_objective("treat-chief")
        trial = lit("patient_has_finding_of_sepsis_now@@severe")
        assert not atoms_compatible(trial, lit("patient_has_finding_of_sepsis_now", window=NOW), small_ontology, obj)
        assert atoms_compatible(trial, lit("patient_has_finding_of_sepsis_now@@severe", window=NOW),
                                small_ontology, obj)

    def test_numeric_values(self, small_ontology):
        obj = get_objective("treat-chief")
        name = "patient_age_value_recorded_now_withunit_years"
        trial = lit(name, Quantity(Fraction(18), "years"), cmp=Cmp.GE)
        adult = lit(name, Interval.point(Fraction(30), "years"), window=NOW)
        child = lit(name, Interval.point(Fraction(12), "years"), window=NOW)
        assert atoms_compatible(trial, adult, small_ontology, obj)
        assert not atoms_compatible(trial, child, small_ontology, obj)

        months = lit("patient_age_value_recorded_now_withunit_months", Interval.point(Fraction(30), "months"),
                     window=NOW)
        with pytest.raises(UnitMismatch):
            atoms_compatible(trial, months, small_ontology, obj)

    def test_intent_pairs_follow_objective(self, small_ontology):
        chief = admissible_pairs(small_ontology, get_objective("treat-chief"))
        anything = admissible_pairs(small_ontology, get_objective("relevant-to-any"))
        assert ("Treats", "ChiefComplaint") in chief
        assert ("Treats", "AnyImportantComplaint") not in chief
        assert ("Treats", "AnyImportantComplaint") in anything
        assert not any(t == "NotClinicallyRelevant" for t, _ in anything)
