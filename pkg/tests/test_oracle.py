from functools import partial

import pytest

from src.closure import load_relation_rules
from src.errors import TooLarge
from src.oracle import (
    WorldParams, add_unsatisfiable_clause, engine_match, generate_world, naive_retrieve, oracle_match,
    precision_report, timed, verify_full_recall, world_gates,
)
from src.retrieval import get_objective, retrieve_memory

OBJECTIVES = ("treat-chief", "treat-any", "relevant-to-any")


def objective(name, knockouts=False):
    return get_objective(name, enforce_knockouts=knockouts)


class TestWorlds:
    def test_deterministic(self):
        a, b = generate_world(7), generate_world(7)
        assert a.trials == b.trials
        assert a.patients == b.patients
        assert a.policy == b.policy
        assert generate_world(8).trials != a.trials

    def test_shape(self):
        world = generate_world(3, WorldParams(n_trials=4, n_patients=3))
        assert len(world.trials) == 8
        assert sorted(world.patients) == ["P000", "P001", "P002"]
        assert all(len(programs) == 2 for programs in world.trial_units().values())
        assert all(p.targets for p in world.trials if p.side == "Inclusion")

    @pytest.mark.parametrize("kwargs", [{"depth": 5}, {"n_concepts": 0}, {"n_trials": -1}])
    def test_invalid_params(self, kwargs):
        with pytest.raises(ValueError):
            WorldParams(**kwargs)

    def test_lossless_zeroes_rates(self):
        params = WorldParams.lossless(n_trials=3)
        assert params.n_trials == 3
        assert params.noncanonical_rate == params.negation_rate == params.missingness_rate == 0.0

    def test_empty_world(self):
        world = generate_world(1, WorldParams(n_trials=0))
        obj = objective("relevant-to-any")
        assert oracle_match(world, obj) == set()
        report = verify_full_recall(world, obj)
        assert report["missed"] == [] and report["recall"] == 1.0

    def test_budget(self):
        with pytest.raises(TooLarge):
            oracle_match(generate_world(2), objective("treat-chief"), budget=1)


class TestRecall:
    @pytest.mark.parametrize("name", OBJECTIVES)
    @pytest.mark.parametrize("knockouts", [False, True])
    def test_no_oracle_pair_is_missed(self, name, knockouts):
        obj = objective(name, knockouts)
        for seed in range(15):
            report = verify_full_recall(generate_world(seed), obj)
            assert report["missed"] == [], report

    def test_with_relation_rules(self):
        rules = load_relation_rules()
        for seed in range(10):
            world = generate_world(seed, rules=rules)
            assert verify_full_recall(world, objective("relevant-to-any", True))["missed"] == []

    def test_memory_engine(self):
        for seed in range(10):
            report = verify_full_recall(generate_world(seed), objective("treat-any", True), engine="memory")
            assert report["missed"] == []

    @pytest.mark.slow
    def test_many_seeds(self):
        rules = load_relation_rules()
        params = WorldParams(n_concepts=30, n_trials=20, n_patients=10, depth=4)
        for seed in range(1000):
            world = generate_world(seed, params, rules=rules)
            for name in OBJECTIVES:
                for knockouts in (False, True):
                    assert verify_full_recall(world, objective(name, knockouts))["missed"] == []


class TestLossless:
    @pytest.mark.parametrize("name", OBJECTIVES)
    @pytest.mark.parametrize("knockouts", [False, True])
    def test_engine_equals_oracle(self, name, knockouts):
        obj = objective(name, knockouts)
        for seed in range(10):
            world = generate_world(seed, WorldParams.lossless())
            assert engine_match(world, obj) == oracle_match(world, obj)

    def test_precision_is_exact(self):
        report = precision_report(generate_world(4, WorldParams.lossless()), objective("relevant-to-any"))
        assert report["precision"] == 1.0 and report["extra"] == 0

    def test_strengthened_gate_is_caught(self):
        obj = objective("relevant-to-any")
        for seed in range(50):
            world = generate_world(seed, WorldParams.lossless())
            expected = sorted(oracle_match(world, obj))
            if expected:
                break
        else:
            pytest.fail("ningún mundo con pares")
        trial_id, subcohort, _ = expected[0]
        mutate = partial(add_unsatisfiable_clause, owner=f"{trial_id}/{subcohort}/inclusion")
        report = verify_full_recall(world, obj, mutate=mutate)
        assert [trial_id, subcohort, expected[0][2]] in report["missed"]
        assert report["recall"] < 1.0


def test_naive_retrieve_matches_memory_engine():
    obj = objective("treat-any", True)
    for seed in range(5):
        world = generate_world(seed)
        gates = world_gates(world)
        trials = [g for g in gates if g.entity_kind == "Trial"]
        patients = [g for g in gates if g.entity_kind == "Patient"]
        fast, _ = timed(retrieve_memory, trials, patients, world.ontology, obj)
        slow, seconds = timed(naive_retrieve, trials, patients, world.ontology, obj)
        assert [r.key for r in fast] == [r.key for r in slow]
        assert seconds >= 0
