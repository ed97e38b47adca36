"""
Oráculo de fuerza bruta y generador de mundos sintéticos.

El oráculo evalúa las fórmulas originales con lógica de Kleene contra los
hechos (clausurados) de cada paciente, sin pasar por la proyección ni el
store. verify_full_recall compara su conjunto de pares con el del motor:
todo par del oráculo debe estar en el del motor.
"""
import json
import logging
import random
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from src.closure import ClosureConfig, RelationRule, derive_once, run_closure
from src.db import build_store, qualifier_tokens
from src.errors import TooLarge
from src.formula import Atom, AtomicConstraint, CanonicalPredicate, Cmp, TriState, eval_formula, iter_atoms
from src.naming import PATIENT_FACT_RELATIONS
from src.ontology import Ontology, ontology_digest, parse_ontology
from src.projection import (
    GateClause, GateCNF, Literal, SaliencePolicy, _atom_name, _literal_for, parse_salience_policy,
    project_patient, project_trial,
)
from src.retrieval import (
    MatchResult, ObjectiveConfig, admissible_pairs, atoms_compatible, context_compatible,
    retrieve, value_compatible,
)
from src.smt_frontend import (
    CLASS_LABELS, PatientFactRecord, TrialProgram, TrialTarget, parse_patient_facts,
    parse_trial_program, serialize_patient_facts, serialize_trial_program,
)
from src.temporal import SENTINEL, endpoint_dict, inclusion_time_match


logger = logging.getLogger(__name__)

Pair = Tuple[str, str, str]   # (trial_id, subcohort, patient_id)

DEFAULT_ATOM_BUDGET = 2_000_000


# === MUNDOS SINTÉTICOS ===

@dataclass(frozen=True)
class WorldParams:
    n_concepts: int = 20
    n_trials: int = 10
    n_patients: int = 5
    depth: int = 3
    missingness_rate: float = 0.3
    noncanonical_rate: float = 0.2
    deferred_rate: float = 0.3
    negation_rate: float = 0.2
    count_rate: float = 0.1
    bridge_rate: float = 0.1
    specificity_rate: float = 0.2
    facts_per_patient: int = 6

    def __post_init__(self):
        for name in ("n_concepts", "depth", "facts_per_patient"):
            if getattr(self, name) <= 0:
                raise ValueError(f"WorldParams.{name} debe ser positivo")
        if self.n_trials < 0 or self.n_patients < 0:
            raise ValueError("n_trials y n_patients no pueden ser negativos")
        if self.depth > 4:
            raise ValueError("depth ≤ 4")

    @classmethod
    def lossless(cls, **overrides) -> "WorldParams":
        """Sólo átomos canónicos positivos en componentes PrescreenMustSuffice: proyección sin pérdida"""
        base = dict(missingness_rate=0.0, noncanonical_rate=0.0, deferred_rate=0.0, negation_rate=0.0,
                    count_rate=0.0, bridge_rate=0.0, specificity_rate=0.0)
        base.update(overrides)
        return cls(**base)


@dataclass
class SyntheticWorld:
    ontology: Ontology
    trials: List[TrialProgram]
    patients: Dict[str, List[PatientFactRecord]]
    policy: SaliencePolicy
    seed: int
    rules: Tuple[RelationRule, ...] = ()
    closure: ClosureConfig = field(default_factory=ClosureConfig)
    _closed: Dict[str, List[PatientFactRecord]] = field(default_factory=dict, repr=False)

    def closed_facts(self, patient_id: str) -> List[PatientFactRecord]:
        if patient_id not in self._closed:
            self._closed[patient_id] = run_closure(self.patients[patient_id], self.ontology,
                                                   self.rules, self.closure).facts
        return self._closed[patient_id]

    def trial_units(self) -> Dict[Tuple[str, str], List[TrialProgram]]:
        units: Dict[Tuple[str, str], List[TrialProgram]] = {}
        for p in self.trials:
            units.setdefault((p.trial_id, p.subcohort_id), []).append(p)
        return dict(sorted(units.items()))


BOOL_TEMPLATES = (
    "patient_has_finding_of_{e}_{t}",
    "patient_has_diagnosis_of_{e}_{t}",
    "patient_has_suspicion_of_{e}_{t}",
    "patient_is_taking_{e}_{t}",
    "patient_has_undergone_{e}_{t}",
)
TIMEFRAMES = ("now", "inthehistory", "inthepast6months", "inthefuture")
AGE = "patient_age_value_recorded_now_withunit_years"
# (posible, cierta) en horas
FACT_WINDOWS = (
    ((0, 0), (0, 0)),
    ((-SENTINEL, 0), (-SENTINEL, 0)),
    ((-4000, 0), (-100, -100)),
    ((-20000, -9000), (-12000, -10000)),
    ((0, 2000), (0, 2000)),
)
PATIENT_TEMPLATES = BOOL_TEMPLATES + ("patient_has_symptoms_of_{e}_{t}",)


def _ontology_lines(rng: random.Random, n: int, depth: int) -> Tuple[List[str], Dict[str, Optional[str]]]:
    names = [f"c{i:03d}" for i in range(n)]
    level = {}
    parent: Dict[str, Optional[str]] = {}
    lines = [json.dumps({"type": "concept", "id": "age"})]
    for i, name in enumerate(names):
        lines.append(json.dumps({"type": "concept", "id": name}))
        candidates = [c for c in names[:i] if level[c] < depth - 1]
        if candidates and rng.random() < 0.7:
            parent[name] = rng.choice(candidates)
            level[name] = level[parent[name]] + 1
        else:
            parent[name] = None
            level[name] = 0
    for child, par in parent.items():
        if par is not None:
            lines.append(json.dumps({"type": "isa", "child": child, "parent": par}))
    return lines, parent


class _ProgramWriter:
    """Texto SMT-LIB de un programa aleatorio; el parser real lo convierte en TrialProgram"""

    def __init__(self, rng: random.Random, concepts: Sequence[str], params: WorldParams, tag: str):
        self.rng, self.concepts, self.params, self.tag = rng, concepts, params, tag
        self.declared: Dict[str, str] = {}

    def declare(self, name: str, sort: str = "Bool") -> str:
        self.declared.setdefault(name, sort)
        return name

    def bool_symbol(self) -> str:
        rng = self.rng
        if rng.random() < self.params.noncanonical_rate:
            return self.declare(f"local_{self.tag}_flag_{rng.randrange(3)}")
        name = rng.choice(BOOL_TEMPLATES).format(e=rng.choice(self.concepts), t=rng.choice(TIMEFRAMES))
        if rng.random() < self.params.bridge_rate:
            self.declare(name)
            name = f"{name}@@severe"
        return self.declare(name)

    def atom(self) -> str:
        rng = self.rng
        if rng.random() < 0.15:
            self.declare(AGE, "Real")
            return f"({rng.choice(['>=', '<='])} {AGE} {rng.randrange(18, 80)}.0)"
        symbol = self.bool_symbol()
        if rng.random() < self.params.negation_rate:
            return f"(not {symbol})"
        return symbol

    def formula(self, depth: int = 2) -> str:
        rng = self.rng
        if depth == 0 or rng.random() < 0.4:
            return self.atom()
        if rng.random() < self.params.count_rate:
            children = " ".join(f"(ite {self.bool_symbol()} 1 0)" for _ in range(3))
            return f"(>= (+ {children}) {rng.randint(1, 3)})"
        op = rng.choice(["or", "or", "and"])
        return f"({op} " + " ".join(self.formula(depth - 1) for _ in range(rng.randint(2, 3))) + ")"

    def component_class(self) -> str:
        if self.rng.random() < self.params.deferred_rate:
            return self.rng.choice(["NotRequirementOrOneOffAction", "OtherRequirements"])
        return "PrescreenMustSuffice"

    def render(self, assertions: List[str]) -> str:
        lines = [f"(declare-const {name} {sort}) ;; \"variable generada\"" for name, sort in self.declared.items()]
        return "\n".join(lines + assertions) + "\n"


def _write_program(rng: random.Random, concepts: Sequence[str], params: WorldParams, trial_id: str,
                   side: str) -> str:
    writer = _ProgramWriter(rng, concepts, params, trial_id.lower())
    assertions = []
    n = rng.randint(1, 3) if side == "Inclusion" else rng.randint(0, 2)
    for req in range(n):
        if side == "Inclusion":
            body, cls = writer.formula(), writer.component_class()
        else:
            body, cls = f"(not {writer.bool_symbol()})", "PrescreenMustSuffice"
        assertions.append(f"(assert (! {body} :named REQ{req}_COMPONENT0_{CLASS_LABELS[cls]}))")
    return writer.render(assertions)


def _fact(rng: random.Random, concepts: Sequence[str]) -> dict:
    (poss_lo, poss_hi), (cert_lo, cert_hi) = rng.choice(FACT_WINDOWS)
    item = {
        "timewindow_this_patient_fact_certainly_holds": {
            "start_time": endpoint_dict(cert_lo), "end_time": endpoint_dict(cert_hi)},
        "largest_timewindow_this_patient_fact_may_hold": {
            "start_time": endpoint_dict(poss_lo), "end_time": endpoint_dict(poss_hi)},
    }
    if rng.random() < 0.15:
        item.update(entity_variable_name=AGE, type="Real", extracted_value=rng.randrange(10, 90))
        return item
    value = rng.random() < 0.8
    name = rng.choice(PATIENT_TEMPLATES).format(e=rng.choice(concepts), t=rng.choice(TIMEFRAMES))
    item.update(entity_variable_name=name, type="Bool", extracted_value=value)
    if value and rng.random() < 0.4:
        item["patient_fact_relations"] = [rng.choice(PATIENT_FACT_RELATIONS)]
    return item


def _policy(rng: random.Random, concepts: Sequence[str], parent: Dict[str, Optional[str]],
            params: WorldParams) -> dict:
    raw = {"missingness": [], "specificity_allow": []}
    for c in concepts:
        if rng.random() < params.missingness_rate:
            raw["missingness"].append({"pattern": f"*_{c}_*",
                                       "tag": rng.choice(["SupportsIfMissing", "InconclusiveIfMissing"])})
        if parent.get(c) and rng.random() < params.specificity_rate:
            raw["specificity_allow"].append({"relation": "HasFindingOf", "concept": c, "ancestors": [parent[c]]})
    return raw


def generate_world(seed: int, params: Optional[WorldParams] = None, rules: Sequence[RelationRule] = (),
                   closure: Optional[ClosureConfig] = None) -> SyntheticWorld:
    """
    Mundo determinista en `seed`. Los programas pasan por el parser, por
    serialize_trial_program y de nuevo por el parser; los hechos por
    serialize_patient_facts y parse_patient_facts.
    """
    params = params or WorldParams()
    rng = random.Random(seed)
    lines, parent = _ontology_lines(rng, params.n_concepts, params.depth)
    o = parse_ontology(lines)
    concepts = sorted(parent)

    trials = []
    for i in range(params.n_trials):
        trial_id = f"SYN{seed}T{i:04d}"
        targets = tuple(
            TrialTarget(rng.choice(["Treats", "Treats", "Prevents", "Other", "NotClinicallyRelevant"]),
                        rng.choice(concepts))
            for _ in range(rng.randint(1, 2))
        )
        for side in ("Inclusion", "Exclusion"):
            text = _write_program(rng, concepts, params, trial_id, side)
            program = parse_trial_program(text, trial_id, "main", side, f"<{trial_id}/{side}>",
                                          targets if side == "Inclusion" else ())
            program = parse_trial_program(serialize_trial_program(program), trial_id, "main", side,
                                          f"<{trial_id}/{side}>", program.targets)
            trials.append(program)

    patients = {}
    for j in range(params.n_patients):
        pid = f"P{j:03d}"
        raw = [_fact(rng, concepts) for _ in range(rng.randint(1, params.facts_per_patient))]
        facts = parse_patient_facts(json.dumps(raw), pid, f"<{pid}>")
        patients[pid] = parse_patient_facts(serialize_patient_facts(facts), pid, f"<{pid}>")

    policy = parse_salience_policy(_policy(rng, concepts, parent, params), o)
    logger.debug(f"mundo {seed}: {len(concepts)} conceptos, {params.n_trials} ensayos, {params.n_patients} pacientes")
    return SyntheticWorld(o, trials, patients, policy, seed, tuple(rules), closure or ClosureConfig())


# === ORÁCULO ===

def _patient_literals(world: SyntheticWorld, patient_id: str) -> List[Literal]:
    gate = project_patient(world.closed_facts(patient_id), patient_id)
    return [lit for clause in gate.clauses for lit in clause.literals]


def _valuation(plits: List[Literal], o: Ontology, obj: ObjectiveConfig, admissible, policy: SaliencePolicy,
               constraint_class: Optional[str]):
    def value(atom: Atom) -> TriState:
        if not atom.constraint.is_canonical:
            return TriState.UNKNOWN
        lit = _literal_for(atom, True)
        contradicted = False
        tokens = frozenset(qualifier_tokens(lit.predicate))
        for pl in plits:
            if not context_compatible(lit, pl, o, obj, admissible):
                continue
            if not tokens <= frozenset(qualifier_tokens(pl.predicate)):
                continue
            if not inclusion_time_match(lit.window, pl.window):
                continue
            if value_compatible(lit, pl):
                return TriState.TRUE
            contradicted = True
        if contradicted or policy.tag_for(_atom_name(atom), constraint_class) == "RefutesIfMissing":
            return TriState.FALSE
        return TriState.UNKNOWN
    return value


def _certain_valuation(plits: List[Literal], o: Ontology, obj: ObjectiveConfig, admissible):
    def value(atom: Atom) -> TriState:
        if not atom.constraint.is_canonical:
            return TriState.UNKNOWN
        lit = _literal_for(atom, True)
        if any(atoms_compatible(lit, pl, o, obj, knockout=True, admissible=admissible) for pl in plits):
            return TriState.TRUE
        return TriState.UNKNOWN
    return value


def target_satisfied(program: TrialProgram, plits: List[Literal], o: Ontology, obj: ObjectiveConfig,
                     admissible) -> bool:
    if not program.targets:
        return True
    for t in program.targets:
        if t.intent == "NotClinicallyRelevant":
            continue
        lit = Literal(_target_constraint(t))
        if any(atoms_compatible(lit, pl, o, obj, admissible=admissible) for pl in plits):
            return True
    return False


def _target_constraint(t: TrialTarget) -> AtomicConstraint:
    return AtomicConstraint(CanonicalPredicate(t.intent, t.concept, ()), Cmp.EQ, True)


def _check_budget(world: SyntheticWorld, budget: int):
    atoms = sum(sum(1 for a in p.assertions for _ in iter_atoms(a.formula)) for p in world.trials)
    facts = sum(len(world.closed_facts(pid)) for pid in world.patients)
    if atoms * max(facts, 1) > budget:
        raise TooLarge(f"{atoms} átomos × {facts} hechos supera el presupuesto {budget}")


def oracle_pair(units: List[TrialProgram], plits: List[Literal], world: SyntheticWorld,
                obj: ObjectiveConfig, admissible) -> bool:
    o, policy = world.ontology, world.policy
    for p in units:
        if p.side != "Inclusion":
            continue
        if not target_satisfied(p, plits, o, obj, admissible):
            return False
        for a in p.components:
            if a.tag.constraint_class != "PrescreenMustSuffice":
                continue
            value = eval_formula(a.formula, {}, resolve=_valuation(plits, o, obj, admissible, policy,
                                                                  a.tag.constraint_class))
            if value == TriState.FALSE:
                return False
    if obj.enforce_knockouts:
        certain = _certain_valuation(plits, o, obj, admissible)
        for p in units:
            for a in p.components:
                if eval_formula(a.formula, {}, resolve=certain) == TriState.FALSE:
                    return False
    return True


def oracle_match(world: SyntheticWorld, obj: ObjectiveConfig, budget: int = DEFAULT_ATOM_BUDGET) -> Set[Pair]:
    """
    Raises:
        TooLarge: átomos × hechos supera `budget`
    """
    _check_budget(world, budget)
    admissible = admissible_pairs(world.ontology, obj)
    out = set()
    units = world.trial_units()
    for pid in sorted(world.patients):
        plits = _patient_literals(world, pid)
        for (trial_id, subcohort), programs in units.items():
            if oracle_pair(programs, plits, world, obj, admissible):
                out.add((trial_id, subcohort, pid))
    return out


# === MOTOR SOBRE EL MUNDO ===

def world_gates(world: SyntheticWorld, on_ontology_miss: str = "error") -> List[GateCNF]:
    gates = [project_trial(p, world.ontology, world.policy, on_ontology_miss=on_ontology_miss)
             for p in world.trials]
    gates += [project_patient(world.closed_facts(pid), pid) for pid in sorted(world.patients)]
    return gates


def engine_match(world: SyntheticWorld, obj: ObjectiveConfig, store_path: Optional[str] = None,
                 mutate: Optional[Callable[[List[GateCNF]], List[GateCNF]]] = None,
                 engine: str = "sql") -> Set[Pair]:
    gates = world_gates(world)
    if mutate is not None:
        gates = mutate(gates)
    with tempfile.TemporaryDirectory() as tmp:
        path = store_path or str(Path(tmp) / "world.db")
        with build_store(gates, path, ontology_digest(world.ontology)) as h:
            return {r.key for r in retrieve(h, world.ontology, obj, engine=engine)}


def verify_full_recall(world: SyntheticWorld, obj: ObjectiveConfig, store_path: Optional[str] = None,
                       mutate: Optional[Callable[[List[GateCNF]], List[GateCNF]]] = None,
                       engine: str = "sql") -> dict:
    """
    Returns:
        {"missed": [pares del oráculo ausentes del motor], "extra_count", "recall", ...}
    """
    expected = oracle_match(world, obj)
    got = engine_match(world, obj, store_path, mutate, engine)
    missed = sorted(expected - got)
    recall = 1.0 if not expected else (len(expected) - len(missed)) / len(expected)
    if missed:
        logger.warning(f"mundo {world.seed}: {len(missed)} pares perdidos (recall={recall:.3f})")
    return {
        "seed": world.seed,
        "objective": obj.name,
        "missed": [list(p) for p in missed],
        "extra_count": len(got - expected),
        "oracle_count": len(expected),
        "engine_count": len(got),
        "recall": recall,
    }


def precision_report(world: SyntheticWorld, obj: ObjectiveConfig) -> dict:
    """Diagnóstico: cuántos pares devuelve el motor que el oráculo no confirma"""
    expected = oracle_match(world, obj)
    got = engine_match(world, obj)
    return {
        "seed": world.seed,
        "engine_pairs": len(got),
        "oracle_pairs": len(expected & got),
        "extra": len(got - expected),
        "precision": 1.0 if not got else len(expected & got) / len(got),
    }


def add_unsatisfiable_clause(gates: List[GateCNF], owner: str) -> List[GateCNF]:
    """Mutación: refuerza la compuerta `owner` con una cláusula que ningún paciente soporta"""
    never = Literal(AtomicConstraint(CanonicalPredicate("HasFindingOf", "never_observed", ()), Cmp.EQ, True))
    out = []
    for g in gates:
        if g.owner == owner:
            g = replace(g, clauses=g.clauses + (GateClause((never,), "RetrievalRelevant", "mutation"),))
        out.append(g)
    return out


# === REFERENCIAS INGENUAS ===

def naive_closure(facts: Iterable[PatientFactRecord], o: Ontology, rules=(), cfg: Optional[ClosureConfig] = None,
                  side: str = "inclusion") -> List[PatientFactRecord]:
    """Clausura sin frontera: cada pasada rederiva desde todos los hechos"""
    cfg = cfg or ClosureConfig()
    known = {}
    for fact in sorted(facts, key=lambda f: (f.dedup_key, f.value)):
        known.setdefault(fact.dedup_key, fact)
    for _ in range(cfg.max_passes):
        new = 0
        for fact in sorted(derive_once(list(known.values()), o, rules, cfg, side),
                           key=lambda f: (f.dedup_key, f.value)):
            if fact.dedup_key not in known:
                known[fact.dedup_key] = fact
                new += 1
        if not new:
            break
    return sorted(known.values(), key=lambda f: (f.dedup_key, f.value))


def naive_retrieve(trial_gates: Iterable[GateCNF], patient_gates: Iterable[GateCNF], o: Ontology,
                   obj: ObjectiveConfig) -> List[MatchResult]:
    """Bucle por par (ensayo, paciente) sin índices; línea base del benchmark"""
    admissible = admissible_pairs(o, obj)
    units: Dict[Tuple[str, str], List[GateCNF]] = {}
    for g in trial_gates:
        units.setdefault((g.entity_id, g.subcohort), []).append(g)
    patients = sorted(patient_gates, key=lambda g: g.entity_id)
    results = []
    for (trial_id, subcohort), gates in sorted(units.items()):
        relevant = [c for g in gates if g.side == "Inclusion" for c in g.relevant]
        knockouts = [c for g in gates for c in g.knockouts] if obj.enforce_knockouts else []
        for pg in patients:
            plits = [l for c in pg.clauses for l in c.literals]
            ok = all(
                any(atoms_compatible(l, pl, o, obj, admissible=admissible) for l in c.literals if l.positive
                    for pl in plits)
                for c in relevant
            )
            if ok and any(
                atoms_compatible(l, pl, o, obj, knockout=True, admissible=admissible)
                for c in knockouts for l in c.literals if not l.positive for pl in plits
            ):
                ok = False
            if ok:
                results.append(MatchResult(trial_id, subcohort, pg.entity_id, len(relevant), len(relevant)))
    return sorted(results, key=lambda r: (r.patient_id, r.trial_id, r.subcohort))


def timed(fn: Callable, *args, **kwargs) -> Tuple[object, float]:
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start
