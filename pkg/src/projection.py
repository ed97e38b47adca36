"""
Proyección de programas de ensayo y hechos de paciente a compuertas CNF.

La compuerta Ψ de un ensayo debe ser implicada por su fórmula completa: sólo
se debilita (se agregan literales o se descartan cláusulas), nunca se
refuerza. Como ∧/∨ de Kleene forman un retículo distributivo, el valor de la
fórmula coincide con el mínimo sobre cláusulas del máximo de sus literales,
así que el mismo argumento vale para la evaluación trivalente del oráculo.
"""
import fnmatch
import itertools
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from src.errors import OntologyMissError, PolicyError, TooLargeToVerify
from src.formula import (
    And, Atom, AtomicConstraint, CanonicalPredicate, Cmp, CountAtLeast, Formula, Iff, Implies,
    Interval, NonCanonicalPredicate, Not, Or, QualifierKey, TriState, eval_formula, iter_atoms,
)
from src.naming import TRIAL_INTENTS
from src.ontology import Ontology, concept_subsumes
from src.smt_frontend import PatientFactRecord, TrialProgram
from src.temporal import ALWAYS, TimeWindow


logger = logging.getLogger(__name__)

POLICY_PATH = Path(__file__).parent.parent / "data" / "salience_policy.json"

MISSINGNESS_TAGS = ("SupportsIfMissing", "RefutesIfMissing", "InconclusiveIfMissing")
ROLES = ("RetrievalRelevant", "Deferred", "Knockout")
DEFAULT_CLAUSE_CAP = 512
ENTAILMENT_ATOM_LIMIT = 20


# === POLÍTICA DE SALIENCIA ===

@dataclass(frozen=True)
class MissingnessRule:
    pattern: str
    tag: str


@dataclass(frozen=True)
class SpecificityAllow:
    relation: str
    concept: str
    ancestors: Tuple[str, ...]


@dataclass(frozen=True)
class SaliencePolicy:
    missingness: Tuple[MissingnessRule, ...] = ()
    specificity_allow: Tuple[SpecificityAllow, ...] = ()

    def tag_for(self, name: str, constraint_class: Optional[str]) -> str:
        """Primer patrón que coincide; si no, según la clase de la componente"""
        for rule in self.missingness:
            if fnmatch.fnmatchcase(name, rule.pattern):
                return rule.tag
        if constraint_class == "PrescreenMustSuffice":
            return "RefutesIfMissing"
        return "InconclusiveIfMissing"

    def allowed_ancestors(self, relation: str, concept: str) -> Tuple[str, ...]:
        out: List[str] = []
        for entry in self.specificity_allow:
            if entry.relation == relation and entry.concept == concept:
                out.extend(a for a in entry.ancestors if a not in out)
        return tuple(out)


def parse_salience_policy(raw: dict, o: Ontology) -> SaliencePolicy:
    missingness = []
    for item in raw.get("missingness", []):
        if item.get("tag") not in MISSINGNESS_TAGS or not item.get("pattern"):
            raise PolicyError(f"regla de ausencia inválida: {item!r}")
        missingness.append(MissingnessRule(item["pattern"], item["tag"]))

    allow = []
    for item in raw.get("specificity_allow", []):
        relation, concept = item.get("relation"), item.get("concept")
        ancestors = tuple(item.get("ancestors", []))
        if not o.has_relation(relation or "") or not o.has_concept(concept or ""):
            raise PolicyError(f"lista de especificidad con ids no declarados: {item!r}")
        for anc in ancestors:
            if not o.has_concept(anc) or anc == concept or not concept_subsumes(o, anc, concept):
                raise PolicyError(f"{anc!r} no es ancestro propio de {concept!r}")
        allow.append(SpecificityAllow(relation, concept, ancestors))
    return SaliencePolicy(tuple(missingness), tuple(allow))


def load_salience_policy(path, o: Ontology) -> SaliencePolicy:
    with open(path, "r", encoding="utf-8") as f:
        return parse_salience_policy(json.load(f), o)


# === COMPUERTAS ===

@dataclass(frozen=True)
class Literal:
    constraint: AtomicConstraint
    positive: bool = True
    window: TimeWindow = ALWAYS
    cert_window: Optional[TimeWindow] = None

    @property
    def predicate(self):
        return self.constraint.predicate

    def sort_key(self):
        c = self.constraint
        p = c.predicate
        pred_key = (p.relation, p.concept, p.qualifiers) if isinstance(p, CanonicalPredicate) else ("", p.id, ())
        return (pred_key, c.cmp.value, repr(c.target), not self.positive, self.window,
                self.cert_window or ALWAYS)


@dataclass(frozen=True)
class GateClause:
    literals: Tuple[Literal, ...]
    role: str
    origin: str = ""

    @property
    def is_target(self) -> bool:
        return self.origin == "target"


@dataclass(frozen=True)
class GateCNF:
    owner: str
    entity_kind: str               # Trial | Patient
    entity_id: str
    side: str = ""                 # Inclusion | Exclusion | "" (paciente)
    subcohort: str = ""
    clauses: Tuple[GateClause, ...] = ()

    def by_role(self, role: str) -> Tuple[GateClause, ...]:
        return tuple(c for c in self.clauses if c.role == role)

    @property
    def relevant(self) -> Tuple[GateClause, ...]:
        return self.by_role("RetrievalRelevant")

    @property
    def knockouts(self) -> Tuple[GateClause, ...]:
        return self.by_role("Knockout")


def canonical_predicate(p: CanonicalPredicate) -> CanonicalPredicate:
    """Calificadores libres ordenados (semántica de conjunto)"""
    fixed = [q for q in p.qualifiers if q.kind != "Free"]
    free = sorted({q for q in p.qualifiers if q.kind == "Free"})
    return CanonicalPredicate(p.relation, p.concept, tuple(fixed) + tuple(free))


def _literal_for(atom: Atom, positive: bool) -> Literal:
    c = atom.constraint
    if isinstance(c.predicate, CanonicalPredicate):
        return Literal(replace(c, predicate=canonical_predicate(c.predicate)), positive, c.predicate.window)
    return Literal(c, positive, ALWAYS)


# === NNF / CNF ===
# NNF: ("and", [..]) | ("or", [..]) | ("lit", nodo, positivo)

def to_nnf(f: Formula, positive: bool = True):
    if isinstance(f, (Atom, CountAtLeast)):
        return ("lit", f, positive)
    if isinstance(f, Not):
        return to_nnf(f.child, not positive)
    if isinstance(f, And):
        kind = "and" if positive else "or"
        return (kind, [to_nnf(c, positive) for c in f.children])
    if isinstance(f, Or):
        kind = "or" if positive else "and"
        return (kind, [to_nnf(c, positive) for c in f.children])
    if isinstance(f, Implies):
        return to_nnf(Or((Not(f.lhs), f.rhs)), positive)
    if isinstance(f, Iff):
        return to_nnf(And((Or((Not(f.lhs), f.rhs)), Or((Not(f.rhs), f.lhs)))), positive)
    raise TypeError(f"nodo desconocido: {type(f).__name__}")


def to_cnf(nnf, cap: int = DEFAULT_CLAUSE_CAP) -> Tuple[List[Tuple], int]:
    """
    Distribución sin variables auxiliares.

    Returns:
        (cláusulas como tuplas de (nodo, positivo), cláusulas descartadas por el tope)
    """
    dropped = 0

    def go(node) -> List[Tuple]:
        nonlocal dropped
        kind = node[0]
        if kind == "lit":
            return [((node[1], node[2]),)]
        parts = [go(c) for c in node[1]]
        if kind == "and":
            out = [c for part in parts for c in part]
            if len(out) > cap:
                dropped += len(out) - cap
                out = out[:cap]
            return out
        out = [()]
        for part in parts:
            merged = []
            for left in out:
                for right in part:
                    if len(merged) >= cap:
                        dropped += 1
                        continue
                    merged.append(left + right)
            out = merged
        return out

    clauses = []
    for clause in go(nnf):
        unique = tuple(dict.fromkeys(clause))
        if any((n, not pos) in unique for n, pos in unique):
            continue
        clauses.append(unique)
    return clauses, dropped


# === DEFINICIONES Y PUENTES ===

def collect_definitions(p: TrialProgram) -> Dict[AtomicConstraint, List[Formula]]:
    """
    V ↦ alternativas F tales que F basta para V: auxiliares `=` y `=>` y
    puentes implícitos calificado ⇒ raíz cuando la raíz está declarada.
    """
    defs: Dict[AtomicConstraint, List[Formula]] = {}

    def add(target: Formula, alternative: Formula):
        if isinstance(target, Atom) and not target.constraint.is_numeric and target.constraint.target is True:
            defs.setdefault(target.constraint, [])
            if alternative not in defs[target.constraint] and alternative != target:
                defs[target.constraint].append(alternative)

    for a in p.auxiliaries:
        f = a.formula
        pairs = f.children if isinstance(f, And) and all(isinstance(c, Iff) for c in f.children) else (f,)
        for g in pairs:
            if isinstance(g, Iff):
                add(g.lhs, g.rhs)
                add(g.rhs, g.lhs)
            elif isinstance(g, Implies):
                add(g.rhs, g.lhs)

    declared = {d.symbol: d for d in p.declarations}
    for d in p.declarations:
        if "@@" not in d.symbol or d.is_numeric:
            continue
        stem = declared.get(d.symbol.split("@@")[0])
        if stem is None or stem.is_numeric:
            continue
        stem_atom = Atom(AtomicConstraint(stem.predicate, Cmp.EQ, True), stem.symbol)
        add(stem_atom, Atom(AtomicConstraint(d.predicate, Cmp.EQ, True), d.symbol))
    return defs


def inline_definitions(nnf, defs: Dict[AtomicConstraint, List[Formula]], active: frozenset = frozenset()):
    """Reemplaza literales positivos V por V ∨ F (debilitamiento) sin recursión cíclica"""
    kind = nnf[0]
    if kind == "lit":
        node, positive = nnf[1], nnf[2]
        if not positive or not isinstance(node, Atom):
            return nnf
        alternatives = defs.get(node.constraint)
        if not alternatives or node.constraint in active:
            return nnf
        inner = active | {node.constraint}
        return ("or", [nnf] + [inline_definitions(to_nnf(f), defs, inner) for f in alternatives])
    return (kind, [inline_definitions(c, defs, active) for c in nnf[1]])


# === PROYECCIÓN DE ENSAYOS ===

def _atom_name(node) -> str:
    if isinstance(node, Atom):
        if node.symbol:
            return node.symbol
        p = node.constraint.predicate
        return p.id if isinstance(p, NonCanonicalPredicate) else p.render()
    return node.helper or "count"


class _MissPolicy:
    def __init__(self, o: Ontology, mode: str):
        if mode not in ("error", "drop"):
            raise PolicyError(f"on_ontology_miss inválido: {mode!r}")
        self.o, self.mode = o, mode

    def ok(self, pred: CanonicalPredicate, where: str) -> bool:
        if self.o.has_concept(pred.concept) and self.o.has_relation(pred.relation):
            return True
        if self.mode == "error":
            raise OntologyMissError(f"{where}: {pred.relation}({pred.concept}) no está en la ontología")
        logger.debug(f"{where}: cláusula descartada por {pred.concept!r} fuera de la ontología")
        return False


def _expand_specificity(lit: Literal, policy: SaliencePolicy) -> List[Literal]:
    p = lit.predicate
    if not lit.positive or not isinstance(p, CanonicalPredicate) or lit.constraint.is_numeric:
        return [lit]
    out = [lit]
    for anc in policy.allowed_ancestors(p.relation, p.concept):
        out.append(replace(lit, constraint=replace(lit.constraint, predicate=replace(p, concept=anc))))
    return out


def classify_clause(clause: Sequence[Tuple], side: str, constraint_class: Optional[str],
                    policy: SaliencePolicy) -> Optional[str]:
    """Rol de una cláusula ya filtrada a literales canónicos, o None si no es ejecutable"""
    for node, _ in clause:
        if isinstance(node, CountAtLeast) or not node.constraint.is_canonical:
            return None
    if len(clause) == 1:
        node, positive = clause[0]
        if not positive and not node.constraint.is_numeric:
            return "Knockout"
    if side != "Inclusion" or constraint_class != "PrescreenMustSuffice":
        return "Deferred"
    for node, positive in clause:
        if not positive or node.constraint.cmp == Cmp.NE:
            return "Deferred"
        if policy.tag_for(_atom_name(node), constraint_class) != "RefutesIfMissing":
            return "Deferred"
    return "RetrievalRelevant"


def target_clause(p: TrialProgram, o: Ontology, miss: _MissPolicy) -> Optional[GateClause]:
    if not p.targets or p.side != "Inclusion":
        return None
    literals = []
    for t in p.targets:
        if t.intent == "NotClinicallyRelevant":
            continue
        pred = CanonicalPredicate(t.intent, t.concept, ())
        if not miss.ok(pred, f"{p.entity_id} objetivo"):
            continue
        literals.append(Literal(AtomicConstraint(pred, Cmp.EQ, True), True, ALWAYS))
    return GateClause(tuple(sorted(set(literals), key=Literal.sort_key)), "RetrievalRelevant", "target")


def project_trial(p: TrialProgram, o: Ontology, policy: Optional[SaliencePolicy] = None,
                  clause_cap: int = DEFAULT_CLAUSE_CAP, on_ontology_miss: str = "error") -> GateCNF:
    """
    Programa → compuerta CNF (relevantes, diferidas y knockouts).

    Raises:
        OntologyMissError: átomo canónico con concepto no declarado (on_ontology_miss="error")
    """
    policy = policy or SaliencePolicy()
    miss = _MissPolicy(o, on_ontology_miss)
    defs = collect_definitions(p)
    clauses: Dict[Tuple, GateClause] = {}
    dropped_cap = dropped_opaque = 0

    for a in p.components:
        nnf = inline_definitions(to_nnf(a.formula), defs)
        raw, dropped = to_cnf(nnf, clause_cap)
        dropped_cap += dropped
        for clause in raw:
            role = classify_clause(clause, p.side, a.tag.constraint_class, policy)
            if role is None:
                dropped_opaque += 1
                continue
            if not all(miss.ok(n.constraint.predicate, p.entity_id) for n, _ in clause):
                continue
            literals = [_literal_for(n, pos) for n, pos in clause]
            if role == "RetrievalRelevant":
                literals = [x for lit in literals for x in _expand_specificity(lit, policy)]
            literals = tuple(sorted(set(literals), key=Literal.sort_key))
            key = (role, literals)
            if key not in clauses:
                clauses[key] = GateClause(literals, role, render_origin(a.tag))

    target = target_clause(p, o, miss)
    if target is not None:
        if target.literals:
            target = replace(target, literals=tuple(
                x for lit in target.literals for x in _expand_specificity(lit, policy)))
        clauses[("target", target.literals)] = target

    ordered = sorted(clauses.values(), key=lambda c: (ROLES.index(c.role), [l.sort_key() for l in c.literals]))
    if len(ordered) > clause_cap:
        dropped_cap += len(ordered) - clause_cap
        # los relevantes van primero; descartar el resto nunca refuerza la compuerta
        ordered = ordered[:clause_cap]
    if dropped_cap:
        logger.warning(f"{p.entity_id}: {dropped_cap} cláusulas descartadas por el tope de {clause_cap}")
    logger.debug(f"{p.entity_id}: {len(ordered)} cláusulas, {dropped_opaque} no ejecutables")

    return GateCNF(
        owner=p.entity_id,
        entity_kind="Trial",
        entity_id=p.trial_id,
        side=p.side,
        subcohort=p.subcohort_id,
        clauses=tuple(ordered),
    )


def render_origin(tag) -> str:
    if tag.kind == "Auxiliary":
        return f"REQ{tag.req_idx}_AUXILIARY{tag.component_idx}"
    return f"REQ{tag.req_idx}_COMPONENT{tag.component_idx}"


# === PROYECCIÓN DE PACIENTES ===

def fact_literal(fact: PatientFactRecord) -> Literal:
    pred = canonical_predicate(fact.predicate)
    if fact.is_numeric:
        constraint = AtomicConstraint(pred, Cmp.EQ, Interval.point(fact.value, pred.unit))
    else:
        constraint = AtomicConstraint(pred, Cmp.EQ, fact.value)
    return Literal(constraint, True, fact.poss_window, fact.cert_window)


def target_literals(fact: PatientFactRecord) -> List[Literal]:
    """Átomos (etiqueta R_P, concepto) de un hecho positivo etiquetado"""
    if fact.is_numeric or fact.value is not True:
        return []
    return [
        Literal(AtomicConstraint(CanonicalPredicate(label, fact.variable.concept, ()), Cmp.EQ, True),
                True, fact.poss_window, fact.cert_window)
        for label in fact.labels
    ]


def project_patient(facts: Iterable[PatientFactRecord], patient_id: str = "") -> GateCNF:
    """Una cláusula unitaria por hecho (y por átomo objetivo de hechos etiquetados)"""
    literals = set()
    for fact in facts:
        literals.add(fact_literal(fact))
        literals.update(target_literals(fact))
    clauses = tuple(GateClause((lit,), "RetrievalRelevant", "fact")
                    for lit in sorted(literals, key=Literal.sort_key))
    return GateCNF(owner=patient_id, entity_kind="Patient", entity_id=patient_id, clauses=clauses)


# === VERIFICACIÓN ===

def program_formula(p: TrialProgram) -> Formula:
    """TC: conjunción de todas las aserciones del programa"""
    return And(tuple(a.formula for a in p.assertions))


def gate_formula(gate: GateCNF, roles: Iterable[str] = ROLES) -> Formula:
    """Compuerta como fórmula (sin cláusulas objetivo)"""
    roles = set(roles)
    clauses = []
    for c in gate.clauses:
        if c.role not in roles or c.is_target:
            continue
        clauses.append(Or(tuple(
            Atom(l.constraint) if l.positive else Not(Atom(l.constraint)) for l in c.literals
        )))
    return And(tuple(clauses))


def _strip(c: AtomicConstraint) -> AtomicConstraint:
    if isinstance(c.predicate, CanonicalPredicate):
        return replace(c, predicate=canonical_predicate(c.predicate))
    return c


def check_gate_entailment(tc: Formula, gate: GateCNF, limit: int = ENTAILMENT_ATOM_LIMIT) -> bool:
    """
    Fuerza bruta sobre 2^n asignaciones: ¿toda asignación que satisface tc satisface la compuerta?
    Los átomos numéricos cuentan como variables booleanas independientes.
    """
    atoms = {_strip(a.constraint) for a in iter_atoms(tc)}
    for c in gate.clauses:
        if c.is_target:
            continue
        atoms.update(_strip(l.constraint) for l in c.literals)
    atoms = sorted(atoms, key=repr)
    if len(atoms) > limit:
        raise TooLargeToVerify(f"{len(atoms)} átomos (límite {limit})")

    clauses = [c for c in gate.clauses if not c.is_target]
    for values in itertools.product((False, True), repeat=len(atoms)):
        assignment = dict(zip(atoms, values))
        holds = eval_formula(tc, {}, resolve=lambda a: TriState.of(assignment[_strip(a.constraint)]))
        if holds != TriState.TRUE:
            continue
        for c in clauses:
            if not any(assignment[_strip(l.constraint)] == l.positive for l in c.literals):
                return False
    return True
