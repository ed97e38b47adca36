"""
Recuperación condicionada por objetivo.

Plan en tres etapas: pares de átomos compatibles (ensayo × paciente) →
cláusulas soportadas → agregación por par (ensayo, paciente) conservando
sólo los pares con todas sus cláusulas relevantes soportadas. El plan
existe dos veces: como una sentencia SQL sobre el store y como hash-join en
memoria; ambas deben dar el mismo conjunto.
"""
import logging
import sqlite3
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from src.db import StoreHandle, dump_all, entity_gates, entity_ids, get_connection, qualifier_tokens
from src.errors import RetrievalError, UnitMismatch, UnknownEntity, UnknownObjective
from src.formula import Cmp, Interval
from src.naming import PATIENT_FACT_RELATIONS, TRIAL_INTENTS
from src.ontology import Ontology, concept_subsumes, relation_subsumes
from src.projection import GateCNF, GateClause, Literal
from src.temporal import exclusion_time_match, inclusion_time_match


logger = logging.getLogger(__name__)

OBJECTIVE_ALIASES = {
    "treat-chief": "treat_chief",
    "treat-any": "treat_any",
    "relevant-to-any": "relevant_to_any",
}

DEFAULT_OBJECTIVES = {
    "treat_chief": [
        ["Treats", "ChiefComplaint"],
        ["Treats", "ChiefComplaintRelated"],
        ["Prevents", "PreventionTarget"],
    ],
    "treat_any": [
        ["Treats", "ChiefComplaint"],
        ["Treats", "ChiefComplaintRelated"],
        ["Prevents", "PreventionTarget"],
        ["Treats", "AnyImportantComplaint"],
    ],
    "relevant_to_any": "all",
}


# === OBJETIVOS ===

@dataclass(frozen=True)
class ObjectiveConfig:
    name: str
    intent_map: FrozenSet[Tuple[str, str]]
    enforce_knockouts: bool = False
    subsumption_fallback: bool = False
    strict_containment: bool = False


def _relations_of(o: Optional[Ontology], family: str, builtin: Sequence[str]) -> List[str]:
    if o is None:
        return list(builtin)
    return sorted(r for r, fam in o.relations.items() if fam == family)


def resolve_intent_map(raw, o: Optional[Ontology] = None) -> FrozenSet[Tuple[str, str]]:
    """Lista de pares [intención, rol] o "all" (toda intención salvo NotClinicallyRelevant × todo rol)"""
    if raw == "all":
        intents = [r for r in _relations_of(o, "TrialIntent", TRIAL_INTENTS) if r != "NotClinicallyRelevant"]
        roles = _relations_of(o, "PatientFact", PATIENT_FACT_RELATIONS)
        return frozenset((t, p) for t in intents for p in roles)
    pairs = set()
    for item in raw:
        if len(item) != 2:
            raise UnknownObjective(f"par de objetivo inválido: {item!r}")
        trial_rel, patient_rel = item
        if o is not None and not (o.has_relation(trial_rel) and o.has_relation(patient_rel)):
            raise UnknownObjective(f"relaciones no declaradas en el objetivo: {item!r}")
        pairs.add((trial_rel, patient_rel))
    return frozenset(pairs)


def get_objective(name: str, objectives: Optional[dict] = None, o: Optional[Ontology] = None,
                  **options) -> ObjectiveConfig:
    """
    Args:
        name: treat-chief | treat-any | relevant-to-any | nombre bajo objectives.custom
        objectives: sección `objectives` de config.yaml
        options: enforce_knockouts, subsumption_fallback, strict_containment

    Raises:
        UnknownObjective
    """
    objectives = objectives if objectives is not None else DEFAULT_OBJECTIVES
    key = OBJECTIVE_ALIASES.get(name, name)
    custom = objectives.get("custom") or {}
    if key in objectives and key != "custom":
        raw = objectives[key]
    elif key in custom:
        raw = custom[key]
    else:
        raise UnknownObjective(f"objetivo desconocido: {name!r}")
    return ObjectiveConfig(name=name, intent_map=resolve_intent_map(raw, o), **options)


def admissible_pairs(o: Ontology, obj: ObjectiveConfig) -> FrozenSet[Tuple[str, str]]:
    """(relación del ensayo, relación del paciente): ⊒_R entre relaciones médicas más el mapa de intención"""
    medical = [r for r, fam in o.relations.items() if fam not in ("TrialIntent", "PatientFact")]
    pairs = {(g, s) for g in medical for s in medical if relation_subsumes(o, g, s)}
    return frozenset(pairs | set(obj.intent_map))


# === COMPATIBILIDAD DE ÁTOMOS ===

def _tokens(lit: Literal) -> FrozenSet:
    return frozenset(qualifier_tokens(lit.constraint.predicate))


def context_compatible(trial: Literal, patient: Literal, o: Ontology, obj: ObjectiveConfig,
                       admissible: Optional[FrozenSet] = None) -> bool:
    """
    Relación admisible y concepto compatible; lanza UnitMismatch si además
    ambas unidades están presentes y difieren.
    """
    t, p = trial.constraint, patient.constraint
    tp, pp = t.predicate, p.predicate
    admissible = admissible if admissible is not None else admissible_pairs(o, obj)
    if (tp.relation, pp.relation) not in admissible or t.is_numeric != p.is_numeric:
        return False
    if tp.concept != pp.concept:
        if not obj.subsumption_fallback:
            return False
        if not (o.has_concept(tp.concept) and o.has_concept(pp.concept)):
            return False
        if not concept_subsumes(o, tp.concept, pp.concept):
            return False
    if t.unit is not None and p.unit is not None and t.unit != p.unit:
        raise UnitMismatch(f"{tp.render()}: {t.unit} vs {p.unit}")
    return True


def value_compatible(trial: Literal, patient: Literal) -> bool:
    t, p = trial.constraint, patient.constraint
    if not t.is_numeric:
        return t.target == p.target
    target = p.target if isinstance(p.target, Interval) else Interval(p.target.value, p.target.value)
    if t.cmp == Cmp.NE:
        value = t.target.value if not isinstance(t.target, Interval) else None
        return not (target.lower == target.upper == value)
    wanted = t.to_interval()
    return wanted is not None and wanted.intersects(target)


def atoms_compatible(trial: Literal, patient: Literal, o: Ontology, obj: ObjectiveConfig,
                     knockout: bool = False, admissible: Optional[FrozenSet] = None) -> bool:
    """
    ¿El átomo del paciente soporta al del ensayo? Relación admisible, concepto,
    ventana (solapamiento con la posible, o contención de la cierta si
    `knockout`), calificadores del ensayo ⊆ los del paciente y valor.

    Raises:
        UnitMismatch
    """
    if not context_compatible(trial, patient, o, obj, admissible):
        return False
    if not _tokens(trial) <= _tokens(patient):
        return False
    if knockout:
        if patient.cert_window is None:
            return False
        if not exclusion_time_match(trial.window, patient.cert_window, obj.strict_containment):
            return False
    elif not inclusion_time_match(trial.window, patient.window):
        return False
    return value_compatible(trial, patient)


# === RESULTADOS ===

@dataclass
class MatchResult:
    trial_id: str
    subcohort: str
    patient_id: str
    supported_clause_count: int
    relevant_clause_count: int
    explanations: Optional[dict] = None

    @property
    def key(self) -> Tuple[str, str, str]:
        return self.trial_id, self.subcohort, self.patient_id

    def to_dict(self) -> dict:
        out = {
            "trial_id": self.trial_id,
            "subcohort": self.subcohort,
            "patient_id": self.patient_id,
            "supported_clause_count": self.supported_clause_count,
            "relevant_clause_count": self.relevant_clause_count,
        }
        if self.explanations is not None:
            out["explanation"] = self.explanations
        return out


def _sort(results: Iterable[MatchResult]) -> List[MatchResult]:
    return sorted(results, key=lambda r: (r.patient_id, r.trial_id, r.subcohort))


# === MOTOR SQL ===

QUALIFIER_SUBSET = '''
    NOT EXISTS (SELECT 1 FROM QT q WHERE q.qualifiers_digest = t.qualifiers_digest
        AND NOT EXISTS (SELECT 1 FROM QT q2 WHERE q2.qualifiers_digest = p.qualifiers_digest
                        AND q2.kind = q.kind AND q2.value = q.value))'''

TRIAL_WINDOW = "t.win_lo, t.win_hi, t.win_lo_incl, t.win_hi_incl"
UNITS_EQUAL = "(t.unit IS NULL OR p.unit IS NULL OR t.unit = p.unit)"


def _values_cte(name: str, columns: Sequence[str], rows: Sequence[Tuple]) -> Tuple[str, List]:
    if not rows:
        cols = ", ".join(f"NULL AS {c}" for c in columns)
        return f"{name} AS (SELECT {cols} WHERE 0)", []
    values = ", ".join("(" + ", ".join("?" * len(columns)) + ")" for _ in rows)
    cols = ", ".join(columns)
    return f"{name}({cols}) AS (VALUES {values})", [v for row in rows for v in row]


def _concept_join(obj: ObjectiveConfig) -> str:
    if obj.subsumption_fallback:
        return "(p.concept = t.concept OR concept_ok(t.concept, p.concept))"
    return "p.concept = t.concept"


def _register_ontology(conn: sqlite3.Connection, o: Ontology):
    def concept_ok(ancestor, descendant):
        if not (o.has_concept(ancestor) and o.has_concept(descendant)):
            return 0
        return int(concept_subsumes(o, ancestor, descendant))
    conn.create_function("concept_ok", 2, concept_ok, deterministic=True)


def _common_ctes(o: Ontology, obj: ObjectiveConfig, patients: Optional[Sequence[str]]) -> Tuple[List[str], List]:
    ctes, params = [], []
    adm, adm_params = _values_cte("ADMISSIBLE", ("trial_rel", "patient_rel"), sorted(admissible_pairs(o, obj)))
    ctes.append(adm)
    params += adm_params
    if patients is None:
        ctes.append("patients AS (SELECT DISTINCT entity_id AS patient_id FROM ECNF WHERE entity_kind = 'Patient')")
    else:
        flt, flt_params = _values_cte("patient_filter", ("patient_id",), [(p,) for p in sorted(set(patients))])
        ctes.append(flt)
        params += flt_params
        ctes.append('''patients AS (SELECT DISTINCT e.entity_id AS patient_id FROM ECNF e
                       JOIN patient_filter f ON f.patient_id = e.entity_id WHERE e.entity_kind = 'Patient')''')
    ctes.append('''patient_atoms AS (
        SELECT DISTINCT e.entity_id AS patient_id, d.atom_id
        FROM ECNF e JOIN patients ps ON ps.patient_id = e.entity_id
        JOIN CNFD c ON c.cnf_id = e.cnf_id JOIN DA d ON d.clause_id = c.clause_id
        WHERE e.entity_kind = 'Patient')''')
    return ctes, params


def _trial_clause_cte(role: str, name: str, side_filter: str = "") -> str:
    return f'''{name} AS (
        SELECT e.entity_id AS trial_id, e.subcohort, c.clause_id, d.atom_id
        FROM ECNF e JOIN CNFD c ON c.cnf_id = e.cnf_id JOIN DA d ON d.clause_id = c.clause_id
        WHERE e.entity_kind = 'Trial' AND c.clause_role = '{role}' {side_filter})'''


def _check_units(h: StoreHandle, o: Ontology, obj: ObjectiveConfig, patients, roles: Sequence[str]):
    ctes, params = _common_ctes(o, obj, patients)
    role_list = ", ".join(f"'{r}'" for r in roles)
    ctes.append(f'''trial_atoms AS (
        SELECT DISTINCT d.atom_id FROM ECNF e JOIN CNFD c ON c.cnf_id = e.cnf_id
        JOIN DA d ON d.clause_id = c.clause_id
        WHERE e.entity_kind = 'Trial' AND c.clause_role IN ({role_list}))''')
    clash = []
    for table in ("AB", "AN"):
        clash.append(f'''SELECT t.relation, t.concept, t.unit AS t_unit, p.unit AS p_unit
            FROM trial_atoms ta JOIN {table} t ON t.atom_id = ta.atom_id
            JOIN ADMISSIBLE adm ON adm.trial_rel = t.relation
            JOIN {table} p ON p.relation = adm.patient_rel AND {_concept_join(obj)}
            WHERE p.atom_id IN (SELECT atom_id FROM patient_atoms)
              AND t.unit IS NOT NULL AND p.unit IS NOT NULL AND t.unit != p.unit''')
    query = "WITH " + ",\n".join(ctes) + "\n" + "\nUNION ALL\n".join(clash) + "\nLIMIT 1"
    row = h.conn.execute(query, params).fetchone()
    if row is not None:
        raise UnitMismatch(f"{row['relation']}({row['concept']}): {row['t_unit']} vs {row['p_unit']}")


def _pair_ctes(obj: ObjectiveConfig, source: str, knockout: bool) -> List[str]:
    if knockout:
        time_ab = f"contains({int(obj.strict_containment)}, {TRIAL_WINDOW}, p.cert_lo, p.cert_hi, p.cert_lo_incl, p.cert_hi_incl)"
        polarity = "t.polarity = 0"
    else:
        time_ab = f"time_overlaps({TRIAL_WINDOW}, p.win_lo, p.win_hi, p.win_lo_incl, p.win_hi_incl)"
        polarity = "t.polarity = 1"
    prefix = "ko_" if knockout else ""
    ctes = [f'''{prefix}bool_pairs AS (
        SELECT DISTINCT t.atom_id AS t_atom, p.atom_id AS p_atom
        FROM (SELECT DISTINCT atom_id FROM {source}) ta
        JOIN AB t ON t.atom_id = ta.atom_id
        JOIN ADMISSIBLE adm ON adm.trial_rel = t.relation
        JOIN AB p ON p.relation = adm.patient_rel AND {_concept_join(obj)}
        WHERE p.atom_id IN (SELECT atom_id FROM patient_atoms)
          AND {polarity} AND p.polarity = 1 AND p.bool_target = t.bool_target
          AND {UNITS_EQUAL} AND {QUALIFIER_SUBSET}
          AND {time_ab})''']
    if not knockout:
        ctes.append(f'''num_pairs AS (
        SELECT DISTINCT t.atom_id AS t_atom, p.atom_id AS p_atom
        FROM (SELECT DISTINCT atom_id FROM {source}) ta
        JOIN AN t ON t.atom_id = ta.atom_id
        JOIN ADMISSIBLE adm ON adm.trial_rel = t.relation
        JOIN AN p ON p.relation = adm.patient_rel AND {_concept_join(obj)}
        WHERE p.atom_id IN (SELECT atom_id FROM patient_atoms)
          AND t.polarity = 1 AND p.polarity = 1 AND t.cmp != 'NE'
          AND {UNITS_EQUAL} AND {QUALIFIER_SUBSET}
          AND {time_ab}
          AND interval_meets(t.lower, t.upper, t.lower_incl, t.upper_incl,
                             p.lower, p.upper, p.lower_incl, p.upper_incl))''')
    return ctes


def retrieve_sql(h: StoreHandle, o: Ontology, obj: ObjectiveConfig,
                 patients: Optional[Sequence[str]] = None) -> List[MatchResult]:
    if obj.subsumption_fallback:
        _register_ontology(h.conn, o)
    roles = ("RetrievalRelevant", "Knockout") if obj.enforce_knockouts else ("RetrievalRelevant",)
    _check_units(h, o, obj, patients, roles)

    ctes, params = _common_ctes(o, obj, patients)
    ctes.append("trials AS (SELECT DISTINCT entity_id AS trial_id, subcohort FROM ECNF WHERE entity_kind = 'Trial')")
    ctes.append(_trial_clause_cte("RetrievalRelevant", "relevant_lits", "AND e.side = 'Inclusion'"))
    ctes.append('''relevant_clauses AS (
        SELECT e.entity_id AS trial_id, e.subcohort, c.clause_id
        FROM ECNF e JOIN CNFD c ON c.cnf_id = e.cnf_id
        WHERE e.entity_kind = 'Trial' AND e.side = 'Inclusion' AND c.clause_role = 'RetrievalRelevant')''')
    ctes += _pair_ctes(obj, "relevant_lits", knockout=False)
    ctes.append("pairs AS (SELECT t_atom, p_atom FROM bool_pairs UNION SELECT t_atom, p_atom FROM num_pairs)")
    ctes.append('''supported AS (
        SELECT DISTINCT rl.trial_id, rl.subcohort, pa.patient_id, rl.clause_id
        FROM relevant_lits rl JOIN pairs ON pairs.t_atom = rl.atom_id
        JOIN patient_atoms pa ON pa.atom_id = pairs.p_atom)''')
    ctes.append('''relevant AS (
        SELECT tr.trial_id, tr.subcohort, COUNT(rc.clause_id) AS n
        FROM trials tr LEFT JOIN relevant_clauses rc
          ON rc.trial_id = tr.trial_id AND rc.subcohort = tr.subcohort
        GROUP BY tr.trial_id, tr.subcohort)''')
    ctes.append('''counts AS (
        SELECT trial_id, subcohort, patient_id, COUNT(*) AS n
        FROM supported GROUP BY trial_id, subcohort, patient_id)''')
    query = "WITH " + ",\n".join(ctes) + '''
        SELECT r.trial_id, r.subcohort, ps.patient_id, COALESCE(c.n, 0) AS supported, r.n AS relevant
        FROM relevant r CROSS JOIN patients ps
        LEFT JOIN counts c ON c.trial_id = r.trial_id AND c.subcohort = r.subcohort
                          AND c.patient_id = ps.patient_id
        WHERE COALESCE(c.n, 0) = r.n
        ORDER BY ps.patient_id, r.trial_id, r.subcohort'''
    results = [MatchResult(row["trial_id"], row["subcohort"], row["patient_id"], row["supported"], row["relevant"])
               for row in h.conn.execute(query, params)]

    if obj.enforce_knockouts:
        knocked = knocked_out_sql(h, o, obj, patients)
        results = [r for r in results if r.key not in knocked]
    return results


def knocked_out_sql(h: StoreHandle, o: Ontology, obj: ObjectiveConfig,
                    patients: Optional[Sequence[str]] = None) -> set:
    """(trial, subcohort, paciente) con algún knockout cierto"""
    if obj.subsumption_fallback:
        _register_ontology(h.conn, o)
    ctes, params = _common_ctes(o, obj, patients)
    ctes.append(_trial_clause_cte("Knockout", "knockout_lits"))
    ctes += _pair_ctes(obj, "knockout_lits", knockout=True)
    query = "WITH " + ",\n".join(ctes) + '''
        SELECT DISTINCT kl.trial_id, kl.subcohort, pa.patient_id
        FROM knockout_lits kl JOIN ko_bool_pairs kp ON kp.t_atom = kl.atom_id
        JOIN patient_atoms pa ON pa.atom_id = kp.p_atom'''
    return {(row[0], row[1], row[2]) for row in h.conn.execute(query, params)}


# === MOTOR EN MEMORIA ===

class MemoryIndex:
    """Literales de pacientes indexados por (relación, concepto)"""

    def __init__(self, patient_gates: Iterable[GateCNF]):
        self.patients: List[str] = []
        self.by_key: Dict[Tuple[str, str], List[Tuple[str, Literal]]] = {}
        self.by_relation: Dict[str, List[Tuple[str, Literal]]] = {}
        for g in sorted(patient_gates, key=lambda g: g.entity_id):
            if g.entity_id not in self.patients:
                self.patients.append(g.entity_id)
            for clause in g.clauses:
                for lit in clause.literals:
                    p = lit.constraint.predicate
                    self.by_key.setdefault((p.relation, p.concept), []).append((g.entity_id, lit))
                    self.by_relation.setdefault(p.relation, []).append((g.entity_id, lit))

    def candidates(self, trial: Literal, patient_relations: Iterable[str], fallback: bool):
        p = trial.constraint.predicate
        for rel in patient_relations:
            if fallback:
                yield from self.by_relation.get(rel, ())
            else:
                yield from self.by_key.get((rel, p.concept), ())


def _trial_units(trial_gates: Iterable[GateCNF]) -> Dict[Tuple[str, str], List[GateCNF]]:
    units: Dict[Tuple[str, str], List[GateCNF]] = {}
    for g in trial_gates:
        units.setdefault((g.entity_id, g.subcohort), []).append(g)
    return units


def clause_support(clause: GateClause, index: MemoryIndex, o: Ontology, obj: ObjectiveConfig,
                   admissible: FrozenSet, knockout: bool = False) -> Dict[str, List[Tuple[Literal, Literal]]]:
    """paciente → pares (literal del ensayo, literal del paciente) que soportan (o disparan) la cláusula"""
    by_trial_rel: Dict[str, List[str]] = {}
    for t_rel, p_rel in admissible:
        by_trial_rel.setdefault(t_rel, []).append(p_rel)
    out: Dict[str, List[Tuple[Literal, Literal]]] = {}
    for lit in clause.literals:
        if lit.positive == knockout:
            continue
        rels = sorted(by_trial_rel.get(lit.constraint.predicate.relation, ()))
        for patient_id, plit in index.candidates(lit, rels, obj.subsumption_fallback):
            if atoms_compatible(lit, plit, o, obj, knockout=knockout, admissible=admissible):
                out.setdefault(patient_id, []).append((lit, plit))
    return out


def retrieve_memory(trial_gates: Iterable[GateCNF], patient_gates: Iterable[GateCNF], o: Ontology,
                    obj: ObjectiveConfig, patients: Optional[Sequence[str]] = None) -> List[MatchResult]:
    """Mismo plan que retrieve_sql, con hash-joins en memoria"""
    patient_gates = [g for g in patient_gates if patients is None or g.entity_id in set(patients)]
    index = MemoryIndex(patient_gates)
    admissible = admissible_pairs(o, obj)
    results = []
    for (trial_id, subcohort), gates in sorted(_trial_units(trial_gates).items()):
        relevant = [c for g in gates if g.side == "Inclusion" for c in g.relevant]
        counts = {pid: 0 for pid in index.patients}
        for clause in relevant:
            for pid in clause_support(clause, index, o, obj, admissible):
                counts[pid] += 1
        matched = {pid for pid, n in counts.items() if n == len(relevant)}
        if obj.enforce_knockouts:
            for g in gates:
                for clause in g.knockouts:
                    matched -= set(clause_support(clause, index, o, obj, admissible, knockout=True))
        results += [MatchResult(trial_id, subcohort, pid, len(relevant), len(relevant)) for pid in matched]
    return _sort(results)


# === ENTRADA PRINCIPAL ===

def retrieve(h: StoreHandle, o: Ontology, obj: ObjectiveConfig, patients: Optional[Sequence[str]] = None,
             engine: str = "sql", workers: int = 1) -> List[MatchResult]:
    """
    Todos los pares (ensayo, subcohorte, paciente) con todas sus cláusulas
    relevantes soportadas (y sin knockouts ciertos si el objetivo los aplica).

    Con workers > 1 cada paciente (los filtrados o todos los del store) se
    consulta en su propia conexión de sólo lectura; la salida se ordena igual.
    """
    if engine == "memory":
        results = retrieve_memory(dump_all(h, "Trial"), dump_all(h, "Patient"), o, obj, patients)
    elif engine != "sql":
        raise RetrievalError(f"motor desconocido: {engine!r}")
    else:
        ids = sorted(set(patients if patients is not None else entity_ids(h))) if workers > 1 else []
        results = _retrieve_parallel(h, o, obj, ids, workers) if len(ids) > 1 else retrieve_sql(h, o, obj, patients)
    results = _sort(results)
    logger.debug(f"retrieve[{obj.name}/{engine}]: {len(results)} pares")
    return results


def _retrieve_parallel(h: StoreHandle, o: Ontology, obj: ObjectiveConfig, patients: Sequence[str],
                       workers: int) -> List[MatchResult]:
    def one(pid: str) -> List[MatchResult]:
        conn = get_connection(h.path, read_only=True)
        try:
            return retrieve_sql(StoreHandle(h.path, conn), o, obj, [pid])
        finally:
            conn.close()

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return [r for part in pool.map(one, patients) for r in part]


# === EXPLICACIONES ===

def _literal_text(lit: Literal) -> str:
    c = lit.constraint
    sign = "" if lit.positive else "¬"
    if c.is_numeric:
        target = c.target
        if isinstance(target, Interval):
            value = f"[{target.lower}, {target.upper}]" if target.lower != target.upper else str(target.lower)
        else:
            value = str(target.value)
        return f"{sign}{c.predicate.render()} {c.cmp.symbol} {value} @{lit.window.render()}"
    value = "" if c.target is True else "=false"
    return f"{sign}{c.predicate.render()}{value} @{lit.window.render()}"


def explain(h: StoreHandle, o: Ontology, trial_id: str, patient_id: str, obj: ObjectiveConfig,
            subcohort: Optional[str] = None) -> dict:
    """
    Estado por cláusula: soportada (con pares de átomos), no soportada o knockout.

    Raises:
        UnknownEntity
    """
    gates = [g for g in entity_gates(h, trial_id, "Trial") if subcohort is None or g.subcohort == subcohort]
    if not gates:
        raise UnknownEntity(f"subcohorte desconocida: {trial_id}/{subcohort}")
    patient = entity_gates(h, patient_id, "Patient")
    index = MemoryIndex(patient)
    admissible = admissible_pairs(o, obj)

    clauses = []
    first_unsupported = None
    for g in gates:
        if g.side != "Inclusion":
            continue
        for i, clause in enumerate(g.relevant):
            pairs = clause_support(clause, index, o, obj, admissible).get(patient_id, [])
            entry = {
                "clause": f"{g.owner}#{i}",
                "origin": clause.origin,
                "literals": [_literal_text(l) for l in clause.literals],
                "status": "supported" if pairs else "unsupported",
                "supported_by": [{"trial": _literal_text(t), "patient": _literal_text(p)} for t, p in pairs],
            }
            if not pairs and first_unsupported is None:
                first_unsupported = entry["clause"]
            clauses.append(entry)

    knockouts = []
    if obj.enforce_knockouts:
        for g in gates:
            for clause in g.knockouts:
                for t, p in clause_support(clause, index, o, obj, admissible, knockout=True).get(patient_id, []):
                    knockouts.append({
                        "clause": clause.origin,
                        "trial": _literal_text(t),
                        "patient": _literal_text(p),
                        "criterion_window": t.window.render(),
                        "patient_cert_window": p.cert_window.render(),
                    })

    if knockouts:
        status = "knocked-out"
    elif first_unsupported is not None:
        status = "filtered"
    else:
        status = "retrieved"
    return {
        "trial_id": trial_id,
        "subcohort": subcohort or gates[0].subcohort,
        "patient_id": patient_id,
        "objective": obj.name,
        "status": status,
        "first_unsupported": first_unsupported,
        "clauses": clauses,
        "knockouts": knockouts,
    }


def render_explanation(report: dict) -> str:
    icons = {"retrieved": "✅", "filtered": "⏳", "knocked-out": "❌"}
    lines = [f"{icons.get(report['status'], '•')} {report['trial_id']}/{report['subcohort']} × "
             f"{report['patient_id']} [{report['objective']}]: {report['status']}"]
    for c in report["clauses"]:
        mark = "✅" if c["status"] == "supported" else "❌"
        lines.append(f"   {mark} {c['clause']} ({c['origin']}): {' ∨ '.join(c['literals']) or '⊥'}")
        for pair in c["supported_by"]:
            lines.append(f"      ← {pair['patient']}")
    for k in report["knockouts"]:
        lines.append(f"   ❌ knockout {k['clause']}: {k['patient']} cierto en {k['patient_cert_window']} "
                     f"⊆ {k['criterion_window']}")
    return "\n".join(lines)
