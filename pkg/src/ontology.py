"""
Ontología médica: conceptos, jerarquía is-a, subsunción de relaciones y
aristas causales (relación, concepto) → (relación, concepto).

Formato de entrada: JSONL, un registro por línea (ver docs/formats.md).
"""
import hashlib
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from src.errors import CycleError, DanglingRefError, ParseError
from src.naming import BUILTIN_CONCEPTS, MEDICAL_RELATIONS, PATIENT_FACT_RELATIONS, TRIAL_INTENTS


logger = logging.getLogger(__name__)

MAPPINGS_PATH = Path(__file__).parent.parent / "data" / "interpretation_mappings.json"

FAMILIES = ("Medical", "PatientFact", "TrialIntent")

BUILTIN_RELATIONS: Dict[str, str] = {
    **{r: "Medical" for r in MEDICAL_RELATIONS},
    **{r: "TrialIntent" for r in TRIAL_INTENTS},
    **{r: "PatientFact" for r in PATIENT_FACT_RELATIONS},
}

# specific → general
BUILTIN_RELSUB: Tuple[Tuple[str, str], ...] = (
    ("HasDiagnosisOf", "HasFindingOf"),
    ("HasSymptomsOf", "HasFindingOf"),
    ("HasClinicalSignsOf", "HasFindingOf"),
    ("HasAllergyTo", "HasHypersensitivityTo"),
    ("HasNonimmuneHypersensitivityTo", "HasHypersensitivityTo"),
    ("IsUndergoing", "HasUndergone"),
)

# Relación destino → tabla de interpretación
INTERPRETATION_TABLES = {
    "HasObservableStatus": "finding_to_observable",
    "HasUndergone": "finding_to_procedure",
}


@dataclass(frozen=True)
class CausalEdge:
    src_rel: str
    src_con: str
    dst_rel: str
    dst_con: str
    # estados (positive/negative/normal/abnormal) por lado; vacío = sin refinamiento
    statuses: Tuple[str, ...] = ()
    exclusion_statuses: Tuple[str, ...] = ()
    interpretation: Optional[str] = None

    @property
    def id(self) -> str:
        return f"{self.src_rel}:{self.src_con}->{self.dst_rel}:{self.dst_con}"


@dataclass(frozen=True, eq=False)
class Ontology:
    concepts: FrozenSet[str] = frozenset()
    isa_edges: Tuple[Tuple[str, str], ...] = ()          # (child, parent)
    relations: Dict[str, str] = field(default_factory=lambda: dict(BUILTIN_RELATIONS))
    relation_sub: Tuple[Tuple[str, str], ...] = BUILTIN_RELSUB   # (specific, general)
    causal_sub: Tuple[CausalEdge, ...] = ()
    relation_rules: Tuple = ()
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    # === DECLARACIONES ===

    def has_concept(self, concept: str) -> bool:
        return concept in self.concepts or concept in BUILTIN_CONCEPTS

    def has_relation(self, relation: str) -> bool:
        return relation in self.relations

    def family(self, relation: str) -> str:
        self._require_relation(relation)
        return self.relations[relation]

    def _require_concept(self, concept: str):
        if not self.has_concept(concept):
            raise DanglingRefError(f"concepto no declarado: {concept!r}")

    def _require_relation(self, relation: str):
        if not self.has_relation(relation):
            raise DanglingRefError(f"relación no declarada: {relation!r}")

    # === ÍNDICES (perezosos) ===

    def _index(self, name: str, edges: Iterable[Tuple[str, str]]) -> Dict[str, Tuple[str, ...]]:
        if name not in self._cache:
            index: Dict[str, List[str]] = {}
            for a, b in edges:
                index.setdefault(a, []).append(b)
            self._cache[name] = {k: tuple(sorted(v)) for k, v in index.items()}
        return self._cache[name]

    @property
    def parents(self) -> Dict[str, Tuple[str, ...]]:
        return self._index("parents", self.isa_edges)

    @property
    def children(self) -> Dict[str, Tuple[str, ...]]:
        return self._index("children", ((p, c) for c, p in self.isa_edges))

    @property
    def relation_parents(self) -> Dict[str, Tuple[str, ...]]:
        return self._index("relation_parents", self.relation_sub)

    @property
    def causal_from(self) -> Dict[Tuple[str, str], Tuple[CausalEdge, ...]]:
        if "causal_from" not in self._cache:
            index: Dict[Tuple[str, str], List[CausalEdge]] = {}
            for edge in self.causal_sub:
                index.setdefault((edge.src_rel, edge.src_con), []).append(edge)
            self._cache["causal_from"] = {k: tuple(v) for k, v in index.items()}
        return self._cache["causal_from"]


def _reach(start: str, graph: Dict[str, Tuple[str, ...]], max_hops: Optional[int] = None) -> Dict[str, int]:
    """BFS: nodo alcanzado → saltos mínimos (sin incluir el inicio)"""
    seen = {start: 0}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        hops = seen[node]
        if max_hops is not None and hops >= max_hops:
            continue
        for nxt in graph.get(node, ()):
            if nxt not in seen:
                seen[nxt] = hops + 1
                queue.append(nxt)
    del seen[start]
    return seen


def ancestors(o: Ontology, concept: str, max_hops: Optional[int] = None) -> Dict[str, int]:
    o._require_concept(concept)
    if max_hops is None:
        key = ("ancestors", concept)
        if key not in o._cache:
            o._cache[key] = _reach(concept, o.parents)
        return o._cache[key]
    return _reach(concept, o.parents, max_hops)


def descendants(o: Ontology, concept: str, max_hops: Optional[int] = None) -> Dict[str, int]:
    o._require_concept(concept)
    return _reach(concept, o.children, max_hops)


def concept_subsumes(o: Ontology, ancestor: str, descendant: str) -> bool:
    """ancestor ⊒_K descendant (reflexiva)"""
    o._require_concept(ancestor)
    o._require_concept(descendant)
    return ancestor == descendant or ancestor in ancestors(o, descendant)


def relation_subsumes(o: Ontology, general: str, specific: str) -> bool:
    """general ⊒_R specific (reflexiva y transitiva)"""
    o._require_relation(general)
    o._require_relation(specific)
    if general == specific:
        return True
    key = ("relation_ancestors", specific)
    if key not in o._cache:
        o._cache[key] = _reach(specific, o.relation_parents)
    return general in o._cache[key]


def causal_supports(o: Ontology, source: Tuple[str, str], target: Tuple[str, str]) -> bool:
    """source ⊑_causal target: arista directa o igualdad"""
    for rel, con in (source, target):
        o._require_relation(rel)
        o._require_concept(con)
    if source == target:
        return True
    return any((e.dst_rel, e.dst_con) == tuple(target) for e in o.causal_from.get(tuple(source), ()))


def causal_supports_composed(o: Ontology, source: Tuple[str, str], target: Tuple[str, str]) -> bool:
    """Arista causal seguida de generalización is-a del concepto destino"""
    if causal_supports(o, source, target):
        return True
    rel, con = target
    return any(
        e.dst_rel == rel and concept_subsumes(o, con, e.dst_con)
        for e in o.causal_from.get(tuple(source), ())
    )


# === CARGA ===

def load_interpretation_mappings(path: Path = MAPPINGS_PATH) -> Dict[str, Dict[str, dict]]:
    """Tablas curadas término de interpretación → estados (columnas inclusión/exclusión)"""
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    tables = {}
    for table, rows in raw.items():
        tables[table] = {row["term"].strip().lower(): row for row in rows}
    return tables


def _resolve_interpretation(record: dict, tables: dict, line: int) -> Tuple[Tuple[str, ...], Tuple[str, ...]]:
    table_name = INTERPRETATION_TABLES.get(record["dst_rel"])
    if table_name is None:
        raise ParseError(f"interpretación sin tabla para {record['dst_rel']!r}", line)
    row = tables.get(table_name, {}).get(str(record["interpretation"]).strip().lower())
    if row is None:
        raise ParseError(f"interpretación desconocida: {record['interpretation']!r}", line)
    return tuple(row.get("inclusion", [])), tuple(row.get("exclusion", []))


def parse_ontology(lines: Iterable[str], mappings: Optional[dict] = None) -> Ontology:
    concepts = set()
    isa, relsub = [], list(BUILTIN_RELSUB)
    relations = dict(BUILTIN_RELATIONS)
    causal = []

    for n, raw in enumerate(lines, start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ParseError(f"JSON inválido: {e.msg}", n, e.colno)
        if not isinstance(record, dict) or "type" not in record:
            raise ParseError("registro sin campo 'type'", n)

        kind = record["type"]
        try:
            if kind == "concept":
                cid = record["id"]
                if not isinstance(cid, str) or not cid:
                    raise ParseError("id de concepto vacío", n)
                if cid in concepts:
                    raise ParseError(f"concepto duplicado: {cid!r}", n)
                concepts.add(cid)
            elif kind == "isa":
                isa.append((record["child"], record["parent"], n))
            elif kind == "relsub":
                relsub.append((record["specific"], record["general"]))
            elif kind == "relation":
                family = record.get("family")
                if family not in FAMILIES:
                    raise ParseError(f"familia de relación inválida: {family!r}", n)
                previous = relations.get(record["id"])
                if previous is not None and previous != family:
                    raise ParseError(f"{record['id']} ya pertenece a {previous}", n)
                relations[record["id"]] = family
            elif kind == "causal":
                statuses, exclusion = (), ()
                if record.get("status"):
                    statuses = exclusion = (record["status"],)
                elif record.get("interpretation"):
                    if mappings is None:
                        mappings = load_interpretation_mappings()
                    statuses, exclusion = _resolve_interpretation(record, mappings, n)
                causal.append((CausalEdge(
                    record["src_rel"], record["src_con"], record["dst_rel"], record["dst_con"],
                    statuses, exclusion, record.get("interpretation"),
                ), n))
            else:
                raise ParseError(f"tipo de registro desconocido: {kind!r}", n)
        except KeyError as e:
            raise ParseError(f"falta el campo {e.args[0]!r} en registro {kind}", n)

    declared = concepts | set(BUILTIN_CONCEPTS)
    for child, parent, n in isa:
        for c in (child, parent):
            if c not in declared:
                raise DanglingRefError(f"isa hacia concepto no declarado: {c!r}", n)
    for specific, general in relsub:
        for r in (specific, general):
            if r not in relations:
                raise DanglingRefError(f"relsub hacia relación no declarada: {r!r}")
    for edge, n in causal:
        for r in (edge.src_rel, edge.dst_rel):
            if r not in relations:
                raise DanglingRefError(f"arista causal con relación no declarada: {r!r}", n)
        for c in (edge.src_con, edge.dst_con):
            if c not in declared:
                raise DanglingRefError(f"arista causal con concepto no declarado: {c!r}", n)

    isa_edges = tuple(sorted({(c, p) for c, p, _ in isa}))
    _check_acyclic(isa_edges)

    ontology = Ontology(
        concepts=frozenset(concepts),
        isa_edges=isa_edges,
        relations=relations,
        relation_sub=tuple(sorted(set(relsub))),
        causal_sub=tuple(sorted({e for e, _ in causal}, key=lambda e: (e.id, e.statuses))),
    )
    logger.debug(f"ontología: {len(concepts)} conceptos, {len(isa_edges)} isa, {len(causal)} causales")
    return ontology


def load_ontology(path, mappings: Optional[dict] = None) -> Ontology:
    """
    Carga y valida una ontología JSONL.

    Raises:
        ParseError: línea mal formada
        CycleError: ciclo en la jerarquía is-a
        DanglingRefError: arista hacia un id no declarado
    """
    with open(path, "r", encoding="utf-8") as f:
        return parse_ontology(f, mappings)


def _check_acyclic(edges: Tuple[Tuple[str, str], ...]):
    graph: Dict[str, List[str]] = {}
    for child, parent in edges:
        graph.setdefault(child, []).append(parent)

    WHITE, GREY, BLACK = 0, 1, 2
    color: Dict[str, int] = {}
    for root in sorted(graph):
        if color.get(root, WHITE) != WHITE:
            continue
        stack = [(root, iter(graph.get(root, ())))]
        color[root] = GREY
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = BLACK
                stack.pop()
            elif color.get(nxt, WHITE) == GREY:
                raise CycleError(f"ciclo is-a que pasa por {nxt!r} y {node!r}")
            elif color.get(nxt, WHITE) == WHITE:
                color[nxt] = GREY
                stack.append((nxt, iter(graph.get(nxt, ()))))


def ontology_digest(o: Ontology) -> str:
    """sha256 de la serialización canónica"""
    canonical = {
        "concepts": sorted(o.concepts),
        "isa": [list(e) for e in o.isa_edges],
        "relations": sorted(o.relations.items()),
        "relsub": [list(e) for e in o.relation_sub],
        "causal": [[e.src_rel, e.src_con, e.dst_rel, e.dst_con, list(e.statuses), list(e.exclusion_statuses)]
                   for e in o.causal_sub],
    }
    blob = json.dumps(canonical, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()
