"""
Clausura de implicación sobre hechos del paciente.

Tres etapas por pasada, en orden fijo: conceptos (is-a), reglas de relación
(inventario JSON) y aristas causales. Cada etapa es unaria, así que cada
pasada sólo reprocesa la frontera (hechos nuevos de la pasada anterior);
las salidas de una pasada alimentan a todas las etapas de la siguiente.
"""
import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from src.errors import NamingError, TemplateBindError
from src.naming import (
    FIXED_CONCEPT_RELATIONS, for_predicate, parse_variable_name, render_variable_name, with_concept,
)
from src.ontology import Ontology, ancestors, descendants
from src.smt_frontend import PatientFactRecord


logger = logging.getLogger(__name__)

RULES_PATH = Path(__file__).parent.parent / "data" / "relation_rules.json"

HOLE_RE = re.compile(r"\{(e|t)\}")
ENTITY_RE = r"[a-z0-9]+(?:_[a-z0-9]+)*?"
TIMEFRAME_RE = r"now|inthehistory|inthefuture(?:[1-9][0-9]*[a-z]+)?|inthepast[1-9][0-9]*[a-z]+|foradurationof[1-9][0-9]*[a-z]+"


@dataclass(frozen=True)
class ClosureConfig:
    max_passes: int = 6
    max_hops_concept: int = 8
    max_derived_per_pass: int = 20000
    enable_negative_descendants: bool = False

    def __post_init__(self):
        for name in ("max_passes", "max_hops_concept", "max_derived_per_pass"):
            if getattr(self, name) <= 0:
                raise ValueError(f"ClosureConfig.{name} debe ser positivo")

    @classmethod
    def from_dict(cls, raw: dict) -> "ClosureConfig":
        known = {k: raw[k] for k in ("max_passes", "max_hops_concept", "max_derived_per_pass",
                                     "enable_negative_descendants") if k in raw}
        return cls(**known)


@dataclass(frozen=True)
class ProduceSpec:
    template: str
    sort: str
    value: bool
    preserve_qualifiers: bool = True


@dataclass(frozen=True)
class RelationRule:
    id: str
    match_template: str
    require_bool: bool
    produce: Tuple[ProduceSpec, ...]
    pattern: "re.Pattern" = field(default=None, compare=False, repr=False)

    def bind(self, stem: str) -> Optional[Dict[str, Optional[str]]]:
        """Liga los huecos {e},{t} contra un nombre sin calificadores"""
        m = self.pattern.match(stem)
        if not m:
            return None
        binding: Dict[str, Optional[str]] = {}
        for group, value in m.groupdict().items():
            hole = group.split("__")[0]
            if hole in binding and binding[hole] != value:
                raise TemplateBindError(f"regla {self.id}: {{{hole}}} ligado a {binding[hole]!r} y {value!r}")
            binding[hole] = value
        return binding


def compile_template(template: str) -> "re.Pattern":
    """
    `patient_has_finding_of_{e}_{t}` → regex con grupos e__0, t__0.
    El hueco {t} es opcional junto con su guion bajo.
    """
    out, pos, seen = [], 0, {"e": 0, "t": 0}
    text = template
    while True:
        m = HOLE_RE.search(text, pos)
        if not m:
            out.append(re.escape(text[pos:]))
            break
        hole = m.group(1)
        start = m.start()
        group = f"{hole}__{seen[hole]}"
        seen[hole] += 1
        if hole == "t" and start > 0 and text[start - 1] == "_":
            out.append(re.escape(text[pos:start - 1]))
            out.append(f"(?:_(?P<{group}>{TIMEFRAME_RE}))?")
        else:
            out.append(re.escape(text[pos:start]))
            out.append(f"(?P<{group}>{ENTITY_RE if hole == 'e' else TIMEFRAME_RE})")
        pos = m.end()
    return re.compile("^" + "".join(out) + "$")


def fill_template(template: str, binding: Dict[str, Optional[str]]) -> str:
    text = template
    if binding.get("t") is None:
        text = text.replace("_{t}", "").replace("{t}", "")
    return text.replace("{e}", binding.get("e") or "").replace("{t}", binding.get("t") or "")


def _validate_template(rule_id: str, template: str):
    sample = fill_template(template, {"e": "sample_entity", "t": "now"})
    try:
        parse_variable_name(sample)
    except NamingError as e:
        raise TemplateBindError(f"regla {rule_id}: la plantilla {template!r} no respeta la gramática ({e})")


def parse_relation_rules(raw: dict) -> Tuple[RelationRule, ...]:
    if raw.get("timeframe_implication", {}).get("collapse_timeframes"):
        logger.warning("collapse_timeframes=true no está soportado; las ventanas se preservan")
    rules = []
    for item in raw.get("rules", []):
        _validate_template(item["id"], item["match_template"])
        produce = []
        for p in item["produce"]:
            _validate_template(item["id"], p["template"])
            produce.append(ProduceSpec(p["template"], p.get("type", "Bool"), bool(p["value"]),
                                       bool(p.get("preserve_qualifiers", True))))
        rules.append(RelationRule(item["id"], item["match_template"], bool(item.get("require_bool", True)),
                                  tuple(produce), compile_template(item["match_template"])))
    return tuple(rules)


def load_relation_rules(path=RULES_PATH) -> Tuple[RelationRule, ...]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_relation_rules(json.load(f))


# === ETAPAS ===

def _concept_hops(fact: PatientFactRecord) -> int:
    if fact.provenance and fact.provenance[1] == "isa":
        return fact.provenance[2]
    return 0


def concept_closure(facts: Iterable[PatientFactRecord], o: Ontology, cfg: ClosureConfig) -> List[PatientFactRecord]:
    """Hechos ancestro (mismas relación, calificadores y ventanas) por cada hecho positivo"""
    derived = []
    for fact in facts:
        if fact.is_numeric:
            continue
        v = fact.variable
        if v.relation in FIXED_CONCEPT_RELATIONS or not o.has_concept(v.concept):
            continue
        used = _concept_hops(fact)
        budget = cfg.max_hops_concept - used
        if budget <= 0:
            continue
        if fact.value is True:
            related = ancestors(o, v.concept, budget)
        elif cfg.enable_negative_descendants:
            related = descendants(o, v.concept, budget)
        else:
            continue
        for concept, hops in sorted(related.items()):
            derived.append(replace(
                fact, variable=with_concept(v, concept),
                provenance=(fact.dedup_key, "isa", used + hops),
            ))
    return derived


def rule_closure(facts: Iterable[PatientFactRecord], rules: Iterable[RelationRule]) -> List[PatientFactRecord]:
    derived = []
    rules = tuple(rules)
    for fact in facts:
        if fact.is_numeric:
            continue
        stem = fact.variable.stem
        for rule in rules:
            if fact.value is not rule.require_bool:
                continue
            binding = rule.bind(stem)
            if binding is None:
                continue
            for spec in rule.produce:
                name = fill_template(spec.template, binding)
                try:
                    variable = parse_variable_name(name)
                except NamingError as e:
                    raise TemplateBindError(f"regla {rule.id}: {name!r} no es un nombre válido ({e})")
                if spec.preserve_qualifiers:
                    variable = replace(variable, free_qualifiers=fact.variable.free_qualifiers)
                derived.append(replace(
                    fact, variable=variable, value=spec.value,
                    provenance=(fact.dedup_key, f"rule:{rule.id}", 0),
                ))
    return derived


def causal_closure(facts: Iterable[PatientFactRecord], o: Ontology, side: str = "inclusion") -> List[PatientFactRecord]:
    """(r,k) → (r',k') por aristas causales; los estados refinan a outcome/status"""
    derived = []
    for fact in facts:
        if fact.is_numeric or fact.value is not True:
            continue
        v = fact.variable
        for edge in o.causal_from.get((v.relation, v.concept), ()):
            statuses = edge.statuses if side == "inclusion" else edge.exclusion_statuses
            outcomes = list(statuses) or [None]
            for outcome in outcomes:
                if edge.dst_rel == "HasObservableStatus" and outcome is None:
                    continue
                if edge.dst_rel not in ("HasObservableStatus", "HasUndergone"):
                    outcome = None
                try:
                    variable = for_predicate(edge.dst_rel, edge.dst_con, v.timeframe, outcome, v.free_qualifiers)
                except NamingError as e:
                    logger.warning(f"arista {edge.id} sin plantilla ({e}); se omite")
                    continue
                derived.append(replace(
                    fact, variable=variable,
                    provenance=(fact.dedup_key, f"causal:{edge.id}:{outcome or ''}", 0),
                ))
    return derived


def derive_once(facts: List[PatientFactRecord], o: Ontology, rules, cfg: ClosureConfig,
                side: str = "inclusion") -> List[PatientFactRecord]:
    """Una pasada de las tres etapas sobre `facts`"""
    return concept_closure(facts, o, cfg) + rule_closure(facts, rules) + causal_closure(facts, o, side)


def _order(fact: PatientFactRecord):
    # empate de DedupKey: gana el menor valor (False antes que True)
    return fact.dedup_key, fact.value


@dataclass
class ClosureResult:
    facts: List[PatientFactRecord]
    passes: int = 0
    fixpoint: bool = False
    truncated: int = 0
    derived: int = 0
    per_pass: List[int] = field(default_factory=list)


def run_closure(facts: Iterable[PatientFactRecord], o: Ontology, rules=(), cfg: Optional[ClosureConfig] = None,
                side: str = "inclusion") -> ClosureResult:
    """
    Clausura multipasada hasta punto fijo o max_passes.

    Returns:
        ClosureResult con los hechos (entrada ∪ derivados) ordenados por DedupKey
        y los derivados de cada pasada en per_pass. Ante claves repetidas gana el
        menor valor (False antes que True); un hecho ya conocido no se reemplaza.
    """
    cfg = cfg or ClosureConfig()
    known: Dict[Tuple, PatientFactRecord] = {}
    for fact in sorted(facts, key=_order):
        known.setdefault(fact.dedup_key, fact)

    result = ClosureResult(facts=[])
    frontier = sorted(known.values(), key=_order)
    while frontier and result.passes < cfg.max_passes:
        result.passes += 1
        new, dropped = [], 0
        for fact in sorted(derive_once(frontier, o, rules, cfg, side), key=_order):
            if fact.dedup_key in known:
                continue
            if len(new) >= cfg.max_derived_per_pass:
                dropped += 1
                continue
            known[fact.dedup_key] = fact
            new.append(fact)
        if dropped:
            logger.warning(f"clausura: pasada {result.passes} truncada en {len(new)} derivados, "
                           f"{dropped} descartados")
        else:
            logger.debug(f"clausura: pasada {result.passes}, {len(new)} derivados")
        result.truncated += dropped
        result.per_pass.append(len(new))
        result.derived += len(new)
        frontier = new
    result.fixpoint = not frontier
    result.facts = sorted(known.values(), key=_order)
    logger.debug(f"clausura: {result.derived} derivados en {result.passes} pasadas (punto fijo={result.fixpoint})")
    return result


def replay(fact: PatientFactRecord, facts_by_key: Dict[Tuple, PatientFactRecord], o: Ontology, rules,
           cfg: Optional[ClosureConfig] = None, side: str = "inclusion") -> bool:
    """Rehace la cadena de procedencia de un hecho derivado hasta un hecho observado"""
    cfg = cfg or ClosureConfig()
    seen = set()
    while fact.provenance:
        source_key, step, _ = fact.provenance
        if source_key in seen or source_key not in facts_by_key:
            return False
        seen.add(source_key)
        source = facts_by_key[source_key]
        if step == "isa":
            candidates = concept_closure([source], o, cfg)
        elif step.startswith("rule:"):
            rule_id = step[len("rule:"):]
            candidates = rule_closure([source], [r for r in rules if r.id == rule_id])
        else:
            candidates = causal_closure([source], o, side)
        if not any(c.dedup_key == fact.dedup_key and c.value == fact.value for c in candidates):
            return False
        fact = source
    return True


def render_fact(fact: PatientFactRecord) -> str:
    return f"{render_variable_name(fact.variable)}={fact.value} cert={fact.cert_window.render()} poss={fact.poss_window.render()}"
