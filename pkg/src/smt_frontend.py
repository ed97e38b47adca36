"""
Frontend SMT-LIB: programas de ensayo (subconjunto SMT-LIB v2) y hechos de
paciente (JSON) → objetos del modelo de restricciones, y serialización inversa.

Los programas siguen la convención de nombres
`{trial_id}_{inclusion|exclusion}_program.smt2` dentro de un directorio por
subcohorte; los objetivos del ensayo viven en `{trial_id}_targets.json`.
"""
import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from src.errors import (
    BadNamedTag, CertNotSubsetError, ExclusionShapeError, MalformedTimeframe, MalformedWindow, MissingAnnotation,
    NamingError, PatientFactError, SmtSyntaxError, UndeclaredSymbol, UnrecognizedStem,
)
from src.formula import (
    FALSE, TRUE, And, Atom, AtomicConstraint, CanonicalPredicate, Cmp, CountAtLeast, Formula,
    Iff, Implies, Interval, NonCanonicalPredicate, Not, Or, Quantity, SYMBOL_TO_CMP,
    predicate_from_variable,
)
from src.naming import PATIENT_FACT_RELATIONS, TRIAL_INTENTS, VariableName, parse_variable_name
from src.sexpr import Num, SExpr, SList, Sym, read_sexprs, to_text
from src.temporal import TimeWindow, endpoint_dict, to_fraction, window_from_endpoints


logger = logging.getLogger(__name__)

SORTS = ("Bool", "Int", "Real")
BOOL_ANNOTATION_KEYS = frozenset({"when_to_set_to_true", "when_to_set_to_false", "when_to_set_to_null", "meaning"})
NUMERIC_ANNOTATION_KEYS = frozenset({"when_to_set_to_value", "when_to_set_to_null", "meaning"})

NAMED_TAG_RE = re.compile(r"^REQ(\d+)_(?:COMPONENT(\d+)_(.+)|AUXILIARY(\d+))$")
CONSTRAINT_CLASSES = {
    "PRESCREEN_NOTES_MUST_COMPLETELY_SUFFICE": "PrescreenMustSuffice",
    "NOT_REQUIREMENT_OR_ALWAYS_SATISFIABLE_WITH_ACTION": "NotRequirementOrOneOffAction",
    # errata presente en programas reales
    "NOT_REQUIREMNET_OR_ALWAYS_SATISFIABLE_WITH_ACTION": "NotRequirementOrOneOffAction",
    "OTHER_REQUIREMENTS": "OtherRequirements",
}
CLASS_LABELS = {
    "PrescreenMustSuffice": "PRESCREEN_NOTES_MUST_COMPLETELY_SUFFICE",
    "NotRequirementOrOneOffAction": "NOT_REQUIREMENT_OR_ALWAYS_SATISFIABLE_WITH_ACTION",
    "OtherRequirements": "OTHER_REQUIREMENTS",
}
IGNORED_COMMANDS = ("set-logic", "set-info", "set-option", "check-sat", "get-model", "exit")

PROGRAM_FILE_RE = re.compile(r"^(?P<trial>.+)_(?P<side>inclusion|exclusion)_program\.smt2$")


# === TIPOS ===

@dataclass(frozen=True)
class ProvenanceTag:
    req_idx: int
    kind: str                      # Component | Auxiliary
    component_idx: int
    constraint_class: Optional[str] = None
    label: str = field(default="", compare=False)

    @property
    def is_component(self) -> bool:
        return self.kind == "Component"


def parse_named_tag(label: str, line: Optional[int] = None, col: Optional[int] = None) -> ProvenanceTag:
    m = NAMED_TAG_RE.match(label)
    if not m:
        raise BadNamedTag(f"etiqueta :named fuera de la gramática REQ: {label!r}", line, col)
    req = int(m.group(1))
    if m.group(4) is not None:
        return ProvenanceTag(req, "Auxiliary", int(m.group(4)), None, label)
    cls = CONSTRAINT_CLASSES.get(m.group(3))
    if cls is None:
        raise BadNamedTag(f"clase de restricción desconocida: {m.group(3)!r}", line, col)
    return ProvenanceTag(req, "Component", int(m.group(2)), cls, label)


def render_named_tag(tag: ProvenanceTag) -> str:
    if tag.label:
        return tag.label
    if tag.kind == "Auxiliary":
        return f"REQ{tag.req_idx}_AUXILIARY{tag.component_idx}"
    return f"REQ{tag.req_idx}_COMPONENT{tag.component_idx}_{CLASS_LABELS[tag.constraint_class]}"


@dataclass(frozen=True)
class Declaration:
    symbol: str
    sort: str
    predicate: Union[CanonicalPredicate, NonCanonicalPredicate]
    free_text: str = ""
    annotation: Dict = field(default_factory=dict, hash=False)
    pos: Optional[Tuple[int, int]] = field(default=None, compare=False)

    @property
    def is_numeric(self) -> bool:
        return self.sort != "Bool"


@dataclass(frozen=True)
class Assertion:
    formula: Formula
    tag: ProvenanceTag
    pos: Optional[Tuple[int, int]] = field(default=None, compare=False)


@dataclass(frozen=True)
class CountHelper:
    """define-fun Int como suma de ite booleanos"""
    name: str
    children: Tuple[Formula, ...]
    body: SExpr = field(compare=False, default=None)


@dataclass(frozen=True)
class TrialTarget:
    intent: str
    concept: str


@dataclass(frozen=True)
class TrialProgram:
    trial_id: str
    subcohort_id: str
    side: str                      # Inclusion | Exclusion
    declarations: Tuple[Declaration, ...] = ()
    assertions: Tuple[Assertion, ...] = ()
    helpers: Tuple[CountHelper, ...] = ()
    targets: Tuple[TrialTarget, ...] = ()

    @property
    def entity_id(self) -> str:
        return f"{self.trial_id}/{self.subcohort_id}/{self.side.lower()}"

    def declaration(self, symbol: str) -> Declaration:
        for d in self.declarations:
            if d.symbol == symbol:
                return d
        raise KeyError(symbol)

    @property
    def components(self) -> Tuple[Assertion, ...]:
        return tuple(a for a in self.assertions if a.tag.is_component)

    @property
    def auxiliaries(self) -> Tuple[Assertion, ...]:
        return tuple(a for a in self.assertions if not a.tag.is_component)


# === ANOTACIONES ===

_decoder = json.JSONDecoder()


def parse_annotation(comment: str, sort: str, where: str = "") -> Tuple[str, Dict]:
    """`;; "texto" {json}` → (texto, objeto). Un objeto ausente o inválido queda vacío."""
    body = comment.lstrip(";").strip()
    free_text = ""
    if body.startswith('"'):
        try:
            free_text, end = _decoder.raw_decode(body)
            body = body[end:].strip()
        except json.JSONDecodeError:
            brace = body.find("{")
            free_text = (body if brace < 0 else body[:brace]).strip().strip('"')
            body = "" if brace < 0 else body[brace:]
    else:
        brace = body.find("{")
        free_text = (body if brace < 0 else body[:brace]).strip()
        body = "" if brace < 0 else body[brace:]

    annotation: Dict = {}
    if body:
        try:
            obj, _ = _decoder.raw_decode(body)
            if isinstance(obj, dict):
                annotation = obj
        except json.JSONDecodeError:
            logger.warning(f"{where}: objeto de anotación inválido; se reemplaza por vacío")
            return free_text, {}

    if annotation:
        expected = BOOL_ANNOTATION_KEYS if sort == "Bool" else NUMERIC_ANNOTATION_KEYS
        if set(annotation) != expected:
            logger.warning(f"{where}: claves de anotación {sorted(annotation)} no corresponden a {sort}; se descarta")
            annotation = {}
    elif not body:
        logger.debug(f"{where}: declaración sin objeto de anotación")
    return free_text, annotation


# === LITERALES ===

def literal_value(node: SExpr) -> Optional[Fraction]:
    """Num, (- x) o (/ p q) con literales; None si no es un literal"""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, SList) and node.head in ("-", "/") and len(node.items) >= 2:
        args = [literal_value(i) for i in node.items[1:]]
        if any(a is None for a in args):
            return None
        if node.head == "-":
            return -args[0] if len(args) == 1 else args[0] - sum(args[1:])
        if len(args) == 2 and args[1] != 0:
            return args[0] / args[1]
    return None


def format_literal(value: Fraction) -> str:
    """Decimal exacto si termina; si no, (/ p q). Negativos como (- x)."""
    if value < 0:
        return f"(- {format_literal(-value)})"
    num, den = value.numerator, value.denominator
    for k in range(0, 30):
        if (10 ** k) % den == 0:
            scaled = num * (10 ** k // den)
            if k == 0:
                return f"{scaled}.0"
            digits = str(scaled).rjust(k + 1, "0")
            return f"{digits[:-k]}.{digits[-k:]}"
    return f"(/ {num}.0 {den}.0)"


# === PROGRAMAS ===

class _ProgramBuilder:
    def __init__(self, comments: Dict[int, str], source: str):
        self.comments = comments
        self.source = source
        self.declarations: Dict[str, Declaration] = {}
        self.helpers: Dict[str, CountHelper] = {}
        self.opaque_helpers: Dict[str, SExpr] = {}

    def where(self, node) -> str:
        return f"{self.source}:{getattr(node, 'line', '?')}"

    # --- declaraciones ---

    def declare(self, node: SList):
        if len(node.items) != 3 or not isinstance(node.items[1], Sym) or not isinstance(node.items[2], Sym):
            raise SmtSyntaxError("declare-const mal formado", node.line, node.col)
        symbol, sort = node.items[1].name, node.items[2].name
        if sort not in SORTS:
            raise SmtSyntaxError(f"sort no soportado: {sort}", node.line, node.col)
        if symbol in self.declarations:
            raise SmtSyntaxError(f"símbolo declarado dos veces: {symbol}", node.line, node.col)

        comment = self.comments.get(node.end_line)
        if comment is None or not comment.startswith(";;"):
            raise MissingAnnotation(f"declaración sin comentario de anotación: {symbol}", node.line, node.col)
        free_text, annotation = parse_annotation(comment, sort, f"{self.where(node)} {symbol}")

        predicate = self._predicate(symbol, sort, free_text)
        self.declarations[symbol] = Declaration(symbol, sort, predicate, free_text, annotation, (node.line, node.col))

    def _predicate(self, symbol: str, sort: str, free_text: str):
        try:
            v = parse_variable_name(symbol)
        except (UnrecognizedStem, MalformedTimeframe):
            return NonCanonicalPredicate(symbol, free_text)
        if sort != "Bool" and not v.is_numeric:
            return NonCanonicalPredicate(symbol, free_text)
        return predicate_from_variable(v)

    def define(self, node: SList):
        items = node.items
        if len(items) != 5 or not isinstance(items[1], Sym):
            raise SmtSyntaxError("define-fun mal formado", node.line, node.col)
        name, params, sort, body = items[1].name, items[2], items[3], items[4]
        if not (isinstance(params, SList) and not params.items and isinstance(sort, Sym) and sort.name == "Int"):
            raise SmtSyntaxError("sólo se admiten define-fun Int sin parámetros", node.line, node.col)
        children = self._ite_sum(body)
        if children is None:
            logger.warning(f"{self.where(node)}: define-fun {name} no es una suma de ite; queda opaco")
            self.opaque_helpers[name] = body
        else:
            self.helpers[name] = CountHelper(name, tuple(children), body)

    def _ite_sum(self, node: SExpr) -> Optional[List[Formula]]:
        terms = node.items[1:] if isinstance(node, SList) and node.head == "+" else [node]
        children = []
        for t in terms:
            if not (isinstance(t, SList) and t.head == "ite" and len(t.items) == 4):
                return None
            if literal_value(t.items[2]) != 1 or literal_value(t.items[3]) != 0:
                return None
            children.append(self.formula(t.items[1]))
        return children

    # --- fórmulas ---

    def formula(self, node: SExpr) -> Formula:
        pos = (getattr(node, "line", 0), getattr(node, "col", 0))
        if isinstance(node, Sym):
            if node.name == "true":
                return TRUE
            if node.name == "false":
                return FALSE
            decl = self.declarations.get(node.name)
            if decl is None:
                raise UndeclaredSymbol(f"símbolo no declarado: {node.name}", node.line, node.col)
            if decl.is_numeric:
                raise SmtSyntaxError(f"{node.name} es numérico y se usa como booleano", node.line, node.col)
            return Atom(AtomicConstraint(decl.predicate, Cmp.EQ, True), node.name, pos=pos)

        if not isinstance(node, SList) or not node.items:
            raise SmtSyntaxError(f"término inesperado: {to_text(node)}", *pos)

        op, args = node.head, node.items[1:]
        if op == "and":
            return And(tuple(self.formula(a) for a in args), pos)
        if op == "or":
            return Or(tuple(self.formula(a) for a in args), pos)
        if op == "not":
            if len(args) != 1:
                raise SmtSyntaxError("not espera un argumento", *pos)
            return Not(self.formula(args[0]), pos)
        if op == "=>":
            if len(args) < 2:
                raise SmtSyntaxError("=> espera al menos dos argumentos", *pos)
            result = self.formula(args[-1])
            for a in reversed(args[:-1]):
                result = Implies(self.formula(a), result, pos)
            return result
        if op == "ite" and len(args) == 3:
            c, a, b = (self.formula(x) for x in args)
            return Or((And((c, a)), And((Not(c), b))), pos)
        if op == "=" and args and self._is_bool_term(args[0]):
            if len(args) < 2:
                raise SmtSyntaxError("= espera al menos dos argumentos", *pos)
            parts = [self.formula(a) for a in args]
            pairs = tuple(Iff(parts[i], parts[i + 1], pos) for i in range(len(parts) - 1))
            return pairs[0] if len(pairs) == 1 else And(pairs, pos)
        if op == "distinct" and args and self._is_bool_term(args[0]):
            if len(args) < 2:
                raise SmtSyntaxError("distinct espera al menos dos argumentos", *pos)
            parts = [self.formula(a) for a in args]
            pairs = tuple(Not(Iff(parts[i], parts[j], pos), pos)
                          for i in range(len(parts)) for j in range(i + 1, len(parts)))
            return pairs[0] if len(pairs) == 1 else And(pairs, pos)
        if op in SYMBOL_TO_CMP:
            return self.comparison(node)
        raise SmtSyntaxError(f"operador no soportado: {op!r}", *pos)

    def _is_bool_term(self, node: SExpr) -> bool:
        if isinstance(node, Sym):
            if node.name in ("true", "false"):
                return True
            decl = self.declarations.get(node.name)
            if decl is None:
                if node.name in self.helpers or node.name in self.opaque_helpers:
                    return False
                raise UndeclaredSymbol(f"símbolo no declarado: {node.name}", node.line, node.col)
            return not decl.is_numeric
        if isinstance(node, SList):
            return node.head in ("and", "or", "not", "=>", "=", "<", "<=", ">", ">=", "distinct") or (
                node.head == "ite" and len(node.items) == 4 and self._is_bool_term(node.items[2]))
        return False

    def comparison(self, node: SList) -> Formula:
        pos = (node.line, node.col)
        if len(node.items) != 3:
            return self.opaque(node)
        cmp = SYMBOL_TO_CMP[node.head]
        lhs, rhs = node.items[1], node.items[2]

        lowered = self._count(lhs, cmp, rhs, pos)
        if lowered is None:
            lowered = self._count(rhs, cmp.flipped(), lhs, pos)
        if lowered is not None:
            return lowered

        value = literal_value(rhs)
        var = lhs
        if value is None:
            value, var, cmp = literal_value(lhs), rhs, cmp.flipped()
        if value is None or not isinstance(var, Sym):
            return self.opaque(node)
        if var.name in self.opaque_helpers or var.name in self.helpers:
            return self.opaque(node)

        decl = self.declarations.get(var.name)
        if decl is None:
            raise UndeclaredSymbol(f"símbolo no declarado: {var.name}", var.line, var.col)
        if not decl.is_numeric:
            raise SmtSyntaxError(f"comparación numérica sobre booleano {var.name}", var.line, var.col)
        unit = decl.predicate.unit if isinstance(decl.predicate, CanonicalPredicate) else None
        return Atom(AtomicConstraint(decl.predicate, cmp, Quantity(value, unit)), var.name, pos=pos)

    def _count(self, counted: SExpr, cmp: Cmp, bound: SExpr, pos) -> Optional[Formula]:
        if cmp not in (Cmp.GE, Cmp.GT):
            return None
        k = literal_value(bound)
        if k is None or k.denominator != 1:
            return None
        helper = None
        if isinstance(counted, Sym) and counted.name in self.helpers:
            helper = self.helpers[counted.name]
            children = helper.children
        elif isinstance(counted, SList) and counted.head in ("+", "ite"):
            found = self._ite_sum(counted)
            if found is None:
                return None
            children = tuple(found)
        else:
            return None
        k = int(k) + (1 if cmp == Cmp.GT else 0)
        if not 1 <= k <= len(children):
            logger.warning(f"{self.source}:{pos[0]}: umbral de conteo fuera de rango; queda opaco")
            return None
        return CountAtLeast(k, tuple(children), helper.name if helper else None, pos)

    def opaque(self, node: SList) -> Atom:
        """Comparaciones sin forma (variable, literal): átomo no canónico que conserva el término"""
        for sym in _symbols(node):
            if (sym.name not in self.declarations and sym.name not in self.helpers
                    and sym.name not in self.opaque_helpers and sym.name not in ("true", "false")):
                raise UndeclaredSymbol(f"símbolo no declarado: {sym.name}", sym.line, sym.col)
        text = to_text(node)
        ident = "opaque_" + hashlib.sha1(text.encode("utf-8")).hexdigest()[:12]
        return Atom(AtomicConstraint(NonCanonicalPredicate(ident, text), Cmp.EQ, True), None, node,
                    (node.line, node.col))

    def assertion(self, node: SList) -> Assertion:
        if len(node.items) != 2:
            raise SmtSyntaxError("assert espera un término", node.line, node.col)
        body = node.items[1]
        if not (isinstance(body, SList) and body.head == "!"):
            raise BadNamedTag("assert sin (! ... :named TAG)", node.line, node.col)
        items = body.items
        if len(items) != 4 or not (isinstance(items[2], Sym) and items[2].name == ":named"):
            raise BadNamedTag("anotación ! sin :named", body.line, body.col)
        label = items[3]
        if not isinstance(label, Sym):
            raise BadNamedTag("etiqueta :named inválida", body.line, body.col)
        tag = parse_named_tag(label.name, label.line, label.col)
        return Assertion(self.formula(items[1]), tag, (node.line, node.col))


def _symbols(node: SExpr):
    if isinstance(node, Sym):
        if node.name not in SYMBOL_TO_CMP and node.name not in ("+", "-", "*", "/", "ite", "and", "or", "not", "=>"):
            yield node
    elif isinstance(node, SList):
        for i in node.items[1:] if node.head else node.items:
            yield from _symbols(i)


def _check_exclusion_shape(assertion: Assertion, source: str) -> None:
    # componente de exclusión: raíz (not ...) o guardada por (=> ...)
    if not assertion.tag.is_component or isinstance(assertion.formula, (Not, Implies)):
        return
    line, col = assertion.pos or (None, None)
    raise ExclusionShapeError(
        f"{source}: componente de exclusión {render_named_tag(assertion.tag)} "
        f"no está negada ni guardada por una implicación", line, col)


def parse_trial_program(text: str, trial_id: str = "", subcohort_id: str = "main",
                        side: str = "Inclusion", source: str = "<program>",
                        targets: Tuple[TrialTarget, ...] = ()) -> TrialProgram:
    """
    Parsea un programa SMT-LIB del subconjunto soportado.

    Raises:
        UnbalancedParens, UndeclaredSymbol, BadNamedTag, MissingAnnotation, ExclusionShapeError, SmtSyntaxError
    """
    exprs, comments = read_sexprs(text)
    builder = _ProgramBuilder(comments, source)
    assertions = []

    for node in exprs:
        if not isinstance(node, SList) or not node.head:
            raise SmtSyntaxError(f"comando inesperado: {to_text(node)}", getattr(node, "line", None))
        head = node.head
        if head == "declare-const":
            builder.declare(node)
        elif head == "define-fun":
            builder.define(node)
        elif head == "assert":
            assertions.append(builder.assertion(node))
        elif head in IGNORED_COMMANDS:
            continue
        else:
            raise SmtSyntaxError(f"comando no soportado: {head}", node.line, node.col)

    if side == "Exclusion":
        for a in assertions:
            _check_exclusion_shape(a, source)

    program = TrialProgram(
        trial_id=trial_id,
        subcohort_id=subcohort_id,
        side=side,
        declarations=tuple(builder.declarations.values()),
        assertions=tuple(assertions),
        helpers=tuple(builder.helpers.values()),
        targets=tuple(targets),
    )
    logger.debug(f"{source}: {len(program.declarations)} declaraciones, {len(program.assertions)} aserciones")
    return program


def load_targets(path: Path) -> Tuple[TrialTarget, ...]:
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    targets = []
    for item in raw:
        intent, concept = item.get("intent"), item.get("concept")
        if intent not in TRIAL_INTENTS or not concept:
            raise SmtSyntaxError(f"{path}: objetivo inválido {item!r}")
        targets.append(TrialTarget(intent, concept))
    return tuple(targets)


def load_trial_program(path) -> TrialProgram:
    """Lee un .smt2 e infiere ensayo, lado y subcohorte a partir de la ruta"""
    path = Path(path)
    m = PROGRAM_FILE_RE.match(path.name)
    if not m:
        raise SmtSyntaxError(f"nombre de programa no reconocido: {path.name}")
    trial_id = m.group("trial")
    side = m.group("side").capitalize()
    subcohort = path.parent.name

    targets: Tuple[TrialTarget, ...] = ()
    for candidate in (path.parent / f"{trial_id}_targets.json", path.parent.parent / f"{trial_id}_targets.json"):
        if candidate.exists():
            targets = load_targets(candidate)
            break

    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    return parse_trial_program(text, trial_id, subcohort, side, str(path), targets)


# === SERIALIZACIÓN ===

def _atom_symbol(atom: Atom) -> str:
    if atom.symbol:
        return atom.symbol
    pred = atom.constraint.predicate
    if isinstance(pred, NonCanonicalPredicate):
        return pred.id
    return pred.render()


def term_text(f: Formula) -> str:
    if isinstance(f, Atom):
        if f.term is not None:
            return to_text(f.term)
        c = f.constraint
        symbol = _atom_symbol(f)
        if isinstance(c.target, bool):
            return symbol if c.target else f"(not {symbol})"
        if isinstance(c.target, Interval):
            t = c.target
            parts = []
            if t.lower is not None:
                parts.append(f"({'>=' if t.lower_inclusive else '>'} {symbol} {format_literal(t.lower)})")
            if t.upper is not None:
                parts.append(f"({'<=' if t.upper_inclusive else '<'} {symbol} {format_literal(t.upper)})")
            return "(and " + " ".join(parts) + ")" if parts else "true"
        return f"({c.cmp.symbol} {symbol} {format_literal(c.target.value)})"
    if isinstance(f, And):
        return "true" if not f.children else "(and " + " ".join(term_text(c) for c in f.children) + ")"
    if isinstance(f, Or):
        return "false" if not f.children else "(or " + " ".join(term_text(c) for c in f.children) + ")"
    if isinstance(f, Not):
        return f"(not {term_text(f.child)})"
    if isinstance(f, Implies):
        return f"(=> {term_text(f.lhs)} {term_text(f.rhs)})"
    if isinstance(f, Iff):
        return f"(= {term_text(f.lhs)} {term_text(f.rhs)})"
    if isinstance(f, CountAtLeast):
        counted = f.helper or "(+ " + " ".join(f"(ite {term_text(c)} 1 0)" for c in f.children) + ")"
        return f"(>= {counted} {f.k})"
    raise TypeError(f"nodo desconocido: {type(f).__name__}")


def _annotation_comment(d: Declaration) -> str:
    text = json.dumps(d.free_text, ensure_ascii=False)
    if d.annotation:
        return f";; {text} {json.dumps(d.annotation, ensure_ascii=False, separators=(',', ':'))}"
    return f";; {text}"


def serialize_trial_program(p: TrialProgram) -> str:
    lines = [f";; {p.trial_id} {p.subcohort_id} {p.side.lower()}"]
    for d in p.declarations:
        lines.append(f"(declare-const {d.symbol} {d.sort}) {_annotation_comment(d)}")
    for h in p.helpers:
        body = "(+ " + " ".join(f"(ite {term_text(c)} 1 0)" for c in h.children) + ")"
        lines.append(f"(define-fun {h.name} () Int {body})")
    for a in p.assertions:
        lines.append(f"(assert (! {term_text(a.formula)} :named {render_named_tag(a.tag)}))")
    return "\n".join(lines) + "\n"


# === HECHOS DEL PACIENTE ===

@dataclass(frozen=True)
class PatientFactRecord:
    variable: VariableName
    value: Union[bool, Fraction]
    cert_window: TimeWindow
    poss_window: TimeWindow
    source: str = ""
    labels: Tuple[str, ...] = ()
    # (clave de origen, regla/arista, saltos); vacío para hechos observados
    provenance: Tuple = field(default=(), compare=False)

    def __post_init__(self):
        if not self.poss_window.contains(self.cert_window):
            raise CertNotSubsetError(
                f"{self.name}: cert {self.cert_window.render()} ⊄ poss {self.poss_window.render()}")

    @property
    def name(self) -> str:
        return self.variable.render()

    @property
    def is_numeric(self) -> bool:
        return not isinstance(self.value, bool)

    @property
    def predicate(self) -> CanonicalPredicate:
        return predicate_from_variable(self.variable)

    @property
    def dedup_key(self) -> Tuple:
        w = self.poss_window
        return self.name, w.lower, w.upper, w.lower_inclusive, w.upper_inclusive


def _window(obj, key: str, where: str) -> TimeWindow:
    raw = obj.get(key)
    if not isinstance(raw, dict) or "start_time" not in raw or "end_time" not in raw:
        raise MalformedWindow(f"{where}: falta la ventana {key}")
    return window_from_endpoints(raw["start_time"], raw["end_time"])


def parse_patient_facts(text: str, patient_id: str = "", source: str = "<patient>") -> List[PatientFactRecord]:
    """
    JSON de hechos del paciente → registros con ventanas en horas.

    Los hechos con valor null se descartan con un aviso; los nombres que
    ninguna plantilla reconoce también (no pueden casar con átomos canónicos).

    Raises:
        WindowOrderError, CertNotSubsetError, MalformedWindow, PatientFactError
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise PatientFactError(f"{source}: JSON inválido: {e.msg}", e.lineno, e.colno)
    if not isinstance(raw, list):
        raise PatientFactError(f"{source}: se esperaba un arreglo de hechos")

    records = []
    for i, obj in enumerate(raw):
        where = f"{source}[{i}]"
        if not isinstance(obj, dict) or "entity_variable_name" not in obj:
            raise PatientFactError(f"{where}: hecho sin entity_variable_name")
        name = obj["entity_variable_name"]
        value = obj.get("extracted_value")
        if value is None:
            logger.warning(f"{where}: {name} con valor null; se descarta")
            continue
        try:
            variable = parse_variable_name(name)
        except NamingError as e:
            logger.warning(f"{where}: {name} no canónico ({e}); se descarta")
            continue

        kind = obj.get("type", "Bool")
        if kind == "Bool":
            if not isinstance(value, bool):
                raise PatientFactError(f"{where}: {name} es Bool con valor {value!r}")
        else:
            if isinstance(value, bool) or not isinstance(value, (int, float, str)):
                raise PatientFactError(f"{where}: {name} es {kind} con valor {value!r}")
            if not variable.is_numeric:
                raise PatientFactError(f"{where}: {name} numérico sin unidad en el nombre")
            value = to_fraction(value)

        labels = tuple(obj.get("patient_fact_relations") or ())
        for label in labels:
            if label not in PATIENT_FACT_RELATIONS:
                raise PatientFactError(f"{where}: relación de hecho desconocida {label!r}")

        cert = _window(obj, "timewindow_this_patient_fact_certainly_holds", where)
        poss = _window(obj, "largest_timewindow_this_patient_fact_may_hold", where)
        try:
            records.append(PatientFactRecord(variable, value, cert, poss, source=patient_id or source,
                                             labels=labels))
        except CertNotSubsetError as e:
            raise CertNotSubsetError(f"{where}: {e.message}")
    return records


def load_patient_facts(path) -> Tuple[str, List[PatientFactRecord]]:
    """(patient_id, hechos); el id es el nombre del archivo sin extensión"""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    return path.stem, parse_patient_facts(text, path.stem, str(path))


def _window_dict(w: TimeWindow) -> dict:
    return {"start_time": endpoint_dict(w.lower, w.lower_inclusive),
            "end_time": endpoint_dict(w.upper, w.upper_inclusive)}


def serialize_patient_facts(records: List[PatientFactRecord]) -> str:
    out = []
    for r in records:
        if r.is_numeric:
            value = float(r.value) if r.value.denominator != 1 else int(r.value)
            kind = "Real"
        else:
            value, kind = r.value, "Bool"
        item = {
            "entity_variable_name": r.name,
            "type": kind,
            "extracted_value": value,
            "timewindow_this_patient_fact_certainly_holds": _window_dict(r.cert_window),
            "largest_timewindow_this_patient_fact_may_hold": _window_dict(r.poss_window),
        }
        if r.labels:
            item["patient_fact_relations"] = list(r.labels)
        out.append(item)
    return json.dumps(out, ensure_ascii=False, indent=2)
