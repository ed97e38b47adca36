"""
Modelo de restricciones: predicados (r, k, q), átomos (π, cmp, t) y fórmulas.

La evaluación es trivalente (Kleene): un hecho ausente no es falso sino
desconocido, y And/Or se comportan como min/max sobre F < U < T.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from fractions import Fraction
from typing import Any, Callable, Dict, Iterator, Mapping, Optional, Tuple, Union

from src.errors import UnitMismatch
from src.naming import (
    TimeframeToken, VariableName, for_predicate, parse_timeframe, render_variable_name,
)
from src.temporal import ALWAYS, TimeWindow, anchored_window, timeframe_to_window


logger = logging.getLogger(__name__)


class Cmp(str, Enum):
    LT = "LT"
    LE = "LE"
    EQ = "EQ"
    NE = "NE"
    GE = "GE"
    GT = "GT"

    @property
    def symbol(self) -> str:
        return {"LT": "<", "LE": "<=", "EQ": "=", "NE": "distinct", "GE": ">=", "GT": ">"}[self.value]

    def flipped(self) -> "Cmp":
        """Operador equivalente con los operandos intercambiados"""
        return {Cmp.LT: Cmp.GT, Cmp.LE: Cmp.GE, Cmp.GT: Cmp.LT, Cmp.GE: Cmp.LE}.get(self, self)


SYMBOL_TO_CMP = {"<": Cmp.LT, "<=": Cmp.LE, "=": Cmp.EQ, ">=": Cmp.GE, ">": Cmp.GT, "distinct": Cmp.NE}


class TriState(IntEnum):
    FALSE = 0
    UNKNOWN = 1
    TRUE = 2

    def negate(self) -> "TriState":
        return TriState(2 - self.value)

    @classmethod
    def of(cls, value: bool) -> "TriState":
        return cls.TRUE if value else cls.FALSE


# === PREDICADOS ===

@dataclass(frozen=True, order=True)
class QualifierKey:
    kind: str   # Timeframe | Outcome | Unit | Free
    value: str


@dataclass(frozen=True)
class CanonicalPredicate:
    relation: str
    concept: str
    qualifiers: Tuple[QualifierKey, ...] = ()

    def _values(self, kind: str) -> Tuple[str, ...]:
        return tuple(q.value for q in self.qualifiers if q.kind == kind)

    @property
    def timeframe(self) -> Optional[TimeframeToken]:
        values = self._values("Timeframe")
        return parse_timeframe(values[0]) if values else None

    @property
    def outcome(self) -> Optional[str]:
        values = self._values("Outcome")
        return values[0] if values else None

    @property
    def unit(self) -> Optional[str]:
        values = self._values("Unit")
        return values[0] if values else None

    @property
    def free(self) -> Tuple[str, ...]:
        return self._values("Free")

    @property
    def window(self) -> TimeWindow:
        """Ventana del timeframe, intersectada con las ventanas ancladas @@temporalcontext"""
        window = timeframe_to_window(self.timeframe)
        for q in self.free:
            anchored = anchored_window(q)
            if anchored is None:
                continue
            narrowed = window.intersect(anchored)
            if narrowed is None:
                logger.warning(f"ventana anclada {q} disjunta del timeframe; se conserva {window.render()}")
                continue
            window = narrowed
        return window

    def without_timeframe(self) -> "CanonicalPredicate":
        return CanonicalPredicate(self.relation, self.concept,
                                  tuple(q for q in self.qualifiers if q.kind != "Timeframe"))

    def render(self, unit_style: Optional[str] = None) -> str:
        return render_variable_name(self.to_variable(unit_style))

    def to_variable(self, unit_style: Optional[str] = None) -> VariableName:
        return for_predicate(self.relation, self.concept, self.timeframe, self.outcome,
                             self.free, unit=self.unit, unit_style=unit_style)


@dataclass(frozen=True)
class NonCanonicalPredicate:
    id: str
    free_text: str = field(default="", compare=False)


Predicate = Union[CanonicalPredicate, NonCanonicalPredicate]


def predicate_from_variable(v: VariableName) -> CanonicalPredicate:
    qualifiers = []
    if v.timeframe is not None:
        qualifiers.append(QualifierKey("Timeframe", v.timeframe.render()))
    if v.outcome:
        qualifiers.append(QualifierKey("Outcome", v.outcome))
    if v.unit:
        qualifiers.append(QualifierKey("Unit", v.unit))
    qualifiers.extend(QualifierKey("Free", q) for q in v.free_qualifiers)
    return CanonicalPredicate(v.relation, v.concept, tuple(qualifiers))


# === OBJETIVOS DE COMPARACIÓN ===

@dataclass(frozen=True)
class Quantity:
    value: Fraction
    unit: Optional[str] = None


@dataclass(frozen=True)
class Interval:
    """Intervalo numérico; None en un extremo significa no acotado"""
    lower: Optional[Fraction]
    upper: Optional[Fraction]
    lower_inclusive: bool = True
    upper_inclusive: bool = True
    unit: Optional[str] = None

    def contains_value(self, value: Fraction) -> bool:
        if self.lower is not None:
            if value < self.lower or (value == self.lower and not self.lower_inclusive):
                return False
        if self.upper is not None:
            if value > self.upper or (value == self.upper and not self.upper_inclusive):
                return False
        return True

    def intersects(self, other: "Interval") -> bool:
        lo, lo_incl = _max_lower(self, other)
        hi, hi_incl = _min_upper(self, other)
        if lo is None or hi is None:
            return True
        if lo < hi:
            return True
        return lo == hi and lo_incl and hi_incl

    @classmethod
    def point(cls, value: Fraction, unit: Optional[str] = None) -> "Interval":
        return cls(value, value, True, True, unit)


def _max_lower(a: Interval, b: Interval):
    if a.lower is None:
        return b.lower, b.lower_inclusive
    if b.lower is None:
        return a.lower, a.lower_inclusive
    if a.lower != b.lower:
        return (a.lower, a.lower_inclusive) if a.lower > b.lower else (b.lower, b.lower_inclusive)
    return a.lower, a.lower_inclusive and b.lower_inclusive


def _min_upper(a: Interval, b: Interval):
    if a.upper is None:
        return b.upper, b.upper_inclusive
    if b.upper is None:
        return a.upper, a.upper_inclusive
    if a.upper != b.upper:
        return (a.upper, a.upper_inclusive) if a.upper < b.upper else (b.upper, b.upper_inclusive)
    return a.upper, a.upper_inclusive and b.upper_inclusive


Target = Union[bool, Quantity, Interval]


@dataclass(frozen=True)
class AtomicConstraint:
    predicate: Predicate
    cmp: Cmp
    target: Target

    @property
    def is_canonical(self) -> bool:
        return isinstance(self.predicate, CanonicalPredicate)

    @property
    def is_numeric(self) -> bool:
        return not isinstance(self.target, bool)

    @property
    def unit(self) -> Optional[str]:
        if isinstance(self.predicate, CanonicalPredicate) and self.predicate.unit:
            return self.predicate.unit
        return getattr(self.target, "unit", None)

    def to_interval(self) -> Optional[Interval]:
        """Conjunto de valores que satisfacen el átomo numérico (None para NE)"""
        t = self.target
        if isinstance(t, Interval):
            return t if self.cmp == Cmp.EQ else None
        if not isinstance(t, Quantity):
            return None
        v, unit = t.value, self.unit
        return {
            Cmp.EQ: Interval(v, v, True, True, unit),
            Cmp.GE: Interval(v, None, True, True, unit),
            Cmp.GT: Interval(v, None, False, True, unit),
            Cmp.LE: Interval(None, v, True, True, unit),
            Cmp.LT: Interval(None, v, True, False, unit),
        }.get(self.cmp)


def compare_value(value: Fraction, cmp: Cmp, target: Target) -> bool:
    if isinstance(target, Interval):
        inside = target.contains_value(value)
        return not inside if cmp == Cmp.NE else inside
    t = target.value
    return {
        Cmp.LT: value < t, Cmp.LE: value <= t, Cmp.EQ: value == t,
        Cmp.NE: value != t, Cmp.GE: value >= t, Cmp.GT: value > t,
    }[cmp]


# === FÓRMULAS ===

Position = Optional[Tuple[int, int]]


@dataclass(frozen=True)
class Atom:
    constraint: AtomicConstraint
    symbol: Optional[str] = None
    term: Any = field(default=None, compare=False)   # s-expr original para átomos opacos
    pos: Position = field(default=None, compare=False)


@dataclass(frozen=True)
class And:
    children: Tuple[Any, ...]
    pos: Position = field(default=None, compare=False)


@dataclass(frozen=True)
class Or:
    children: Tuple[Any, ...]
    pos: Position = field(default=None, compare=False)


@dataclass(frozen=True)
class Not:
    child: Any
    pos: Position = field(default=None, compare=False)


@dataclass(frozen=True)
class CountAtLeast:
    k: int
    children: Tuple[Any, ...]
    helper: Optional[str] = None
    pos: Position = field(default=None, compare=False)

    def __post_init__(self):
        if not 0 <= self.k <= len(self.children):
            raise ValueError(f"CountAtLeast con k={self.k} fuera de rango para {len(self.children)} hijos")


@dataclass(frozen=True)
class Implies:
    lhs: Any
    rhs: Any
    pos: Position = field(default=None, compare=False)


@dataclass(frozen=True)
class Iff:
    lhs: Any
    rhs: Any
    pos: Position = field(default=None, compare=False)


Formula = Union[Atom, And, Or, Not, CountAtLeast, Implies, Iff]

TRUE = And(())
FALSE = Or(())


def bool_atom(predicate: Predicate, symbol: Optional[str] = None, value: bool = True) -> Atom:
    return Atom(AtomicConstraint(predicate, Cmp.EQ, value), symbol)


def children_of(f: Formula) -> Tuple[Formula, ...]:
    if isinstance(f, (And, Or, CountAtLeast)):
        return f.children
    if isinstance(f, Not):
        return (f.child,)
    if isinstance(f, (Implies, Iff)):
        return (f.lhs, f.rhs)
    return ()


def iter_atoms(f: Formula) -> Iterator[Atom]:
    stack = [f]
    while stack:
        node = stack.pop()
        if isinstance(node, Atom):
            yield node
        else:
            stack.extend(reversed(children_of(node)))


def _kleene_implies(a: TriState, b: TriState) -> TriState:
    return max(a.negate(), b)


def eval_atom(atom: Atom, assignment: Mapping, numeric_env: Mapping) -> TriState:
    c = atom.constraint
    if not c.is_numeric:
        value = assignment.get(c.predicate, TriState.UNKNOWN)
        value = TriState(value) if not isinstance(value, bool) else TriState.of(value)
        return value if c.target else value.negate()

    entry = numeric_env.get(c.predicate)
    if entry is None:
        return TriState.UNKNOWN
    if isinstance(entry, Quantity):
        value, unit = entry.value, entry.unit
    else:
        value, unit = Fraction(entry), None
    expected = c.unit
    if unit is not None and expected is not None and unit != expected:
        raise UnitMismatch(f"{expected} vs {unit} en {atom.symbol or c.predicate}")
    return TriState.of(compare_value(Fraction(value), c.cmp, c.target))


def eval_formula(f: Formula, assignment: Mapping, numeric_env: Optional[Mapping] = None,
                 resolve: Optional[Callable[[Atom], TriState]] = None) -> TriState:
    """
    Evaluación de Kleene.

    Args:
        f: fórmula
        assignment: predicado → TriState (o bool) para átomos booleanos
        numeric_env: predicado → Quantity para átomos numéricos
        resolve: si se da, decide el valor de cada átomo (el oráculo lo usa con ventanas)
    """
    numeric_env = numeric_env or {}

    def ev(node) -> TriState:
        if isinstance(node, Atom):
            if resolve is not None:
                return resolve(node)
            return eval_atom(node, assignment, numeric_env)
        if isinstance(node, And):
            return min((ev(c) for c in node.children), default=TriState.TRUE)
        if isinstance(node, Or):
            return max((ev(c) for c in node.children), default=TriState.FALSE)
        if isinstance(node, Not):
            return ev(node.child).negate()
        if isinstance(node, Implies):
            return _kleene_implies(ev(node.lhs), ev(node.rhs))
        if isinstance(node, Iff):
            a, b = ev(node.lhs), ev(node.rhs)
            return min(_kleene_implies(a, b), _kleene_implies(b, a))
        if isinstance(node, CountAtLeast):
            values = [ev(c) for c in node.children]
            trues = sum(v == TriState.TRUE for v in values)
            falses = sum(v == TriState.FALSE for v in values)
            if trues >= node.k:
                return TriState.TRUE
            if falses > len(values) - node.k:
                return TriState.FALSE
            return TriState.UNKNOWN
        raise TypeError(f"nodo desconocido: {type(node).__name__}")

    return ev(f)


# === VOLCADO JSON (depuración) ===

def target_to_dict(target: Target) -> Dict:
    if isinstance(target, bool):
        return {"bool": target}
    if isinstance(target, Quantity):
        return {"value": str(target.value), "unit": target.unit}
    return {
        "lower": None if target.lower is None else str(target.lower),
        "upper": None if target.upper is None else str(target.upper),
        "lower_inclusive": target.lower_inclusive,
        "upper_inclusive": target.upper_inclusive,
        "unit": target.unit,
    }


def predicate_to_dict(p: Predicate) -> Dict:
    if isinstance(p, NonCanonicalPredicate):
        return {"noncanonical": p.id, "free_text": p.free_text}
    return {
        "relation": p.relation,
        "concept": p.concept,
        "qualifiers": [[q.kind, q.value] for q in p.qualifiers],
    }


def formula_to_dict(f: Formula) -> Dict:
    """Volcado JSON de una fórmula (formato en docs/formats.md)"""
    if isinstance(f, Atom):
        c = f.constraint
        return {
            "op": "atom",
            "symbol": f.symbol,
            "predicate": predicate_to_dict(c.predicate),
            "cmp": c.cmp.value,
            "target": target_to_dict(c.target),
        }
    if isinstance(f, CountAtLeast):
        return {"op": "count_at_least", "k": f.k, "helper": f.helper,
                "children": [formula_to_dict(c) for c in f.children]}
    if isinstance(f, (Implies, Iff)):
        return {"op": type(f).__name__.lower(), "lhs": formula_to_dict(f.lhs), "rhs": formula_to_dict(f.rhs)}
    if isinstance(f, Not):
        return {"op": "not", "child": formula_to_dict(f.child)}
    return {"op": type(f).__name__.lower(), "children": [formula_to_dict(c) for c in f.children]}
