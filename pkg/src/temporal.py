"""
Ventanas temporales en horas relativas a "ahora".

Aritmética exacta con Fraction; el infinito se representa con un centinela de
±10⁹ horas para que la misma ventana pueda guardarse en SQLite y compararse
sin redondeos.
"""
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Tuple, Union

from src.errors import MalformedWindow, NegativeMagnitude, WindowOrderError


SENTINEL = Fraction(10**9)

# Conversión fija de calendario (1 mes = 730 h, 1 año = 8760 h)
UNIT_HOURS = {
    "minutes": Fraction(1, 60),
    "hours": Fraction(1),
    "days": Fraction(24),
    "weeks": Fraction(168),
    "months": Fraction(730),
    "years": Fraction(8760),
}

UNIT_ALIASES = {
    "minute": "minutes", "min": "minutes", "mins": "minutes",
    "hour": "hours", "h": "hours", "hrs": "hours",
    "day": "days", "d": "days",
    "week": "weeks", "wk": "weeks",
    "month": "months", "mo": "months",
    "year": "years", "yr": "years", "y": "years",
}

Number = Union[int, float, str, Fraction]


def canonical_unit(unit: str) -> str:
    """Normaliza el nombre de la unidad temporal (singular/abreviada → plural)"""
    key = (unit or "").strip().lower()
    key = UNIT_ALIASES.get(key, key)
    if key not in UNIT_HOURS:
        raise MalformedWindow(f"unidad temporal desconocida: {unit!r}")
    return key


def clamp(value: Fraction) -> Fraction:
    if value > SENTINEL:
        return SENTINEL
    if value < -SENTINEL:
        return -SENTINEL
    return value


def to_fraction(value: Number) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        # vía str para no arrastrar la representación binaria
        return Fraction(repr(value))
    return Fraction(value)


def _is_infinite(magnitude) -> bool:
    if isinstance(magnitude, str):
        return magnitude.strip().lower() in ("inf", "infinity", "+inf")
    if isinstance(magnitude, float):
        return magnitude == float("inf")
    return False


def normalize_endpoint(direction: str, magnitude, unit: str) -> Fraction:
    """
    Convierte (dirección, magnitud, unidad) a horas con signo.

    Args:
        direction: "past", "now" o "future"
        magnitude: número >= 0 o "Inf"
        unit: unidad temporal

    Returns:
        Horas como Fraction; el pasado es negativo. "Inf" se recorta al centinela.
    """
    direction = (direction or "").strip().lower()
    if direction not in ("past", "now", "future"):
        raise MalformedWindow(f"dirección temporal inválida: {direction!r}")

    if direction == "now":
        return Fraction(0)

    if _is_infinite(magnitude):
        hours = SENTINEL
    else:
        try:
            value = to_fraction(magnitude)
        except (TypeError, ValueError):
            raise MalformedWindow(f"magnitud temporal inválida: {magnitude!r}")
        if value < 0:
            raise NegativeMagnitude(f"magnitud negativa: {magnitude!r}")
        hours = clamp(value * UNIT_HOURS[canonical_unit(unit)])

    return -hours if direction == "past" else hours


@dataclass(frozen=True, order=True)
class TimeWindow:
    """Intervalo [lower, upper] en horas con inclusividad por extremo"""
    lower: Fraction
    upper: Fraction
    lower_inclusive: bool = True
    upper_inclusive: bool = True

    def __post_init__(self):
        object.__setattr__(self, "lower", clamp(to_fraction(self.lower)))
        object.__setattr__(self, "upper", clamp(to_fraction(self.upper)))
        if self.lower > self.upper:
            raise WindowOrderError(f"ventana invertida: {self.render()}")
        if self.lower == self.upper and not (self.lower_inclusive and self.upper_inclusive):
            raise WindowOrderError(f"ventana vacía: {self.render()}")

    @property
    def start_tuple(self) -> Tuple[Fraction, int]:
        return self.lower, 0 if self.lower_inclusive else 1

    @property
    def end_tuple(self) -> Tuple[Fraction, int]:
        return self.upper, 0 if self.upper_inclusive else -1

    @property
    def is_point(self) -> bool:
        return self.lower == self.upper

    def overlaps(self, other: "TimeWindow") -> bool:
        return self.start_tuple <= other.end_tuple and other.start_tuple <= self.end_tuple

    def contains(self, other: "TimeWindow", strict: bool = False) -> bool:
        if strict:
            return self.start_tuple < other.start_tuple and other.end_tuple < self.end_tuple
        return self.start_tuple <= other.start_tuple and other.end_tuple <= self.end_tuple

    def intersect(self, other: "TimeWindow") -> Optional["TimeWindow"]:
        if not self.overlaps(other):
            return None
        lo, lo_flag = max(self.start_tuple, other.start_tuple)
        hi, hi_flag = min(self.end_tuple, other.end_tuple)
        return TimeWindow(lo, hi, lo_flag == 0, hi_flag == 0)

    def render(self) -> str:
        return render_window(self)

    def to_dict(self) -> dict:
        return {
            "lower": format_hours(self.lower),
            "upper": format_hours(self.upper),
            "lower_inclusive": self.lower_inclusive,
            "upper_inclusive": self.upper_inclusive,
        }


def format_hours(value: Fraction) -> str:
    return f"{float(value)}"


def render_window(w: TimeWindow) -> str:
    """Formato de depuración [{lower}h→{upper}h]"""
    left = "[" if w.lower_inclusive else "("
    right = "]" if w.upper_inclusive else ")"
    return f"{left}{format_hours(w.lower)}h→{format_hours(w.upper)}h{right}"


NOW = TimeWindow(Fraction(0), Fraction(0))
HISTORY = TimeWindow(-SENTINEL, Fraction(0))
FUTURE = TimeWindow(Fraction(0), SENTINEL)
ALWAYS = TimeWindow(-SENTINEL, SENTINEL)


def timeframe_to_window(token) -> TimeWindow:
    """
    Ventana del criterio para un TimeframeToken.

    now → [0,0]; inthehistory → [−∞,0]; inthefuture → [0,+∞];
    inthepast(n,u) → [−n·u,0]; inthefuture(n,u) → [0,+n·u];
    foradurationof(n,u) → [0,+n·u] (la duración se cuenta desde ahora).
    Sin timeframe la ventana es irrestricta.
    """
    if token is None:
        return ALWAYS
    form = token.form
    if form == "Now":
        return NOW
    if form == "InTheHistory":
        return HISTORY
    if form == "InTheFuture":
        return FUTURE
    span = clamp(Fraction(token.n) * UNIT_HOURS[canonical_unit(token.unit)])
    if form == "InThePastN":
        return TimeWindow(-span, Fraction(0))
    # InTheFutureN y ForADurationOfN
    return TimeWindow(Fraction(0), span)


def inclusion_time_match(criterion: TimeWindow, patient_poss: TimeWindow) -> bool:
    """Inclusión: basta con solaparse con la ventana posible del hecho"""
    return criterion.overlaps(patient_poss)


def exclusion_time_match(criterion: TimeWindow, patient_cert: TimeWindow, strict: bool = False) -> bool:
    """Exclusión: el criterio debe contener la ventana cierta del hecho"""
    return criterion.contains(patient_cert, strict=strict)


def window_from_endpoints(start: dict, end: dict) -> TimeWindow:
    """
    Construye una ventana a partir de dos extremos del formato de hechos del paciente:
    {temporal_direction, temporal_magnitude, units, inclusive}.
    """
    for endpoint in (start, end):
        if not isinstance(endpoint, dict):
            raise MalformedWindow(f"extremo de ventana inválido: {endpoint!r}")
        missing = {"temporal_direction", "temporal_magnitude", "units"} - set(endpoint)
        if missing:
            raise MalformedWindow(f"faltan campos en el extremo: {sorted(missing)}")

    lo = normalize_endpoint(start["temporal_direction"], start["temporal_magnitude"], start["units"])
    hi = normalize_endpoint(end["temporal_direction"], end["temporal_magnitude"], end["units"])
    lo_incl = bool(start.get("inclusive", True))
    hi_incl = bool(end.get("inclusive", True))
    if lo > hi:
        raise WindowOrderError(f"inicio posterior al fin: {format_hours(lo)}h > {format_hours(hi)}h")
    if lo == hi and not (lo_incl and hi_incl):
        raise MalformedWindow(f"ventana vacía: punto {format_hours(lo)}h con un extremo abierto")
    return TimeWindow(lo, hi, lo_incl, hi_incl)


def endpoint_dict(hours: Fraction, inclusive: bool = True) -> dict:
    """Inverso de normalize_endpoint, siempre en horas (útil para generar hechos)"""
    if hours == 0:
        return {"temporal_direction": "now", "temporal_magnitude": 0.0, "units": "hours", "inclusive": inclusive}
    magnitude = "Inf" if abs(hours) >= SENTINEL else float(abs(hours))
    direction = "past" if hours < 0 else "future"
    return {"temporal_direction": direction, "temporal_magnitude": magnitude, "units": "hours", "inclusive": inclusive}


# @@temporalcontext_within7days_before_x / @@temporalcontext_within_14_to_28_days_before_x
ANCHORED_SINGLE = re.compile(r"^temporalcontext_within_?(\d+)_?(minutes|hours|days|weeks|months|years)(?:_|$)")
ANCHORED_RANGE = re.compile(r"^temporalcontext_within_(\d+)_to_(\d+)_(minutes|hours|days|weeks|months|years)(?:_|$)")


def anchored_window(qualifier: str) -> Optional[TimeWindow]:
    """
    Ventana derivada de un calificador @@temporalcontext, si su forma es reconocible.
    El ancla (admisión, enrolamiento, ...) se aproxima por "ahora".
    """
    m = ANCHORED_RANGE.match(qualifier)
    if m:
        a, b, unit = int(m.group(1)), int(m.group(2)), m.group(3)
        if a > b:
            a, b = b, a
        factor = UNIT_HOURS[unit]
        return TimeWindow(-b * factor, -a * factor)
    m = ANCHORED_SINGLE.match(qualifier)
    if m:
        n, unit = int(m.group(1)), m.group(2)
        return TimeWindow(-n * UNIT_HOURS[unit], Fraction(0))
    return None


def encode_fraction(value: Optional[Fraction]) -> Optional[str]:
    """Texto exacto para columnas SQLite"""
    return None if value is None else str(value)


def decode_fraction(text: Optional[str]) -> Optional[Fraction]:
    return None if text is None else Fraction(text)
