"""
Gramática de nombres de variables (vocabulario controlado de relaciones).

Un nombre como `patient_has_finding_of_heart_disease_now@@clinically_significant`
se descompone en plantilla (relación), token de concepto, timeframe, outcome,
unidad y calificadores libres `@@`. parse_variable_name y render_variable_name
son inversas exactas sobre nombres válidos.
"""
import re
import string
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from src.errors import MalformedTimeframe, UnrecognizedStem


TIME_UNITS = ("minutes", "hours", "days", "weeks", "months", "years")
OUTCOMES = ("positive", "negative", "normal", "abnormal")
SEXES = ("male", "female", "other")

# === VOCABULARIOS ===
# R_T: intenciones del ensayo
TRIAL_INTENTS = (
    "Treats", "Prevents", "Other", "NotClinicallyRelevant",
    "ImprovesEffectiveness", "ReducesProcedureRelatedHarms",
    "ReducesExposureUse", "MitigatesHarms", "EnhancesBenefits",
)
# R_P: rol del hecho del paciente en la búsqueda
PATIENT_FACT_RELATIONS = (
    "ChiefComplaint", "ChiefComplaintRelated", "AnyImportantComplaint", "PreventionTarget",
)


@dataclass(frozen=True)
class Template:
    key: str
    relation: str
    fmt: str
    fixed_concept: Optional[str] = None
    family: str = "findings"


# El orden importa: se prueba en este orden y gana la primera coincidencia
TEMPLATES: Tuple[Template, ...] = (
    Template("numeric", "ValueRecorded", "patient_{e}_value_recorded_{t}_{s}_{u}", family="observable_entities_numeric"),
    Template("diagnosis", "HasDiagnosisOf", "patient_has_diagnosis_of_{e}_{t}"),
    Template("finding", "HasFindingOf", "patient_has_finding_of_{e}_{t}"),
    Template("symptoms", "HasSymptomsOf", "patient_has_symptoms_of_{e}_{t}"),
    Template("clinical_signs", "HasClinicalSignsOf", "patient_has_clinical_signs_of_{e}_{t}"),
    Template("suspicion", "HasSuspicionOf", "patient_has_suspicion_of_{e}_{t}"),
    Template("undergone_outcome", "HasUndergone", "patient_has_undergone_{e}_{t}_outcome_is_{o}", family="procedures"),
    Template("undergone", "HasUndergone", "patient_has_undergone_{e}_{t}", family="procedures"),
    Template("undergoing", "IsUndergoing", "patient_is_undergoing_{e}_{t}", family="procedures"),
    Template("will_undergo", "WillUndergo", "patient_will_undergo_{e}_{t}", family="procedures"),
    Template("can_undergo", "CanUndergo", "patient_can_undergo_{e}_{t}", family="procedures"),
    Template("needs_to_undergo", "NeedsToUndergo", "patient_needs_to_undergo_{e}_{t}", family="procedures"),
    Template("taking", "IsTaking", "patient_is_taking_{e}_{t}", family="product"),
    Template("taken", "HasTaken", "patient_has_taken_{e}_{t}", family="product"),
    Template("hypersensitivity", "HasHypersensitivityTo", "patient_has_hypersensitivity_to_{e}_{t}", family="product"),
    Template("intolerance", "HasIntoleranceTo", "patient_has_intolerance_to_{e}_{t}", family="product"),
    Template("allergy", "HasAllergyTo", "patient_has_allergy_to_{e}_{t}", family="product"),
    Template("nonimmune_hypersensitivity", "HasNonimmuneHypersensitivityTo",
             "patient_has_nonimmune_hypersensitivity_to_{e}_{t}", family="product"),
    Template("exposed", "IsExposedTo", "patient_is_exposed_to_{e}_{t}", family="substance"),
    Template("been_exposed", "HasBeenExposedTo", "patient_has_been_exposed_to_{e}_{t}", family="substance"),
    Template("status", "HasObservableStatus", "patients_{e}_is_{o}_{t}", family="observable_entities_status"),
    Template("sex", "SexIs", "patient_sex_is_{c}_{t}", family="demographics"),
    Template("childbearing", "HasChildbearingPotential", "patient_has_childbearing_potential_{t}",
             fixed_concept="childbearing_potential", family="demographics"),
    Template("breastfeeding", "IsBreastfeeding", "patient_is_breastfeeding_{t}",
             fixed_concept="breastfeeding", family="demographics"),
    Template("pregnant", "IsPregnant", "patient_is_pregnant_{t}", fixed_concept="pregnancy", family="demographics"),
    Template("lactating", "IsLactating", "patient_is_lactating_{t}", fixed_concept="lactation", family="demographics"),
    Template("postmenopausal", "IsPostmenopausal", "patient_is_postmenopausal_{t}",
             fixed_concept="postmenopause", family="demographics"),
    Template("able_to", "IsAbleTo", "patient_is_able_to_{e}_{t}", family="demographics"),
)

TEMPLATES_BY_KEY: Dict[str, Template] = {t.key: t for t in TEMPLATES}

# R_M: relaciones médicas (una por plantilla, sin repetir)
MEDICAL_RELATIONS: Tuple[str, ...] = tuple(dict.fromkeys(t.relation for t in TEMPLATES))

# Conceptos implícitos de las plantillas de concepto fijo
BUILTIN_CONCEPTS: Tuple[str, ...] = tuple(
    [t.fixed_concept for t in TEMPLATES if t.fixed_concept] + list(SEXES)
)

# Relaciones que sólo pueden tomar concepto de la propia plantilla
FIXED_CONCEPT_RELATIONS = frozenset(t.relation for t in TEMPLATES if t.fixed_concept) | {"SexIs"}

TOKEN = r"[a-z0-9]+(?:_[a-z0-9]+)*"
ENTITY = r"(?P<e>[a-z0-9]+(?:_[a-z0-9]+)*?)"
TIMEFRAME_SLOT = r"(?P<t>now|inthehistory|inthefuture[a-z0-9]*|inthepast[a-z0-9]*|foradurationof[a-z0-9]*)"
UNIT_SLOT = r"(?P<u>(?!(?:[a-z0-9_]*_)?(?:withunit|in)(?:_|$))[a-z][a-z0-9]*(?:_[a-z0-9]+)*)"
STYLE_SLOT = r"(?P<s>withunit|in)"
OUTCOME_SLOT = r"(?P<o>positive|negative|normal|abnormal)"
SEX_SLOT = r"(?P<c>male|female|other)"

TIMEFRAME_RE = re.compile(r"^(inthepast|inthefuture|foradurationof)([1-9][0-9]*)(minutes|hours|days|weeks|months|years)$")
QUALIFIER_RE = re.compile(rf"^{TOKEN}$")


@dataclass(frozen=True)
class TimeframeToken:
    """now | inthehistory | inthefuture | inthepast(n,u) | inthefuture(n,u) | foradurationof(n,u)"""
    form: str
    n: Optional[int] = None
    unit: Optional[str] = None

    def render(self) -> str:
        if self.form == "Now":
            return "now"
        if self.form == "InTheHistory":
            return "inthehistory"
        if self.form == "InTheFuture":
            return "inthefuture"
        prefix = {"InThePastN": "inthepast", "InTheFutureN": "inthefuture", "ForADurationOfN": "foradurationof"}[self.form]
        return f"{prefix}{self.n}{self.unit}"


def parse_timeframe(text: str) -> TimeframeToken:
    if text == "now":
        return TimeframeToken("Now")
    if text == "inthehistory":
        return TimeframeToken("InTheHistory")
    if text == "inthefuture":
        return TimeframeToken("InTheFuture")
    m = TIMEFRAME_RE.match(text)
    if not m:
        raise MalformedTimeframe(f"timeframe inválido: {text!r}")
    form = {"inthepast": "InThePastN", "inthefuture": "InTheFutureN", "foradurationof": "ForADurationOfN"}[m.group(1)]
    return TimeframeToken(form, int(m.group(2)), m.group(3))


@dataclass(frozen=True)
class VariableName:
    template: str
    relation: str
    concept: str
    timeframe: Optional[TimeframeToken] = None
    outcome: Optional[str] = None
    unit: Optional[str] = None
    unit_style: Optional[str] = None
    free_qualifiers: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def stem(self) -> str:
        return render_variable_name(replace(self, free_qualifiers=()))

    @property
    def is_numeric(self) -> bool:
        return self.template == "numeric"

    def render(self) -> str:
        return render_variable_name(self)


def _pattern(fmt: str, with_timeframe: bool) -> "re.Pattern":
    if not with_timeframe:
        fmt = fmt.replace("_{t}", "")
    slots = {
        "e": ENTITY, "t": TIMEFRAME_SLOT, "s": STYLE_SLOT,
        "u": UNIT_SLOT, "o": OUTCOME_SLOT, "c": SEX_SLOT,
    }
    out = []
    for literal, name, _, _ in _formatter.parse(fmt):
        out.append(re.escape(literal))
        if name:
            out.append(slots[name])
    return re.compile("^" + "".join(out) + "$")


_formatter = string.Formatter()

_COMPILED: List[Tuple[Template, "re.Pattern", "re.Pattern"]] = [
    (t, _pattern(t.fmt, True), _pattern(t.fmt, False)) for t in TEMPLATES
]


def _build(template: Template, groups: dict) -> VariableName:
    timeframe = parse_timeframe(groups["t"]) if groups.get("t") else None
    if template.fixed_concept:
        concept = template.fixed_concept
    elif template.key == "sex":
        concept = groups["c"]
    else:
        concept = groups["e"]
    return VariableName(
        template=template.key,
        relation=template.relation,
        concept=concept,
        timeframe=timeframe,
        outcome=groups.get("o"),
        unit=groups.get("u"),
        unit_style=groups.get("s"),
    )


def parse_variable_name(name: str) -> VariableName:
    """
    Descompone un nombre de variable según el inventario de plantillas.

    Returns:
        VariableName con calificadores libres en el orden original.

    Raises:
        UnrecognizedStem: ninguna plantilla coincide (el llamador lo trata como no canónico)
        MalformedTimeframe: el hueco de timeframe contiene un token mal formado
    """
    if not name or not name.isascii():
        raise UnrecognizedStem(f"nombre vacío o no ASCII: {name!r}")

    stem, *qualifiers = name.split("@@")
    for q in qualifiers:
        if not QUALIFIER_RE.match(q):
            raise UnrecognizedStem(f"calificador @@ inválido en {name!r}: {q!r}")

    # primero con timeframe en todas las plantillas, luego sin timeframe
    for with_timeframe in (True, False):
        for template, with_t, without_t in _COMPILED:
            m = (with_t if with_timeframe else without_t).match(stem)
            if m:
                v = _build(template, m.groupdict())
                return replace(v, free_qualifiers=tuple(qualifiers))

    raise UnrecognizedStem(f"ninguna plantilla reconoce {stem!r}")


def render_variable_name(v: VariableName) -> str:
    template = TEMPLATES_BY_KEY[v.template]
    fmt = template.fmt
    values = {
        "e": v.concept, "c": v.concept,
        "o": v.outcome or "", "s": v.unit_style or "withunit", "u": v.unit or "",
    }
    if v.timeframe is None:
        fmt = fmt.replace("_{t}", "")
    else:
        values["t"] = v.timeframe.render()
    stem = fmt.format(**values)
    if v.free_qualifiers:
        return stem + "".join(f"@@{q}" for q in v.free_qualifiers)
    return stem


def template_for(relation: str, outcome: Optional[str] = None, concept: Optional[str] = None) -> Template:
    """Plantilla que lexicaliza (relación, outcome)"""
    if relation == "HasUndergone":
        return TEMPLATES_BY_KEY["undergone_outcome" if outcome else "undergone"]
    for template in TEMPLATES:
        if template.relation == relation:
            if template.fixed_concept and concept is not None and concept != template.fixed_concept:
                raise UnrecognizedStem(f"{relation} sólo admite el concepto {template.fixed_concept!r}")
            return template
    raise UnrecognizedStem(f"relación sin plantilla: {relation!r}")


def for_predicate(relation: str, concept: str, timeframe: Optional[TimeframeToken] = None,
                  outcome: Optional[str] = None, free_qualifiers: Tuple[str, ...] = (),
                  unit: Optional[str] = None, unit_style: Optional[str] = None) -> VariableName:
    """Construye el VariableName de un predicado (r, k, q)"""
    template = template_for(relation, outcome, concept)
    if template.key == "sex" and concept not in SEXES:
        raise UnrecognizedStem(f"sexo fuera del vocabulario: {concept!r}")
    if template.key == "numeric" and not unit:
        raise UnrecognizedStem("una variable numérica necesita unidad")
    return VariableName(
        template=template.key,
        relation=template.relation,
        concept=template.fixed_concept or concept,
        timeframe=timeframe,
        outcome=outcome if template.key in ("undergone_outcome", "status") else None,
        unit=unit if template.key == "numeric" else None,
        unit_style=(unit_style or "withunit") if template.key == "numeric" else None,
        free_qualifiers=tuple(free_qualifiers),
    )


def with_concept(v: VariableName, concept: str) -> VariableName:
    """Mismo nombre con otro concepto (plantillas de concepto fijo no cambian)"""
    if v.relation in FIXED_CONCEPT_RELATIONS:
        return v
    return replace(v, concept=concept)
