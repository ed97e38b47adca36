"""
Excepciones del proyecto.

Todas heredan de SatirError para que los procesos por lotes (ingesta) puedan
aislar fallos por archivo sin tragarse errores de programación.
"""
from typing import Optional


class SatirError(Exception):
    """Error base. Lleva posición opcional (línea/columna) para diagnósticos."""

    def __init__(self, message: str, line: Optional[int] = None, col: Optional[int] = None):
        self.message = message
        self.line = line
        self.col = col
        super().__init__(self.__str__())

    def __str__(self) -> str:
        if self.line is not None:
            where = f"{self.line}:{self.col}" if self.col is not None else f"{self.line}"
            return f"{where}: {self.message}"
        return self.message


# === ONTOLOGÍA ===
class OntologyError(SatirError):
    pass


class ParseError(OntologyError):
    pass


class CycleError(OntologyError):
    pass


class DanglingRefError(OntologyError):
    pass


# === NOMBRES DE VARIABLES ===
class NamingError(SatirError):
    pass


class UnrecognizedStem(NamingError):
    pass


class MalformedTimeframe(NamingError):
    pass


# === SMT-LIB ===
class SmtSyntaxError(SatirError):
    pass


class UnbalancedParens(SmtSyntaxError):
    pass


class UndeclaredSymbol(SmtSyntaxError):
    pass


class BadNamedTag(SmtSyntaxError):
    pass


class MissingAnnotation(SmtSyntaxError):
    pass


class ExclusionShapeError(SmtSyntaxError):
    pass


# === HECHOS DEL PACIENTE / TIEMPO ===
class TemporalError(SatirError):
    pass


class NegativeMagnitude(TemporalError):
    pass


class PatientFactError(SatirError):
    pass


class MalformedWindow(PatientFactError):
    pass


class WindowOrderError(PatientFactError):
    pass


class CertNotSubsetError(PatientFactError):
    pass


# === EVALUACIÓN / CLAUSURA ===
class UnitMismatch(SatirError):
    pass


class TemplateBindError(SatirError):
    pass


# === PROYECCIÓN ===
class ProjectionError(SatirError):
    pass


class OntologyMissError(ProjectionError):
    pass


class TooLargeToVerify(ProjectionError):
    pass


class PolicyError(ProjectionError):
    pass


# === STORE ===
class StoreError(SatirError):
    pass


class StoreIoError(StoreError):
    pass


class CorruptStore(StoreError):
    pass


class UnknownEntity(StoreError):
    pass


class DuplicateEntity(StoreError):
    pass


# === RECUPERACIÓN / ORÁCULO ===
class RetrievalError(SatirError):
    pass


class UnknownObjective(RetrievalError):
    pass


class OracleError(SatirError):
    pass


class TooLarge(OracleError):
    pass
