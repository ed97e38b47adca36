"""
Lector de s-expresiones con posiciones (línea/columna).

Guarda los comentarios `;` por línea para que el frontend SMT pueda recuperar
la anotación que acompaña a cada declaración en la misma línea.
"""
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Tuple, Union

from src.errors import SmtSyntaxError, UnbalancedParens


@dataclass(frozen=True)
class Sym:
    name: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Num:
    value: Fraction
    text: str = field(default="", compare=False)
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Str:
    value: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class SList:
    items: Tuple["SExpr", ...]
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)
    end_line: int = field(default=0, compare=False)

    @property
    def head(self) -> str:
        if self.items and isinstance(self.items[0], Sym):
            return self.items[0].name
        return ""


SExpr = Union[Sym, Num, Str, SList]

DELIMITERS = set(" \t\r\n();\"")


def _number(token: str):
    if token[0].isdigit() and all(c.isdigit() or c == "." for c in token) and token.count(".") <= 1:
        return Fraction(token)
    return None


class Reader:
    """Tokenizador de un solo paso sobre el texto completo"""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1
        self.comments: Dict[int, str] = {}

    def _advance(self, n: int = 1):
        for _ in range(n):
            if self.text[self.pos] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.pos += 1

    def _skip_blank(self):
        text = self.text
        while self.pos < len(text):
            c = text[self.pos]
            if c in " \t\r\n":
                self._advance()
            elif c == ";":
                end = text.find("\n", self.pos)
                end = len(text) if end < 0 else end
                comment = text[self.pos:end]
                # un único comentario por línea: el primero
                self.comments.setdefault(self.line, comment)
                self._advance(end - self.pos)
            else:
                break

    def read_all(self) -> List[SExpr]:
        out = []
        while True:
            self._skip_blank()
            if self.pos >= len(self.text):
                return out
            if self.text[self.pos] == ")":
                raise UnbalancedParens("')' sin '(' correspondiente", self.line, self.col)
            out.append(self.read())

    def read(self) -> SExpr:
        self._skip_blank()
        if self.pos >= len(self.text):
            raise UnbalancedParens("fin de texto inesperado", self.line, self.col)
        c = self.text[self.pos]
        line, col = self.line, self.col

        if c == "(":
            self._advance()
            items = []
            while True:
                self._skip_blank()
                if self.pos >= len(self.text):
                    raise UnbalancedParens("'(' sin cerrar", line, col)
                if self.text[self.pos] == ")":
                    end_line = self.line
                    self._advance()
                    return SList(tuple(items), line, col, end_line)
                items.append(self.read())

        if c == '"':
            self._advance()
            chars = []
            while True:
                if self.pos >= len(self.text):
                    raise SmtSyntaxError("cadena sin cerrar", line, col)
                ch = self.text[self.pos]
                self._advance()
                if ch == '"':
                    # "" es una comilla escapada en SMT-LIB
                    if self.pos < len(self.text) and self.text[self.pos] == '"':
                        chars.append('"')
                        self._advance()
                        continue
                    return Str("".join(chars), line, col)
                chars.append(ch)

        if c == "|":
            end = self.text.find("|", self.pos + 1)
            if end < 0:
                raise SmtSyntaxError("símbolo |...| sin cerrar", line, col)
            name = self.text[self.pos + 1:end]
            self._advance(end + 1 - self.pos)
            return Sym(name, line, col)

        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] not in DELIMITERS:
            self._advance()
        token = self.text[start:self.pos]
        value = _number(token)
        if value is not None:
            return Num(value, token, line, col)
        return Sym(token, line, col)


def read_sexprs(text: str) -> Tuple[List[SExpr], Dict[int, str]]:
    """Devuelve (expresiones de nivel superior, comentarios por línea)"""
    reader = Reader(text)
    exprs = reader.read_all()
    return exprs, reader.comments


def to_text(node: SExpr) -> str:
    if isinstance(node, Sym):
        return node.name
    if isinstance(node, Num):
        return node.text or str(node.value)
    if isinstance(node, Str):
        return '"' + node.value.replace('"', '""') + '"'
    return "(" + " ".join(to_text(i) for i in node.items) + ")"
