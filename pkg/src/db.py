#!/usr/bin/env python3
"""
Store relacional de compuertas CNF (SQLite, un solo archivo).

Cinco tablas enlazan entidad → CNF → cláusula → átomo:
    ECNF(entity_id, cnf_id, entity_kind, side, subcohort)
    CNFD(cnf_id, clause_id, clause_role, origin, ord)
    DA(clause_id, atom_id, ord)
    AB(atom_id, relation, concept, qualifiers_digest, ..., bool_target, polarity, ventanas)
    AN(atom_id, relation, concept, qualifiers_digest, ..., lower, upper, unit, polarity, ventanas)
más QT (tokens de calificadores por digest) y meta(key, value).

AB y AN comparten el espacio de atom_id. Los extremos de ventanas e intervalos
se guardan como texto exacto de Fraction y se comparan con funciones
registradas en la conexión.
"""
import hashlib
import logging
import sqlite3
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from src.errors import CorruptStore, DuplicateEntity, StoreIoError, UnknownEntity
from src.formula import AtomicConstraint, CanonicalPredicate, Cmp, Interval, QualifierKey, Quantity
from src.projection import GateClause, GateCNF, Literal
from src.temporal import TimeWindow, decode_fraction, encode_fraction


logger = logging.getLogger(__name__)

DB_PATH = "data/satir.db"
SCHEMA_VERSION = 1

DIGEST_KINDS = ("Outcome", "Free")

WINDOW_COLUMNS = '''
            win_lo TEXT NOT NULL,
            win_hi TEXT NOT NULL,
            win_lo_incl INTEGER NOT NULL,
            win_hi_incl INTEGER NOT NULL,
            cert_lo TEXT,
            cert_hi TEXT,
            cert_lo_incl INTEGER,
            cert_hi_incl INTEGER'''


# === FUNCIONES SQL ===

def _window(lo, hi, lo_incl, hi_incl) -> TimeWindow:
    return TimeWindow(Fraction(lo), Fraction(hi), bool(lo_incl), bool(hi_incl))


def sql_time_overlaps(*cols) -> int:
    """time_overlaps(ventana criterio (4 cols), ventana posible del paciente (4 cols))"""
    return int(_window(*cols[:4]).overlaps(_window(*cols[4:])))


def sql_contains(strict, *cols) -> int:
    """contains(estricta, ventana criterio (4 cols), ventana cierta del paciente (4 cols))"""
    if cols[4] is None:
        return 0
    return int(_window(*cols[:4]).contains(_window(*cols[4:]), strict=bool(strict)))


def sql_interval_meets(*cols) -> int:
    """interval_meets(intervalo del ensayo (4 cols), intervalo del paciente (4 cols)); NULL = no acotado"""
    a = Interval(decode_fraction(cols[0]), decode_fraction(cols[1]), bool(cols[2]), bool(cols[3]))
    b = Interval(decode_fraction(cols[4]), decode_fraction(cols[5]), bool(cols[6]), bool(cols[7]))
    return int(a.intersects(b))


def register_functions(conn: sqlite3.Connection):
    conn.create_function("time_overlaps", 8, sql_time_overlaps, deterministic=True)
    conn.create_function("contains", 9, sql_contains, deterministic=True)
    conn.create_function("interval_meets", 8, sql_interval_meets, deterministic=True)


# === CONEXIÓN Y ESQUEMA ===

@dataclass
class StoreHandle:
    path: str
    conn: sqlite3.Connection

    def close(self):
        self.conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def get_connection(db_path: str = DB_PATH, read_only: bool = False) -> sqlite3.Connection:
    """Obtiene conexión a la base de datos con las funciones de ventanas registradas"""
    try:
        if read_only:
            conn = sqlite3.connect(f"file:{Path(db_path).as_posix()}?mode=ro", uri=True,
                                   check_same_thread=False)
        else:
            Path(db_path).parent.mkdir(parents=True, exist_ok=True)
            conn = sqlite3.connect(db_path)
    except (sqlite3.Error, OSError) as e:
        raise StoreIoError(f"no se pudo abrir {db_path}: {e}")
    conn.row_factory = sqlite3.Row
    conn.execute("PRAGMA foreign_keys = ON")
    register_functions(conn)
    return conn


def init_db(conn: sqlite3.Connection):
    """Crea el esquema completo (cinco tablas + QT + meta)"""
    cursor = conn.cursor()

    cursor.execute('''
        CREATE TABLE IF NOT EXISTS meta (
            key TEXT PRIMARY KEY,
            value TEXT NOT NULL
        )
    ''')

    # Entidad → CNF
    cursor.execute('''
        CREATE TABLE IF NOT EXISTS ECNF (
            cnf_id TEXT PRIMARY KEY,
            entity_id TEXT NOT NULL,
            entity_kind TEXT NOT NULL CHECK (entity_kind IN ('Trial', 'Patient')),
            side TEXT NOT NULL,
            subcohort TEXT NOT NULL
        )
    ''')

    # CNF → cláusula
    cursor.execute('''
        CREATE TABLE IF NOT EXISTS CNFD (
            clause_id INTEGER PRIMARY KEY,
            cnf_id TEXT NOT NULL REFERENCES ECNF(cnf_id),
            clause_role TEXT NOT NULL CHECK (clause_role IN ('RetrievalRelevant', 'Deferred', 'Knockout')),
            origin TEXT NOT NULL,
            ord INTEGER NOT NULL
        )
    ''')

    # Tokens de calificadores (sin timeframe ni unidad)
    cursor.execute('''
        CREATE TABLE IF NOT EXISTS QT (
            qualifiers_digest TEXT NOT NULL,
            ord INTEGER NOT NULL,
            kind TEXT NOT NULL,
            value TEXT NOT NULL,
            PRIMARY KEY (qualifiers_digest, ord)
        )
    ''')

    cursor.execute(f'''
        CREATE TABLE IF NOT EXISTS AB (
            atom_id INTEGER PRIMARY KEY,
            relation TEXT NOT NULL,
            concept TEXT NOT NULL,
            qualifiers_digest TEXT NOT NULL,
            timeframe TEXT,
            unit TEXT,
            cmp TEXT NOT NULL,
            bool_target INTEGER NOT NULL,
            polarity INTEGER NOT NULL,{WINDOW_COLUMNS}
        )
    ''')

    cursor.execute(f'''
        CREATE TABLE IF NOT EXISTS AN (
            atom_id INTEGER PRIMARY KEY,
            relation TEXT NOT NULL,
            concept TEXT NOT NULL,
            qualifiers_digest TEXT NOT NULL,
            timeframe TEXT,
            cmp TEXT NOT NULL,
            target_kind TEXT NOT NULL CHECK (target_kind IN ('quantity', 'interval')),
            value TEXT,
            lower TEXT,
            upper TEXT,
            lower_incl INTEGER NOT NULL,
            upper_incl INTEGER NOT NULL,
            unit TEXT,
            polarity INTEGER NOT NULL,{WINDOW_COLUMNS}
        )
    ''')

    # Cláusula → átomo (AB o AN)
    cursor.execute('''
        CREATE TABLE IF NOT EXISTS DA (
            clause_id INTEGER NOT NULL REFERENCES CNFD(clause_id),
            atom_id INTEGER NOT NULL,
            ord INTEGER NOT NULL,
            PRIMARY KEY (clause_id, atom_id)
        )
    ''')

    # Índices para los joins de recuperación
    cursor.execute('CREATE INDEX IF NOT EXISTS idx_ab_rel_concept ON AB(relation, concept)')
    cursor.execute('CREATE INDEX IF NOT EXISTS idx_an_rel_concept ON AN(relation, concept)')
    cursor.execute('CREATE INDEX IF NOT EXISTS idx_cnfd_cnf ON CNFD(cnf_id)')
    cursor.execute('CREATE INDEX IF NOT EXISTS idx_da_atom ON DA(atom_id)')
    cursor.execute('CREATE INDEX IF NOT EXISTS idx_ecnf_entity ON ECNF(entity_kind, entity_id)')

    conn.commit()


# === CODIFICACIÓN DE ÁTOMOS ===

def qualifier_tokens(p: CanonicalPredicate) -> Tuple[QualifierKey, ...]:
    return tuple(q for q in p.qualifiers if q.kind in DIGEST_KINDS)


def qualifiers_digest(tokens: Iterable[QualifierKey]) -> str:
    """Digest insensible al orden de los tokens"""
    text = "\n".join(sorted(f"{q.kind}={q.value}" for q in tokens))
    return hashlib.sha1(text.encode("utf-8")).hexdigest()[:16]


def _window_values(w: Optional[TimeWindow]) -> Tuple:
    if w is None:
        return None, None, None, None
    return encode_fraction(w.lower), encode_fraction(w.upper), int(w.lower_inclusive), int(w.upper_inclusive)


def _atom_row(lit: Literal) -> Tuple[str, Tuple]:
    """(tabla, contenido) de un literal; el contenido identifica al átomo"""
    c = lit.constraint
    p = c.predicate
    if not isinstance(p, CanonicalPredicate):
        raise CorruptStore(f"átomo no canónico en una compuerta: {p!r}")
    timeframe = p.timeframe.render() if p.timeframe is not None else None
    digest = qualifiers_digest(qualifier_tokens(p))
    windows = _window_values(lit.window) + _window_values(lit.cert_window)

    if not c.is_numeric:
        return "AB", (p.relation, p.concept, digest, timeframe, p.unit, c.cmp.value,
                      int(bool(c.target)), int(lit.positive)) + windows

    t = c.target
    if isinstance(t, Quantity):
        kind, value = "quantity", encode_fraction(t.value)
        interval = c.to_interval() or Interval(None, None)
    else:
        kind, value, interval = "interval", None, t
    return "AN", (p.relation, p.concept, digest, timeframe, c.cmp.value, kind, value,
                  encode_fraction(interval.lower), encode_fraction(interval.upper),
                  int(interval.lower_inclusive), int(interval.upper_inclusive),
                  c.unit, int(lit.positive)) + windows


AB_COLUMNS = ("relation", "concept", "qualifiers_digest", "timeframe", "unit", "cmp", "bool_target",
              "polarity", "win_lo", "win_hi", "win_lo_incl", "win_hi_incl",
              "cert_lo", "cert_hi", "cert_lo_incl", "cert_hi_incl")
AN_COLUMNS = ("relation", "concept", "qualifiers_digest", "timeframe", "cmp", "target_kind", "value",
              "lower", "upper", "lower_incl", "upper_incl", "unit", "polarity",
              "win_lo", "win_hi", "win_lo_incl", "win_hi_incl",
              "cert_lo", "cert_hi", "cert_lo_incl", "cert_hi_incl")


def cnf_key(gate: GateCNF) -> str:
    return f"{gate.entity_kind.lower()}:{gate.owner}"


# === CONSTRUCCIÓN ===

def build_store(gates: Iterable[GateCNF], path: str = DB_PATH, ontology_digest: str = "") -> StoreHandle:
    """
    Crea el store desde cero con las compuertas dadas.

    El contenido es función pura del conjunto de compuertas: se ordenan antes
    de insertar y los átomos idénticos comparten atom_id.

    Raises:
        DuplicateEntity: dos compuertas con el mismo cnf_id
        StoreIoError: no se puede escribir el archivo
    """
    gates = sorted(gates, key=lambda g: (g.entity_kind, g.owner))
    seen = set()
    for g in gates:
        key = cnf_key(g)
        if key in seen:
            raise DuplicateEntity(f"compuerta repetida: {key}")
        seen.add(key)

    path = str(path)
    if Path(path).exists():
        try:
            Path(path).unlink()
        except OSError as e:
            raise StoreIoError(f"no se pudo reemplazar {path}: {e}")
    conn = get_connection(path)
    init_db(conn)

    atoms: Dict[Tuple[str, Tuple], int] = {}
    digests: Dict[str, Tuple[QualifierKey, ...]] = {}
    ecnf_rows, cnfd_rows, da_rows = [], [], []
    clause_id = 0

    for g in gates:
        key = cnf_key(g)
        ecnf_rows.append((key, g.entity_id, g.entity_kind, g.side, g.subcohort))
        for i, clause in enumerate(g.clauses):
            clause_id += 1
            cnfd_rows.append((clause_id, key, clause.role, clause.origin, i))
            for j, lit in enumerate(clause.literals):
                table, content = _atom_row(lit)
                atom_id = atoms.setdefault((table, content), len(atoms) + 1)
                da_rows.append((clause_id, atom_id, j))
                p = lit.constraint.predicate
                digests.setdefault(content[2], qualifier_tokens(p))

    try:
        cursor = conn.cursor()
        cursor.executemany('INSERT INTO ECNF (cnf_id, entity_id, entity_kind, side, subcohort) VALUES (?, ?, ?, ?, ?)',
                           ecnf_rows)
        cursor.executemany('INSERT INTO CNFD (clause_id, cnf_id, clause_role, origin, ord) VALUES (?, ?, ?, ?, ?)',
                           cnfd_rows)
        for (table, content), atom_id in atoms.items():
            columns = AB_COLUMNS if table == "AB" else AN_COLUMNS
            placeholders = ", ".join("?" * (len(columns) + 1))
            cursor.execute(f'INSERT INTO {table} (atom_id, {", ".join(columns)}) VALUES ({placeholders})',
                           (atom_id,) + content)
        cursor.executemany('INSERT INTO DA (clause_id, atom_id, ord) VALUES (?, ?, ?)', da_rows)
        cursor.executemany('INSERT INTO QT (qualifiers_digest, ord, kind, value) VALUES (?, ?, ?, ?)', [
            (digest, i, q.kind, q.value)
            for digest, tokens in sorted(digests.items()) for i, q in enumerate(tokens)
        ])
        cursor.executemany('INSERT INTO meta (key, value) VALUES (?, ?)', [
            ("schema_version", str(SCHEMA_VERSION)),
            ("ontology_digest", ontology_digest),
        ])
        conn.commit()
    except sqlite3.Error as e:
        conn.close()
        raise StoreIoError(f"error escribiendo {path}: {e}")

    logger.info(f"store {path}: {len(gates)} compuertas, {clause_id} cláusulas, {len(atoms)} átomos")
    return StoreHandle(path, conn)


def open_store(path: str = DB_PATH, read_only: bool = True) -> StoreHandle:
    """
    Raises:
        StoreIoError: el archivo no existe
        CorruptStore: falta el esquema o la versión no coincide
    """
    if not Path(path).exists():
        raise StoreIoError(f"no existe el store {path}")
    conn = None
    try:
        conn = get_connection(str(path), read_only=read_only)
        row = conn.execute("SELECT value FROM meta WHERE key = 'schema_version'").fetchone()
    except sqlite3.DatabaseError as e:
        if conn is not None:
            conn.close()
        raise CorruptStore(f"{path}: {e}")
    if row is None or int(row["value"]) != SCHEMA_VERSION:
        conn.close()
        raise CorruptStore(f"{path}: versión de esquema {row['value'] if row else None}, se esperaba {SCHEMA_VERSION}")
    return StoreHandle(str(path), conn)


def get_meta(h: StoreHandle, key: str) -> Optional[str]:
    row = h.conn.execute("SELECT value FROM meta WHERE key = ?", (key,)).fetchone()
    return row["value"] if row else None


# === LECTURA ===

def _tokens(h: StoreHandle, digest: str, cache: Dict[str, Tuple[QualifierKey, ...]]) -> Tuple[QualifierKey, ...]:
    if digest not in cache:
        rows = h.conn.execute("SELECT kind, value FROM QT WHERE qualifiers_digest = ? ORDER BY ord", (digest,))
        cache[digest] = tuple(QualifierKey(r["kind"], r["value"]) for r in rows)
    return cache[digest]


def _predicate(row, unit: Optional[str], tokens: Tuple[QualifierKey, ...]) -> CanonicalPredicate:
    qualifiers = []
    if row["timeframe"] is not None:
        qualifiers.append(QualifierKey("Timeframe", row["timeframe"]))
    qualifiers.extend(q for q in tokens if q.kind == "Outcome")
    if unit is not None:
        qualifiers.append(QualifierKey("Unit", unit))
    qualifiers.extend(q for q in tokens if q.kind == "Free")
    return CanonicalPredicate(row["relation"], row["concept"], tuple(qualifiers))


def _windows(row) -> Tuple[TimeWindow, Optional[TimeWindow]]:
    window = _window(row["win_lo"], row["win_hi"], row["win_lo_incl"], row["win_hi_incl"])
    cert = None
    if row["cert_lo"] is not None:
        cert = _window(row["cert_lo"], row["cert_hi"], row["cert_lo_incl"], row["cert_hi_incl"])
    return window, cert


def load_literal(h: StoreHandle, atom_id: int, cache: Optional[dict] = None) -> Literal:
    cache = {} if cache is None else cache
    row = h.conn.execute("SELECT * FROM AB WHERE atom_id = ?", (atom_id,)).fetchone()
    if row is not None:
        pred = _predicate(row, row["unit"], _tokens(h, row["qualifiers_digest"], cache))
        window, cert = _windows(row)
        return Literal(AtomicConstraint(pred, Cmp(row["cmp"]), bool(row["bool_target"])),
                       bool(row["polarity"]), window, cert)

    row = h.conn.execute("SELECT * FROM AN WHERE atom_id = ?", (atom_id,)).fetchone()
    if row is None:
        raise CorruptStore(f"átomo {atom_id} referenciado pero ausente de AB y AN")
    unit = row["unit"]
    pred = _predicate(row, unit, _tokens(h, row["qualifiers_digest"], cache))
    if row["target_kind"] == "quantity":
        target = Quantity(decode_fraction(row["value"]), pred.unit)
    else:
        target = Interval(decode_fraction(row["lower"]), decode_fraction(row["upper"]),
                          bool(row["lower_incl"]), bool(row["upper_incl"]), unit)
    window, cert = _windows(row)
    return Literal(AtomicConstraint(pred, Cmp(row["cmp"]), target), bool(row["polarity"]), window, cert)


def _load_gate(h: StoreHandle, ecnf, cache: dict) -> GateCNF:
    owner = ecnf["cnf_id"].split(":", 1)[1]
    clauses = []
    for c in h.conn.execute("SELECT * FROM CNFD WHERE cnf_id = ? ORDER BY ord", (ecnf["cnf_id"],)).fetchall():
        atom_ids = [r["atom_id"] for r in h.conn.execute(
            "SELECT atom_id FROM DA WHERE clause_id = ? ORDER BY ord", (c["clause_id"],))]
        literals = tuple(load_literal(h, a, cache) for a in atom_ids)
        clauses.append(GateClause(literals, c["clause_role"], c["origin"]))
    return GateCNF(owner=owner, entity_kind=ecnf["entity_kind"], entity_id=ecnf["entity_id"],
                   side=ecnf["side"], subcohort=ecnf["subcohort"], clauses=tuple(clauses))


def dump_entity(h: StoreHandle, key: str) -> GateCNF:
    """
    Reconstruye la compuerta ingerida. `key` es el owner de la compuerta
    (p.ej. "NCT00362869/main/inclusion" o el id del paciente) o un entity_id
    con una única compuerta.

    Raises:
        UnknownEntity
    """
    rows = h.conn.execute("SELECT * FROM ECNF WHERE substr(cnf_id, instr(cnf_id, ':') + 1) = ?",
                          (key,)).fetchall()
    if not rows:
        rows = h.conn.execute("SELECT * FROM ECNF WHERE entity_id = ?", (key,)).fetchall()
    if len(rows) != 1:
        hint = f" ({len(rows)} compuertas, usar el owner)" if rows else ""
        raise UnknownEntity(f"entidad desconocida: {key!r}{hint}")
    return _load_gate(h, rows[0], {})


def dump_all(h: StoreHandle, entity_kind: Optional[str] = None) -> List[GateCNF]:
    query = "SELECT * FROM ECNF"
    params: Tuple = ()
    if entity_kind:
        query += " WHERE entity_kind = ?"
        params = (entity_kind,)
    cache: dict = {}
    return [_load_gate(h, row, cache) for row in h.conn.execute(query + " ORDER BY cnf_id", params).fetchall()]


def entity_ids(h: StoreHandle, entity_kind: str = "Patient") -> List[str]:
    rows = h.conn.execute("SELECT DISTINCT entity_id FROM ECNF WHERE entity_kind = ? ORDER BY entity_id",
                          (entity_kind,))
    return [r["entity_id"] for r in rows]


def entity_gates(h: StoreHandle, entity_id: str, entity_kind: str = "Trial") -> List[GateCNF]:
    rows = h.conn.execute("SELECT * FROM ECNF WHERE entity_id = ? AND entity_kind = ? ORDER BY cnf_id",
                          (entity_id, entity_kind)).fetchall()
    if not rows:
        raise UnknownEntity(f"entidad desconocida: {entity_id!r}")
    cache: dict = {}
    return [_load_gate(h, row, cache) for row in rows]


# === INTEGRIDAD Y ESTADÍSTICAS ===

def integrity_scan(h: StoreHandle) -> List[str]:
    """Lista de problemas de integridad referencial (vacía si el store es consistente)"""
    problems = []
    checks = {
        "CNFD sin ECNF": "SELECT COUNT(*) FROM CNFD c LEFT JOIN ECNF e ON e.cnf_id = c.cnf_id WHERE e.cnf_id IS NULL",
        "DA sin CNFD": "SELECT COUNT(*) FROM DA d LEFT JOIN CNFD c ON c.clause_id = d.clause_id WHERE c.clause_id IS NULL",
        "DA sin átomo": '''SELECT COUNT(*) FROM DA d
                           WHERE d.atom_id NOT IN (SELECT atom_id FROM AB)
                             AND d.atom_id NOT IN (SELECT atom_id FROM AN)''',
        "átomo en AB y AN": "SELECT COUNT(*) FROM AB JOIN AN ON AN.atom_id = AB.atom_id",
        "átomo huérfano": '''SELECT COUNT(*) FROM (SELECT atom_id FROM AB UNION SELECT atom_id FROM AN)
                             WHERE atom_id NOT IN (SELECT atom_id FROM DA)''',
        "digest sin tokens": '''SELECT COUNT(*) FROM (SELECT qualifiers_digest FROM AB UNION SELECT qualifiers_digest FROM AN) a
                                WHERE a.qualifiers_digest != ? AND a.qualifiers_digest NOT IN (SELECT qualifiers_digest FROM QT)''',
    }
    empty = qualifiers_digest(())
    for name, query in checks.items():
        params = (empty,) if "?" in query else ()
        n = h.conn.execute(query, params).fetchone()[0]
        if n:
            problems.append(f"{name}: {n}")
    for row in h.conn.execute("PRAGMA foreign_key_check"):
        problems.append(f"clave foránea rota en {row[0]} (rowid {row[1]})")
    return problems


def get_stats(h: StoreHandle) -> dict:
    """Obtiene estadísticas del store"""
    cursor = h.conn.cursor()
    stats = {"schema_version": get_meta(h, "schema_version"), "ontology_digest": get_meta(h, "ontology_digest")}
    for table in ("ECNF", "CNFD", "DA", "AB", "AN", "QT"):
        stats[table] = cursor.execute(f"SELECT COUNT(*) FROM {table}").fetchone()[0]
    cursor.execute("SELECT entity_kind, COUNT(DISTINCT entity_id) FROM ECNF GROUP BY entity_kind")
    stats["entities"] = {row[0]: row[1] for row in cursor.fetchall()}
    cursor.execute("SELECT clause_role, COUNT(*) FROM CNFD GROUP BY clause_role ORDER BY clause_role")
    stats["roles"] = {row[0]: row[1] for row in cursor.fetchall()}
    return stats
