#!/usr/bin/env python3
"""
Script principal: ingesta, consulta, verificación y benchmark del store SATIR.

Uso:
    python scripts/run_pipeline.py ingest --trials tests/data --patients tests/data/patients
    python scripts/run_pipeline.py query P001 --objective treat-any --explain
    python scripts/run_pipeline.py verify --seeds 50
    python scripts/run_pipeline.py bench
    python scripts/run_pipeline.py status

Las líneas de progreso van a stderr; los resultados (NDJSON) a stdout.
"""
import argparse
import json
import logging
import statistics
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.closure import load_relation_rules, run_closure
from src.config import ConfigError, RunConfig, load_config, setup_logging
from src.db import build_store, cnf_key, get_meta, get_stats, integrity_scan, open_store
from src.errors import DuplicateEntity, SatirError, TooLarge, UnknownObjective
from src.ontology import load_interpretation_mappings, load_ontology, ontology_digest
from src.oracle import (
    WorldParams, generate_world, naive_retrieve, timed, verify_full_recall, world_gates,
)
from src.projection import load_salience_policy, project_patient, project_trial, SaliencePolicy
from src.retrieval import explain, get_objective, render_explanation, retrieve
from src.smt_frontend import load_patient_facts, load_trial_program


logger = logging.getLogger("run_pipeline")

EXIT_OK, EXIT_FAILURE, EXIT_EMPTY, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class PipelineParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"❌ {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def say(text: str = ""):
    print(text, file=sys.stderr)


def banner(title: str):
    say("\n" + "═" * 60)
    say(f" {title}")
    say("═" * 60)


def emit(record: dict):
    print(json.dumps(record, ensure_ascii=False, sort_keys=True))


# === CARGA COMÚN ===

def load_world_inputs(cfg: RunConfig):
    mappings = load_interpretation_mappings(cfg.interpretations_path) if cfg.interpretations_path \
        and cfg.interpretations_path.exists() else None
    o = load_ontology(cfg.ontology_path, mappings)
    rules = load_relation_rules(cfg.rules_path) if cfg.rules_path and cfg.rules_path.exists() else ()
    policy = load_salience_policy(cfg.policy_path, o) if cfg.policy_path and cfg.policy_path.exists() \
        else SaliencePolicy()
    return o, rules, policy


def objective_for(cfg: RunConfig, o):
    try:
        return get_objective(cfg.objective, cfg.objectives or None, o,
                             enforce_knockouts=cfg.knockouts,
                             subsumption_fallback=cfg.subsumption_fallback,
                             strict_containment=cfg.strict_containment)
    except UnknownObjective as e:
        raise UsageError(str(e))


# === INGESTA ===

def _ingest_trial(path: Path, o, policy, cfg: RunConfig):
    program = load_trial_program(path)
    return project_trial(program, o, policy, clause_cap=cfg.clause_cap, on_ontology_miss=cfg.on_ontology_miss)


def _ingest_patient(path: Path, o, rules, cfg: RunConfig):
    patient_id, facts = load_patient_facts(path)
    closed = run_closure(facts, o, rules, cfg.closure)
    return project_patient(closed.facts, patient_id), len(facts), len(closed.facts)


def cmd_ingest(args, cfg: RunConfig) -> int:
    banner("📥 INGESTA DE ENSAYOS Y PACIENTES")
    o, rules, policy = load_world_inputs(cfg)
    trial_files = sorted(Path(args.trials).rglob("*_program.smt2")) if args.trials else []
    patient_files = sorted(p for p in Path(args.patients).rglob("*.json")
                           if not p.name.endswith("_targets.json")) if args.patients else []
    say(f" 📄 Programas: {len(trial_files)} | 🧑 Pacientes: {len(patient_files)}")

    def guarded(fn, path, *rest):
        try:
            return path, fn(path, *rest), None
        except SatirError as e:
            return path, None, e

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        trials = list(pool.map(lambda p: guarded(_ingest_trial, p, o, policy, cfg), trial_files))
        patients = list(pool.map(lambda p: guarded(_ingest_patient, p, o, rules, cfg), patient_files))

    ingested, errors = [], []

    def failed(path: Path, err: SatirError):
        errors.append({"file": str(path), "error": type(err).__name__, "message": str(err)})
        say(f"   ❌ {path.name}: {err}")

    for path, gate, err in trials:
        if err is not None:
            failed(path, err)
        else:
            ingested.append((path, gate, 0))
            say(f"   ✅ {gate.entity_id}/{gate.side}: {len(gate.relevant)} relevantes, "
                f"{len(gate.knockouts)} knockouts, {len(gate.clauses)} cláusulas")
    for path, out, err in patients:
        if err is not None:
            failed(path, err)
        else:
            gate, n_in, n_out = out
            ingested.append((path, gate, n_out - n_in))
            say(f"   ✅ paciente {gate.entity_id}: {n_in} hechos → {n_out} tras la clausura")

    # la misma compuerta desde dos archivos: queda la del primero en orden de ruta
    gates, sources, derived = [], {}, 0
    for path, gate, n_derived in ingested:
        key = cnf_key(gate)
        if key in sources:
            failed(path, DuplicateEntity(f"compuerta repetida: {key} (ya ingerida desde {sources[key]})"))
            continue
        sources[key] = path
        gates.append(gate)
        derived += n_derived

    report = {
        "trials": sum(1 for g in gates if g.entity_kind == "Trial"),
        "patients": sum(1 for g in gates if g.entity_kind == "Patient"),
        "derived_facts": derived,
        "errors": errors,
        "store": str(cfg.store_path),
    }
    if not gates:
        say("\n ⚠️ Nada que ingerir")
        emit(report)
        return EXIT_EMPTY

    cfg.store_path.parent.mkdir(parents=True, exist_ok=True)
    (h, seconds) = timed(build_store, gates, str(cfg.store_path), ontology_digest(o))
    with h:
        report["stats"] = get_stats(h)
    report["build_seconds"] = round(seconds, 4)
    say(f"\n 💾 Store: {cfg.store_path} ({seconds:.2f}s) | errores: {len(errors)}")
    emit(report)
    return EXIT_OK


# === CONSULTA ===

def _open_checked(cfg: RunConfig, o):
    h = open_store(str(cfg.store_path))
    digest = get_meta(h, "ontology_digest")
    if digest and digest != ontology_digest(o):
        h.close()
        raise SatirError(f"el store {cfg.store_path} se construyó con otra ontología")
    return h


def cmd_query(args, cfg: RunConfig) -> int:
    o, _, _ = load_world_inputs(cfg)
    obj = objective_for(cfg, o)
    banner(f"🔎 CONSULTA [{obj.name}]")
    with _open_checked(cfg, o) as h:
        if args.trial:
            if len(args.patient_ids) != 1:
                raise UsageError("--trial requiere exactamente un paciente")
            report = explain(h, o, args.trial, args.patient_ids[0], obj, args.subcohort)
            if args.format == "table":
                print(render_explanation(report))
            else:
                emit(report)
            return EXIT_OK

        results = retrieve(h, o, obj, args.patient_ids or None, engine=cfg.engine, workers=cfg.workers)
        if args.explain:
            for r in results:
                r.explanations = explain(h, o, r.trial_id, r.patient_id, obj, r.subcohort)
    say(f" ✅ {len(results)} pares recuperados")
    for r in results:
        if args.format == "table":
            print(f"{r.patient_id:<12} {r.trial_id:<16} {r.subcohort:<10} "
                  f"{r.supported_clause_count}/{r.relevant_clause_count}")
            if r.explanations:
                print(render_explanation(r.explanations))
        else:
            emit(r.to_dict())
    return EXIT_OK


# === VERIFICACIÓN ===

def _world_params(args, lossless: bool) -> WorldParams:
    sizes = dict(n_concepts=args.n_concepts, n_trials=args.n_trials, n_patients=args.n_patients,
                 depth=args.depth)
    if lossless:
        return WorldParams.lossless(**sizes)
    return WorldParams(missingness_rate=args.missingness_rate, **sizes)


def cmd_verify(args, cfg: RunConfig) -> int:
    banner("🧪 VERIFICACIÓN DE RECALL COMPLETO")
    rules = load_relation_rules(cfg.rules_path) if cfg.rules_path and cfg.rules_path.exists() else ()
    params = _world_params(args, args.lossless)
    seeds = list(range(cfg.seed, cfg.seed + args.seeds))

    def one(seed: int) -> dict:
        world = generate_world(seed, params, rules, cfg.closure)
        obj = get_objective(cfg.objective, cfg.objectives or None, world.ontology,
                            enforce_knockouts=cfg.knockouts, strict_containment=cfg.strict_containment)
        try:
            report = verify_full_recall(world, obj, engine=cfg.engine)
        except TooLarge as e:
            return {"seed": seed, "error": str(e), "missed": []}
        if args.lossless:
            report["exact"] = report["extra_count"] == 0 and not report["missed"]
        return report

    objective_for(cfg, None)
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        reports = list(pool.map(one, seeds))

    missed = sum(len(r["missed"]) for r in reports)
    errors = sum(1 for r in reports if "error" in r)
    inexact = sum(1 for r in reports if r.get("exact") is False)
    for r in reports:
        emit(r)
    icon = "✅" if not (missed or errors or inexact) else "❌"
    say(f" {icon} {len(seeds)} mundos | pares perdidos: {missed} | errores: {errors}"
        + (f" | no exactos: {inexact}" if args.lossless else ""))
    return EXIT_FAILURE if missed or errors or inexact else EXIT_OK


# === BENCHMARK ===

def cmd_bench(args, cfg: RunConfig) -> int:
    bench = cfg.bench
    n_trials = args.n_trials if args.n_trials is not None else bench.get("n_trials", 3621)
    n_patients = args.n_patients if args.n_patients is not None else bench.get("n_patients", 1)
    n_concepts = args.n_concepts if args.n_concepts is not None else bench.get("n_concepts", 100)
    repetitions = args.repetitions or bench.get("repetitions", 3)
    banner(f"⏱️ BENCHMARK: {n_trials} ensayos × {n_patients} pacientes")

    world = generate_world(cfg.seed, WorldParams(n_concepts=n_concepts, n_trials=n_trials, n_patients=n_patients))
    obj = objective_for(cfg, world.ontology)
    gates = world_gates(world)
    tmp = tempfile.TemporaryDirectory()
    h, build_seconds = timed(build_store, gates, str(Path(tmp.name) / "bench.db"), ontology_digest(world.ontology))
    say(f" 💾 Store construido en {build_seconds:.2f}s")

    latencies, result_sets = [], set()
    with tmp, h:
        for rep in range(repetitions):
            for pid in sorted(world.patients):
                results, seconds = timed(retrieve, h, world.ontology, obj, [pid], engine=cfg.engine)
                latencies.append(seconds)
                result_sets.add((rep, pid, tuple(r.key for r in results)))
        stats = get_stats(h)

    by_patient = {}
    for _, pid, keys in result_sets:
        by_patient.setdefault(pid, set()).add(keys)
    stable = all(len(v) == 1 for v in by_patient.values())

    trial_gates = [g for g in gates if g.entity_kind == "Trial"]
    patient_gates = [g for g in gates if g.entity_kind == "Patient"]
    naive, naive_seconds = timed(naive_retrieve, trial_gates, patient_gates, world.ontology, obj)

    report = {
        "n_trials": n_trials,
        "n_patients": n_patients,
        "repetitions": repetitions,
        "build_seconds": round(build_seconds, 4),
        "median_patient_seconds": round(statistics.median(latencies), 4) if latencies else None,
        "naive_seconds": round(naive_seconds, 4),
        "naive_pairs": len(naive),
        "rows": {t: stats[t] for t in ("ECNF", "CNFD", "DA", "AB", "AN", "QT")},
        "stable_results": stable,
    }
    say(f" ✅ mediana por paciente: {report['median_patient_seconds']}s | línea base ingenua: {naive_seconds:.2f}s")
    emit(report)
    return EXIT_OK if stable else EXIT_FAILURE


# === ESTADO ===

def cmd_status(args, cfg: RunConfig) -> int:
    with open_store(str(cfg.store_path)) as h:
        stats = get_stats(h)
        problems = integrity_scan(h)
    banner("📊 ESTADO DEL STORE")
    say(f" Ruta: {cfg.store_path}")
    say(f" Versión de esquema: {stats['schema_version']}")
    say(f" Ontología: {stats['ontology_digest'] or '-'}")
    say()
    for kind, n in sorted(stats["entities"].items()):
        say(f" {'🧪' if kind == 'Trial' else '🧑'} {kind}: {n}")
    say(" ─" * 30)
    for table in ("ECNF", "CNFD", "DA", "AB", "AN", "QT"):
        say(f"   {table:<5} {stats[table]:>8}")
    for role, n in stats["roles"].items():
        say(f"   {role:<18} {n:>8}")
    say(f"\n {'✅' if not problems else '❌'} Integridad: {'OK' if not problems else '; '.join(problems)}")
    emit({**stats, "problems": problems})
    return EXIT_OK if not problems else EXIT_FAILURE


# === CLI ===

def build_parser() -> PipelineParser:
    parser = PipelineParser(description="SATIR: recuperación de ensayos clínicos por satisfacción de restricciones")
    parser.add_argument("--config", help="config.yaml alternativo (o SATIR_CONFIG)")
    parser.add_argument("-v", "--verbose", action="store_true")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--ontology")
    common.add_argument("--rules")
    common.add_argument("--policy")
    common.add_argument("--store", help="ruta del store (o SATIR_STORE)")
    common.add_argument("--objective", help="treat-chief | treat-any | relevant-to-any | objetivo custom")
    common.add_argument("--knockouts", action="store_true", help="aplica la lista de knockouts")
    common.add_argument("--workers", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--engine", choices=["sql", "memory"])

    sub = parser.add_subparsers(dest="command", parser_class=PipelineParser)

    ingest = sub.add_parser("ingest", parents=[common], help="Parsea, clausura, proyecta y construye el store")
    ingest.add_argument("--trials", help="directorio con programas *_{inclusion,exclusion}_program.smt2")
    ingest.add_argument("--patients", help="directorio con hechos de pacientes (*.json)")

    query = sub.add_parser("query", parents=[common], help="Consulta el store por paciente")
    query.add_argument("patient_ids", nargs="*")
    query.add_argument("--explain", action="store_true")
    query.add_argument("--trial", help="explica un único par (ensayo, paciente)")
    query.add_argument("--subcohort")
    query.add_argument("--format", choices=["ndjson", "table"], default="ndjson")

    for name, help_text in (("verify", "Compara motor y oráculo sobre mundos sintéticos"),
                            ("bench", "Latencia por paciente sobre un store sintético")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--n-concepts", type=int, default=None if name == "bench" else 20)
        p.add_argument("--n-trials", type=int, default=None if name == "bench" else 10)
        p.add_argument("--n-patients", type=int, default=None if name == "bench" else 5)
        if name == "verify":
            p.add_argument("--seeds", type=int, default=20, help="cantidad de mundos")
            p.add_argument("--depth", type=int, default=3)
            p.add_argument("--missingness-rate", type=float, default=0.3)
            p.add_argument("--lossless", action="store_true", help="exige igualdad exacta motor = oráculo")
        else:
            p.add_argument("--repetitions", type=int)

    sub.add_parser("status", parents=[common], help="Estadísticas e integridad del store")
    return parser


REQUIRED_PATHS = {
    "ingest": ("ontology",),
    "query": ("ontology", "store"),
    "status": ("store",),
    "verify": (),
    "bench": (),
}
COMMANDS = {"ingest": cmd_ingest, "query": cmd_query, "verify": cmd_verify, "bench": cmd_bench, "status": cmd_status}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    try:
        config = load_config(args.config)
        setup_logging(config, args.verbose)
        cfg = RunConfig.from_args(args, config, REQUIRED_PATHS[args.command])
        if args.command == "ingest" and not (args.trials or args.patients):
            raise UsageError("ingest requiere --trials y/o --patients")
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as e:
        say(f"❌ {e}")
        return EXIT_USAGE
    except SatirError as e:
        say(f"❌ {type(e).__name__}: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
