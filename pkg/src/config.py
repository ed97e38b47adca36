"""
Configuración: config.yaml + .env

Prioridad: flag de la CLI > variable de entorno > config.yaml > valor por defecto.
"""
import copy
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml
from dotenv import load_dotenv

from src.closure import ClosureConfig


ROOT = Path(__file__).parent.parent
CONFIG_PATH = ROOT / "config.yaml"

DEFAULTS = {
    "paths": {
        "ontology": "data/ontology_demo.jsonl",
        "rules": "data/relation_rules.json",
        "policy": "data/salience_policy.json",
        "interpretations": "data/interpretation_mappings.json",
    },
    "store": {"path": "data/satir.db", "schema_version": 1},
    "closure": {"max_passes": 6, "max_hops_concept": 8, "max_derived_per_pass": 20000,
                "enable_negative_descendants": False},
    "projection": {"clause_cap": 512, "on_ontology_miss": "error", "knockouts": False,
                   "strict_containment": False},
    "retrieval": {"objective": "treat-chief", "engine": "sql", "subsumption_fallback": False, "workers": 1},
    "objectives": {},
    "bench": {"n_trials": 3621, "n_patients": 1, "n_concepts": 100, "repetitions": 3, "seed": 7},
    "logging": {"level": "INFO", "format": "%(asctime)s %(levelname)s %(name)s: %(message)s"},
}


class ConfigError(ValueError):
    """Ruta inexistente o valor inválido al iniciar un comando (error de uso)"""


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: Optional[str] = None) -> dict:
    """
    Carga .env y luego el YAML (SATIR_CONFIG o config.yaml) sobre DEFAULTS.
    Un archivo ausente deja los valores por defecto.
    """
    load_dotenv()
    path = Path(path or os.getenv("SATIR_CONFIG") or CONFIG_PATH)
    if not path.exists():
        return copy.deepcopy(DEFAULTS)
    with open(path, "r", encoding="utf-8") as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: se esperaba un mapeo YAML")
    return _merge(DEFAULTS, raw)


def setup_logging(config: dict, verbose: bool = False):
    cfg = config.get("logging", {})
    level = "DEBUG" if verbose else str(cfg.get("level", "INFO")).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=cfg.get("format"))


def _resolve(path: Optional[str]) -> Optional[Path]:
    if path is None:
        return None
    p = Path(path)
    return p if p.is_absolute() else (Path.cwd() / p if (Path.cwd() / p).exists() else ROOT / p)


@dataclass
class RunConfig:
    ontology_path: Optional[Path]
    rules_path: Optional[Path]
    policy_path: Optional[Path]
    store_path: Path
    objective: str = "treat-chief"
    closure: ClosureConfig = field(default_factory=ClosureConfig)
    knockouts: bool = False
    workers: int = 1
    seed: int = 7
    engine: str = "sql"
    clause_cap: int = 512
    on_ontology_miss: str = "error"
    strict_containment: bool = False
    subsumption_fallback: bool = False
    objectives: dict = field(default_factory=dict)
    interpretations_path: Optional[Path] = None
    bench: dict = field(default_factory=dict)

    @classmethod
    def from_args(cls, args, config: dict, require=("ontology",)) -> "RunConfig":
        """
        Combina los flags con la configuración y valida que existan las rutas
        pedidas en `require` (ontology, rules, policy, store).

        Raises:
            ConfigError
        """
        def pick(flag: str, section: str, key: str, env: Optional[str] = None):
            value = getattr(args, flag, None)
            if value is not None:
                return value
            if env and os.getenv(env):
                return os.getenv(env)
            return config[section][key]

        paths = {
            "ontology": _resolve(pick("ontology", "paths", "ontology")),
            "rules": _resolve(pick("rules", "paths", "rules")),
            "policy": _resolve(pick("policy", "paths", "policy")),
            "store": Path(pick("store", "store", "path", env="SATIR_STORE")),
        }
        for name in require:
            if paths[name] is None or not paths[name].exists():
                raise ConfigError(f"--{name}: no existe {paths[name]}")

        workers = int(pick("workers", "retrieval", "workers"))
        if workers <= 0:
            raise ConfigError("--workers debe ser positivo")
        retrieval, projection = config["retrieval"], config["projection"]
        knockouts = bool(getattr(args, "knockouts", False) or projection.get("knockouts", False))
        return cls(
            ontology_path=paths["ontology"],
            rules_path=paths["rules"],
            policy_path=paths["policy"],
            store_path=paths["store"],
            objective=pick("objective", "retrieval", "objective"),
            closure=ClosureConfig.from_dict(config["closure"]),
            knockouts=knockouts,
            workers=workers,
            seed=int(pick("seed", "bench", "seed")),
            engine=pick("engine", "retrieval", "engine"),
            clause_cap=int(projection["clause_cap"]),
            on_ontology_miss=projection["on_ontology_miss"],
            strict_containment=bool(projection.get("strict_containment", False)),
            subsumption_fallback=bool(retrieval.get("subsumption_fallback", False)),
            objectives=config.get("objectives") or {},
            interpretations_path=_resolve(config["paths"].get("interpretations")),
            bench=config.get("bench", {}),
        )
