import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(ROOT))

from src.ontology import load_ontology, parse_ontology  # noqa: E402
from src.projection import SaliencePolicy  # noqa: E402


DATA = Path(__file__).parent / "data"
CORPUS = DATA / "NCT00362869" / "main"
INCLUSION = CORPUS / "NCT00362869_inclusion_program.smt2"
EXCLUSION = CORPUS / "NCT00362869_exclusion_program.smt2"
PATIENTS = DATA / "patients"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: barridos largos (pytest -m slow)")


def pytest_collection_modifyitems(config, items):
    if "slow" in (config.getoption("-m") or ""):
        return
    skip = pytest.mark.skip(reason="barrido largo: correr con -m slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def corpus_ontology():
    return load_ontology(DATA / "NCT00362869" / "ontology.jsonl")


@pytest.fixture(scope="session")
def demo_ontology():
    return load_ontology(ROOT / "data" / "ontology_demo.jsonl")


@pytest.fixture
def small_ontology():
    """disease ⊒ infection ⊒ {pneumonia, sepsis}; age"""
    lines = [
        '{"type": "concept", "id": "disease"}',
        '{"type": "concept", "id": "infection"}',
        '{"type": "concept", "id": "pneumonia"}',
        '{"type": "concept", "id": "sepsis"}',
        '{"type": "concept", "id": "age"}',
        '{"type": "concept", "id": "aspirin"}',
        '{"type": "isa", "child": "infection", "parent": "disease"}',
        '{"type": "isa", "child": "pneumonia", "parent": "infection"}',
        '{"type": "isa", "child": "sepsis", "parent": "infection"}',
    ]
    return parse_ontology(lines)


@pytest.fixture
def no_policy():
    return SaliencePolicy()


def read(path) -> str:
    with open(path, "r", encoding="utf-8") as f:
        return f.read()
