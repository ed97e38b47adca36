import json

import pytest

from scripts.run_pipeline import EXIT_EMPTY, EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from tests.conftest import CORPUS, DATA, PATIENTS

ONTOLOGY = str(DATA / "NCT00362869" / "ontology.jsonl")
POLICY = str(DATA / "policy_empty.json")


def records(out: str):
    return [json.loads(line) for line in out.splitlines() if line.strip()]


@pytest.fixture
def store(tmp_path, capsys):
    path = str(tmp_path / "satir.db")
    code = main(["ingest", "--trials", str(CORPUS), "--patients", str(PATIENTS),
                 "--ontology", ONTOLOGY, "--policy", POLICY, "--store", path])
    assert code == EXIT_OK
    report = records(capsys.readouterr().out)[-1]
    assert (report["trials"], report["patients"], report["errors"]) == (2, 4, [])
    assert report["derived_facts"] > 0
    return path


def query(store, *extra):
    return main(["query", "--ontology", ONTOLOGY, "--policy", POLICY, "--store", store, *extra])


def test_query_ndjson(store, capsys):
    assert query(store, "P001", "P002", "P003", "P004") == EXIT_OK
    found = records(capsys.readouterr().out)
    assert [(r["patient_id"], r["trial_id"]) for r in found] == [("P001", "NCT00362869"), ("P004", "NCT00362869")]


def test_query_with_knockouts(store, capsys):
    assert query(store, "--knockouts", "--objective", "treat-any") == EXIT_OK
    assert [r["patient_id"] for r in records(capsys.readouterr().out)] == ["P001"]


def test_query_explain_pair(store, capsys):
    assert query(store, "P002", "--trial", "NCT00362869") == EXIT_OK
    report = records(capsys.readouterr().out)[0]
    assert report["status"] == "filtered"

    assert query(store, "P001", "--trial", "NCT00362869", "--format", "table") == EXIT_OK
    assert "retrieved" in capsys.readouterr().out


def test_query_explain_flag(store, capsys):
    assert query(store, "P001", "--explain", "--engine", "memory") == EXIT_OK
    found = records(capsys.readouterr().out)
    assert found[0]["explanation"]["status"] == "retrieved"


def test_query_usage_errors(store, capsys):
    assert query(store, "--objective", "cure-everything") == EXIT_USAGE
    assert query(store, "P001", "P002", "--trial", "NCT00362869") == EXIT_USAGE
    assert query(str(DATA / "missing.db"), "P001") == EXIT_USAGE


def test_query_rejects_other_ontology(store):
    code = main(["query", "--store", store, "--ontology", str(DATA.parent.parent / "data" / "ontology_demo.jsonl"),
                 "P001"])
    assert code == EXIT_FAILURE


def test_status(store, capsys):
    assert main(["status", "--store", store]) == EXIT_OK
    stats = records(capsys.readouterr().out)[-1]
    assert stats["problems"] == []
    assert stats["entities"] == {"Patient": 4, "Trial": 1}


def test_status_corrupt(tmp_path):
    path = tmp_path / "garbage.db"
    path.write_text("no es un store " * 50)
    assert main(["status", "--store", str(path)]) == EXIT_FAILURE


def test_ingest_nothing(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    code = main(["ingest", "--trials", str(empty), "--ontology", ONTOLOGY, "--policy", POLICY, "--store", str(tmp_path / "s.db")])
    assert code == EXIT_EMPTY


def test_ingest_reports_bad_files(tmp_path, capsys):
    trials = tmp_path / "trials" / "main"
    trials.mkdir(parents=True)
    (trials / "BROKEN_inclusion_program.smt2").write_text("(assert (! x :named REQ0_AUXILIARY0)")
    code = main(["ingest", "--trials", str(tmp_path / "trials"), "--patients", str(PATIENTS),
                 "--ontology", ONTOLOGY, "--policy", POLICY, "--store", str(tmp_path / "s.db")])
    assert code == EXIT_OK
    report = records(capsys.readouterr().out)[-1]
    assert [e["error"] for e in report["errors"]] == ["UnbalancedParens"]
    assert report["patients"] == 4


def test_ingest_reports_duplicate_patient(tmp_path, capsys):
    patients = tmp_path / "patients"
    for site in ("a", "b"):
        (patients / site).mkdir(parents=True)
        (patients / site / "P001.json").write_text((PATIENTS / "P001.json").read_text(encoding="utf-8"),
                                                   encoding="utf-8")
    code = main(["ingest", "--trials", str(CORPUS), "--patients", str(patients),
                 "--ontology", ONTOLOGY, "--policy", POLICY, "--store", str(tmp_path / "s.db")])
    assert code == EXIT_OK
    report = records(capsys.readouterr().out)[-1]
    assert [(e["error"], e["file"]) for e in report["errors"]] == [
        ("DuplicateEntity", str(patients / "b" / "P001.json"))]
    assert (report["trials"], report["patients"]) == (2, 1)
    assert report["stats"]["entities"] == {"Patient": 1, "Trial": 1}


def test_usage(capsys):
    assert main([]) == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["query", "--no-such-flag"])
    assert exc.value.code == EXIT_USAGE
    assert main(["ingest", "--ontology", ONTOLOGY]) == EXIT_USAGE
    assert main(["ingest", "--trials", str(CORPUS), "--ontology", "/nonexistent/o.jsonl"]) == EXIT_USAGE
    assert main(["verify", "--workers", "0", "--seeds", "1"]) == EXIT_USAGE


def test_verify(capsys):
    code = main(["verify", "--seeds", "3", "--n-trials", "4", "--n-patients", "3", "--knockouts"])
    assert code == EXIT_OK
    reports = records(capsys.readouterr().out)
    assert len(reports) == 3
    assert all(r["missed"] == [] for r in reports)


def test_verify_lossless(capsys):
    assert main(["verify", "--seeds", "2", "--n-trials", "4", "--lossless", "--objective", "relevant-to-any"]) == EXIT_OK
    assert all(r["exact"] for r in records(capsys.readouterr().out))


def test_bench(capsys):
    code = main(["bench", "--n-trials", "20", "--n-patients", "2", "--n-concepts", "15", "--repetitions", "2"])
    assert code == EXIT_OK
    report = records(capsys.readouterr().out)[-1]
    assert report["stable_results"] is True
    assert report["rows"]["ECNF"] == 42
