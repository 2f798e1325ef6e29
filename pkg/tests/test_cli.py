import io
import json
import shutil
import subprocess
import sys
from importlib import resources

import jsonschema
import pytest

from conftest import FIXTURES
from icsaudit import cli
from icsaudit.cli import RunConfig, main, run
from icsaudit.ingest.export import load_export

GOLDEN = FIXTURES / "golden_banners.ndjson"


def _run(**kwargs):
    out, err = io.BytesIO(), io.StringIO()
    code = run(RunConfig(**kwargs), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def small_spec(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({
        "rng_seed": 3,
        "families": [
            {"family": "MitsubishiMelsecQ", "countries": [{"code": "JP", "name": "Japan", "devices": 12}],
             "targets": {"CVE-2019-6535": 6}},
            {"family": "OmronCjCs", "countries": [{"code": "ES", "name": "Spain", "devices": 5}]},
        ],
    }))
    return path


def test_export_markdown():
    code, out, err = _run(export=GOLDEN, fmt="md")
    assert code == 0 and err == ""
    text = out.decode()
    assert "| Country | No. of Devices Abs." in text
    assert "| CVE | No. of occurrences Abs." in text
    assert "unidentified: 1" in text


def test_corpus_json_matches_schema(small_spec):
    code, out, _ = _run(corpus=small_spec, fmt="json")
    assert code == 0
    doc = json.loads(out)
    schema = json.loads(resources.files("icsaudit.data").joinpath("report.schema.json").read_text())
    jsonschema.validate(doc, schema)
    assert [f["family"] for f in doc["families"]] == ["OmronCjCs", "MitsubishiMelsecQ"]
    assert doc["input"] == {"source": "corpus", "hosts": 17, "unidentified": 0}


def test_family_filter_and_top_k():
    code, out, _ = _run(export=GOLDEN, fmt="json", family="siemens", top_k=1)
    doc = json.loads(out)
    assert code == 0
    assert [f["family"] for f in doc["families"]] == ["SiemensS7_300"]
    assert doc["families"][0]["country_table"]["top_k"] == 1


def test_missing_input_file(tmp_path):
    target = tmp_path / "report.md"
    code, out, err = _run(export=tmp_path / "nope.ndjson", out=target)
    assert code == 1 and out == b""
    assert "cannot read input" in err
    assert not target.exists()


def test_out_file_written_atomically(tmp_path):
    target = tmp_path / "report.csv"
    code, out, _ = _run(export=GOLDEN, fmt="csv", out=target)
    assert code == 0 and out == b""
    assert target.read_bytes().startswith(b"# Schneider Electric BMX P34")
    assert [p.name for p in tmp_path.iterdir()] == ["report.csv"]


def test_out_must_not_overwrite_input(tmp_path):
    copy = tmp_path / "in.ndjson"
    shutil.copy(GOLDEN, copy)
    code, _, _ = _run(export=copy, out=copy)
    assert code == 1
    assert copy.read_bytes() == GOLDEN.read_bytes()


@pytest.mark.parametrize(
    "kwargs",
    [
        {},
        {"export": GOLDEN, "corpus": GOLDEN},
        {"query": "port:502"},
        {"live": True, "export": GOLDEN},
        {"export": GOLDEN, "fmt": "xlsx"},
        {"export": GOLDEN, "top_k": 0},
        {"export": GOLDEN, "family": "Beckhoff"},
    ],
)
def test_usage_errors_exit_1(kwargs):
    code, out, err = _run(**kwargs)
    assert code == 1 and out == b"" and err


def test_only_malformed_export_is_input_error(tmp_path):
    bad = tmp_path / "bad.ndjson"
    bad.write_text("{nope\n")
    assert _run(export=bad)[0] == 1


def test_bad_rules_exit_2(tmp_path):
    rules = tmp_path / "rules"
    rules.mkdir()
    (rules / "x.rules.json").write_text(json.dumps({"family": "OmronCjCs", "rules": [
        {"cve": "CVE-2020-0001", "cvss_v2": 5.0, "stride": "Q", "condition": "always"}]}))
    code, out, err = _run(export=GOLDEN, rules_dir=rules)
    assert code == 2 and out == b"" and "invalid" in err


def test_bad_fingerprints_exit_2(tmp_path):
    fps = tmp_path / "fp.json"
    fps.write_text('{"fingerprints": [{"family": "Nope"}]}')
    assert _run(export=GOLDEN, fingerprints=fps)[0] == 2


def test_custom_rules_replace_family(tmp_path):
    rules = tmp_path / "rules"
    rules.mkdir()
    (rules / "omron.rules.json").write_text(json.dumps({"family": "OmronCjCs", "rules": [
        {"cve": "CVE-2020-0001", "cvss_v2": 5.0, "stride": "S", "condition": "always"}]}))
    code, out, _ = _run(export=GOLDEN, rules_dir=rules, fmt="json", family="omron")
    doc = json.loads(out)
    assert code == 0
    assert [r["key"] for r in doc["families"][0]["prevalence"]["rows"]] == ["CVE-2020-0001"]


def test_live_needs_key(monkeypatch):
    monkeypatch.delenv("AUDITOR_API_KEY", raising=False)
    code, _, err = _run(query="port:502", live=True)
    assert code == 1 and "AUDITOR_API_KEY" in err


def test_live_uses_search(monkeypatch):
    hosts = load_export(GOLDEN.open("rb"))
    seen = {}

    def fake_search(query, creds, page_limit):
        seen.update(query=query, key=creds.api_key, pages=page_limit)
        return hosts

    monkeypatch.setattr(cli, "fetch_search", fake_search)
    monkeypatch.setenv("AUDITOR_API_KEY", "k")
    code, out, _ = _run(query="port:502", live=True, page_limit=3, fmt="json")
    assert code == 0
    assert seen == {"query": "port:502", "key": "k", "pages": 3}
    assert json.loads(out)["input"]["source"] == "live"


def test_main_usage_error_exit_1(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--no-such-flag"])
    assert info.value.code == 1


def test_console_script_streams(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "icsaudit.cli", "--export", str(GOLDEN), "--format", "csv"],
        capture_output=True,
    )
    assert proc.returncode == 0
    assert proc.stdout.startswith(b"# Schneider")
    assert proc.stderr == b""
    proc = subprocess.run([sys.executable, "-m", "icsaudit.cli", "--export", str(tmp_path / "x")], capture_output=True)
    assert proc.returncode == 1 and proc.stdout == b"" and proc.stderr
