from collections import defaultdict
from pathlib import Path

import pytest

from icsaudit.fingerprint import bundled_fingerprints
from icsaudit.ingest.synth import generate_corpus, load_corpus_spec
from icsaudit.pipeline import assess_hosts
from icsaudit.rules.ruleset import load_bundled_rulesets

FIXTURES = Path(__file__).parent / "fixtures"

CRITERIA = {
    1: "prevalence tables reproduced from fixture corpora",
    2: "per-device mean and median on fixture corpora",
    3: "mean CVSS identity and per-family ratios",
    4: "country aggregation and conservation",
    5: "golden banner identification",
    6: "cluster semantics and CVE dedup",
    7: "version comparison vs brute-force oracle",
    8: "finding monotonicity under added ports",
    9: "export ingest, merge and round-trip",
}

_outcomes: dict[int, list[tuple[str, str]]] = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion covered by a test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        outcome = "passed" if call.excinfo is None else "failed"
        _outcomes[marker.args[0]].append((item.nodeid, outcome))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            terminalreporter.write_line(f"criterion {n}: NOT RUN  {title}")
            continue
        failed = [nodeid for nodeid, outcome in results if outcome != "passed"]
        status = "PASS" if not failed else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  {title} ({len(results) - len(failed)}/{len(results)})")
        for nodeid in failed:
            terminalreporter.write_line(f"    failed: {nodeid}")


@pytest.fixture(scope="session")
def rulesets():
    return load_bundled_rulesets()


@pytest.fixture(scope="session")
def fingerprints():
    return bundled_fingerprints()


@pytest.fixture(scope="session")
def reference_spec():
    return load_corpus_spec((FIXTURES / "reference_corpus.json").read_bytes())


@pytest.fixture(scope="session")
def reference_hosts(reference_spec, rulesets, fingerprints):
    return generate_corpus(reference_spec, rulesets, fingerprints)


@pytest.fixture(scope="session")
def reference_groups(reference_hosts, rulesets, fingerprints):
    groups, unidentified = assess_hosts(reference_hosts, rulesets, fingerprints)
    assert unidentified == 0
    return groups
