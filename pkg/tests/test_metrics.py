from decimal import Decimal

import pytest

from icsaudit.metrics import (
    aggregate_by_country,
    cve_prevalence,
    family_comparison,
    per_device_stats,
    percent,
    port_frequency,
    round2,
)
from icsaudit.model import DeviceFamily, DeviceProfile, HostRecord, ServiceObservation
from icsaudit.rules.matching import DeviceAssessment, Exposure
from icsaudit.rules.ruleset import Certainty

F = DeviceFamily


def assessment(scores=(), country=("FR", "France"), family=F.SCHNEIDER, stride="D", ports=(("tcp", 502),), ip=1):
    services = tuple(ServiceObservation(t, p) for t, p in ports)
    host = HostRecord(f"192.0.2.{ip}", services, *country)
    exposures = tuple(
        Exposure(f"CVE-2020-{i:04d}", (f"CVE-2020-{i:04d}",), Decimal(str(s)), frozenset(stride), Certainty.FULL)
        for i, s in enumerate(scores)
    )
    return DeviceAssessment(DeviceProfile(host, family), (), exposures)


def test_percent_full_precision_and_rounding():
    assert round2(percent(255, 785)) == Decimal("32.48")
    assert round2(Decimal("0.125")) == Decimal("0.13")
    assert percent(1, 0) == 0


def test_two_devices_one_country():
    table = aggregate_by_country([assessment([7.5], ip=1), assessment([7.5], ip=2)])
    (row,) = table.rows
    assert (row.dev_abs, row.cve_abs, row.weighted_abs) == (2, 2, Decimal("15.0"))
    assert row.dev_rel == row.cve_rel == row.weighted_rel == 100


def test_empty_country_table():
    table = aggregate_by_country([])
    assert table.rows == ()
    assert table.total_sums.dev_abs == 0 and table.total_sums.dev_rel == 0


def test_country_order_and_top_k():
    devs = [assessment([5.0], ("DE", "Germany"), ip=i) for i in range(3)]
    devs += [assessment([], ("AT", "Austria"), ip=10 + i) for i in range(3)]
    devs += [assessment([9.0, 9.0], ("FR", "France"), ip=20)]
    table = aggregate_by_country(devs, top_k=2)
    assert [r.country_code for r in table.rows] == ["AT", "DE", "FR"]
    assert table.top_k_sums.dev_abs == 6
    assert table.top_k_sums.cve_abs == 3
    assert table.total_sums.weighted_abs == Decimal("33.0")
    assert round2(table.rows[2].weighted_rel) == Decimal("54.55")


def test_prevalence_mitsubishi_3_72(rulesets):
    rs = rulesets[F.MITSUBISHI]
    devices = []
    for i in range(188):
        ex = [Exposure("CVE-2019-13555", ("CVE-2019-13555",), Decimal("9.8"), frozenset("D"), Certainty.PARTIAL)] if i < 7 else []
        devices.append(DeviceAssessment(DeviceProfile(HostRecord(f"10.0.{i // 256}.{i % 256}"), F.MITSUBISHI), (), tuple(ex)))
    rows = {r.key: r for r in cve_prevalence(devices, rs)}
    assert rows["CVE-2019-13555"].occ_abs == 7
    assert round2(rows["CVE-2019-13555"].occ_rel) == Decimal("3.72")
    assert rows["CVE-2020-5527"].occ_abs == 0
    assert next(iter(rows.values())).key == "CVE-2019-13555"


def test_prevalence_without_assessments(rulesets):
    rows = cve_prevalence([], rulesets[F.ROCKWELL])
    assert len(rows) == 7
    assert all(r.occ_abs == 0 and r.occ_rel == 0 for r in rows)


def test_comparison_single_device_stride():
    (row,) = family_comparison({F.OMRON: [assessment([5.0], family=F.OMRON, stride="D")]})
    assert row.class_prevalence["D"] == 100
    assert all(row.class_prevalence[ch] == 0 for ch in "STRIE")
    assert row.dev_rel == row.cve_rel == row.weighted_rel == 100
    assert row.mean_cvss == Decimal("5.0")


def test_comparison_ratio_identity_and_order():
    groups = {
        F.OMRON: [assessment([9.8, 7.5], family=F.OMRON, ip=1), assessment([5.3], family=F.OMRON, ip=2)],
        F.ROCKWELL: [assessment([10, 10, 7.5], family=F.ROCKWELL, ip=i) for i in range(3)],
    }
    rows = family_comparison(groups)
    assert [r.family for r in rows] == [F.ROCKWELL, F.OMRON]
    omron = rows[1]
    assert omron.cve_abs == 3 and omron.weighted_abs == Decimal("22.6")
    assert omron.weighted_abs / omron.cve_abs == omron.mean_cvss
    assert round2(sum(r.dev_rel for r in rows)) == 100


@pytest.mark.parametrize("weighted, count, printed", [("73436.3", 9028, "8.13"), ("45755.3", 5219, "8.77")])
def test_printed_ratio_arithmetic(weighted, count, printed):
    assert round2(Decimal(weighted) / count) == Decimal(printed)


def test_stats_zero_findings():
    stats = per_device_stats([assessment([])])
    assert stats.mean_findings_per_device == 0 and stats.median_findings_per_device == 0
    assert per_device_stats([], vulnerable_only=True).devices == 0


def test_stats_values():
    devs = [assessment([1.0] * n, ip=i) for i, n in enumerate((0, 1, 2, 3, 10))]
    stats = per_device_stats(devs)
    assert stats.mean_findings_per_device == Decimal("3.2")
    assert stats.median_findings_per_device == 2
    assert (stats.min, stats.max) == (0, 10)
    assert stats.variance == Decimal("12.56")
    vulnerable = per_device_stats(devs, vulnerable_only=True)
    assert vulnerable.devices == 4
    # lower middle for even counts
    assert vulnerable.median_findings_per_device == 2


def test_port_frequency():
    hosts = [HostRecord(f"192.0.2.{i}", (ServiceObservation("tcp", 44818),) + ((ServiceObservation("tcp", 1723),) if i < 2 else ()))
             for i in range(4)]
    rows = port_frequency(hosts)
    assert [(r.port, r.count) for r in rows] == [(44818, 4), (1723, 2)]
    assert rows[0].percent == 100 and rows[1].percent == 50
    assert port_frequency([]) == []


def test_rockwell_ports_on_reference_corpus(reference_groups):
    rows = {r.port: r for r in port_frequency(a.profile.host for a in reference_groups[F.ROCKWELL])}
    assert rows[44818].count == 1831 and round2(rows[44818].percent) == Decimal("100.00")
    assert rows[1723].count == 210 and round2(rows[1723].percent) == Decimal("11.47")


def test_rockwell_4690_everywhere(reference_groups, rulesets):
    rows = {r.key: r for r in cve_prevalence(reference_groups[F.ROCKWELL], rulesets[F.ROCKWELL])}
    assert rows["CVE-2012-4690"].occ_abs == 1831
