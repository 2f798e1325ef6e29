"""Analytics over device assessments: per country, per CVE, per family.

Counts are per exposure: a device hit by a CVE cluster counts once for that
cluster, weighted by the cluster's highest score. For rule sets without
multi-member clusters this is the same as counting CVEs.
"""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping, Sequence

from .model import DeviceFamily, HostRecord
from .rules.matching import DeviceAssessment
from .rules.ruleset import STRIDE, RuleSet

HUNDRED = Decimal(100)
ZERO = Decimal(0)


def percent(part, whole) -> Decimal:
    """part/whole*100 in full precision; 0 when whole is 0."""
    if not whole:
        return ZERO
    return Decimal(part) * HUNDRED / Decimal(whole)


def round2(value: Decimal) -> Decimal:
    return Decimal(value).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class CountryRow:
    country_code: str
    country_name: str
    dev_abs: int
    dev_rel: Decimal
    cve_abs: int
    cve_rel: Decimal
    weighted_abs: Decimal
    weighted_rel: Decimal


@dataclass(frozen=True)
class CountryTable:
    rows: tuple[CountryRow, ...]
    top_k: int
    top_k_sums: CountryRow
    total_sums: CountryRow


def _sum_row(code: str, name: str, rows: Sequence[CountryRow], totals: tuple[int, int, Decimal]) -> CountryRow:
    dev = sum(r.dev_abs for r in rows)
    cve = sum(r.cve_abs for r in rows)
    weighted = sum((r.weighted_abs for r in rows), ZERO)
    return CountryRow(code, name, dev, percent(dev, totals[0]), cve, percent(cve, totals[1]),
                      weighted, percent(weighted, totals[2]))


def build_country_table(counts: Iterable[tuple[str, str, int, int, Decimal]], top_k: int = 10) -> CountryTable:
    """Assemble a table from (code, name, devices, exposures, weighted) tuples."""
    counts = list(counts)
    totals = (
        sum(c[2] for c in counts),
        sum(c[3] for c in counts),
        sum((c[4] for c in counts), ZERO),
    )
    rows = [
        CountryRow(code, name, dev, percent(dev, totals[0]), cve, percent(cve, totals[1]),
                   weighted, percent(weighted, totals[2]))
        for code, name, dev, cve, weighted in counts
    ]
    rows.sort(key=lambda r: (-r.dev_abs, r.country_code))
    return CountryTable(
        rows=tuple(rows),
        top_k=top_k,
        top_k_sums=_sum_row("", f"Top{top_k}", rows[:top_k], totals),
        total_sums=_sum_row("", "Total", rows, totals),
    )


def aggregate_by_country(assessments: Iterable[DeviceAssessment], top_k: int = 10) -> CountryTable:
    devices: Counter = Counter()
    exposures: Counter = Counter()
    weighted: dict[str, Decimal] = defaultdict(lambda: ZERO)
    names: dict[str, str] = {}
    for a in assessments:
        code, name = a.country
        # deterministic name choice when one code carries several spellings
        names[code] = min(names.get(code, name), name)
        devices[code] += 1
        exposures[code] += len(a.exposures)
        weighted[code] += sum((e.score for e in a.exposures), ZERO)
    return build_country_table(
        ((code, names[code], devices[code], exposures[code], weighted[code]) for code in devices), top_k
    )


@dataclass(frozen=True)
class PrevalenceRow:
    key: str
    occ_abs: int
    occ_rel: Decimal
    stride: frozenset[str]
    cves: tuple[str, ...] = ()
    devices: int = 0


def cve_prevalence(assessments: Sequence[DeviceAssessment], ruleset: RuleSet) -> list[PrevalenceRow]:
    assessments = list(assessments)
    hits: Counter = Counter()
    for a in assessments:
        for key in {e.key for e in a.exposures}:
            hits[key] += 1
    rows = []
    for k in ruleset.keys:
        stride = frozenset().union(*(ruleset.rule(c).stride for c in k.cves))
        rows.append(
            PrevalenceRow(k.key, hits[k.key], percent(hits[k.key], len(assessments)), stride, k.cves, len(assessments))
        )
    # stable sort keeps declared order among equal counts
    rows.sort(key=lambda r: -r.occ_abs)
    return rows


@dataclass(frozen=True)
class ComparisonRow:
    family: DeviceFamily
    dev_abs: int
    dev_rel: Decimal
    class_prevalence: Mapping[str, Decimal]
    class_devices: Mapping[str, int]
    cve_abs: int
    cve_rel: Decimal
    weighted_abs: Decimal
    weighted_rel: Decimal
    mean_cvss: Decimal


def family_comparison(groups: Mapping[DeviceFamily, Sequence[DeviceAssessment]]) -> list[ComparisonRow]:
    stats = []
    for family, assessments in groups.items():
        assessments = list(assessments)
        letters: Counter = Counter()
        for a in assessments:
            for letter in frozenset().union(*(e.stride for e in a.exposures)):
                letters[letter] += 1
        cve = sum(len(a.exposures) for a in assessments)
        weighted = sum((e.score for a in assessments for e in a.exposures), ZERO)
        stats.append((family, len(assessments), letters, cve, weighted))
    total_dev = sum(s[1] for s in stats)
    total_cve = sum(s[3] for s in stats)
    total_weighted = sum((s[4] for s in stats), ZERO)
    rows = [
        ComparisonRow(
            family=family,
            dev_abs=dev,
            dev_rel=percent(dev, total_dev),
            class_prevalence={ch: percent(letters[ch], dev) for ch in STRIDE},
            class_devices={ch: letters[ch] for ch in STRIDE},
            cve_abs=cve,
            cve_rel=percent(cve, total_cve),
            weighted_abs=weighted,
            weighted_rel=percent(weighted, total_weighted),
            mean_cvss=weighted / cve if cve else ZERO,
        )
        for family, dev, letters, cve, weighted in stats
    ]
    rows.sort(key=lambda r: (-r.dev_abs, r.family.value))
    return rows


@dataclass(frozen=True)
class DeviceStats:
    devices: int
    mean_findings_per_device: Decimal
    median_findings_per_device: Decimal
    min: int
    max: int
    variance: Decimal


def per_device_stats(assessments: Iterable[DeviceAssessment], vulnerable_only: bool = False) -> DeviceStats:
    counts = sorted(len(a.exposures) for a in assessments)
    if vulnerable_only:
        counts = [c for c in counts if c > 0]
    if not counts:
        return DeviceStats(0, ZERO, ZERO, 0, 0, ZERO)
    n = len(counts)
    mean = Decimal(sum(counts)) / n
    variance = sum(((Decimal(c) - mean) ** 2 for c in counts), ZERO) / n
    return DeviceStats(
        devices=n,
        mean_findings_per_device=mean,
        median_findings_per_device=Decimal(counts[(n - 1) // 2]),
        min=counts[0],
        max=counts[-1],
        variance=variance,
    )


@dataclass(frozen=True)
class PortCount:
    transport: str
    port: int
    count: int
    percent: Decimal
    hosts: int = 0


def port_frequency(hosts: Iterable[HostRecord]) -> list[PortCount]:
    hosts = list(hosts)
    tally: Counter = Counter(ep for h in hosts for ep in h.open_ports)
    rows = [PortCount(t, p, n, percent(n, len(hosts)), len(hosts)) for (t, p), n in tally.items()]
    rows.sort(key=lambda r: (-r.count, r.port, r.transport))
    return rows
