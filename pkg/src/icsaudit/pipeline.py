"""Wire fingerprinting, matching and metrics into one report."""
from __future__ import annotations

from collections import defaultdict
from typing import Mapping, Optional, Sequence

from .fingerprint import FamilyFingerprint, identify_family
from .metrics import aggregate_by_country, cve_prevalence, family_comparison, per_device_stats, port_frequency
from .model import DeviceFamily, HostRecord
from .report import ComparisonTable, FamilyReport, PortTable, PrevalenceTable, Report
from .rules.matching import DeviceAssessment, match_cves
from .rules.ruleset import RuleSet


def assess_hosts(
    hosts: Sequence[HostRecord],
    rulesets: Mapping[DeviceFamily, RuleSet],
    fingerprints: Optional[Sequence[FamilyFingerprint]] = None,
    family: Optional[DeviceFamily] = None,
) -> tuple[dict[DeviceFamily, list[DeviceAssessment]], int]:
    """Group assessments by family; also return how many hosts stayed unidentified."""
    groups: dict[DeviceFamily, list[DeviceAssessment]] = defaultdict(list)
    unidentified = 0
    for host in hosts:
        profile = identify_family(host, fingerprints)
        if profile.family is DeviceFamily.UNKNOWN:
            unidentified += 1
            continue
        if family is not None and profile.family is not family:
            continue
        ruleset = rulesets.get(profile.family) or RuleSet(profile.family)
        groups[profile.family].append(match_cves(profile, ruleset))
    return dict(groups), unidentified


def build_report(
    hosts: Sequence[HostRecord],
    rulesets: Mapping[DeviceFamily, RuleSet],
    fingerprints: Optional[Sequence[FamilyFingerprint]] = None,
    *,
    source: str = "export",
    top_k: int = 10,
    family: Optional[DeviceFamily] = None,
) -> Report:
    groups, unidentified = assess_hosts(hosts, rulesets, fingerprints, family)
    ordered = [f for f in DeviceFamily if f in groups]
    families = []
    for fam in ordered:
        assessments = groups[fam]
        ruleset = rulesets.get(fam) or RuleSet(fam)
        families.append(
            FamilyReport(
                family=fam,
                countries=aggregate_by_country(assessments, top_k),
                prevalence=PrevalenceTable(tuple(cve_prevalence(assessments, ruleset)), len(assessments)),
                stats=per_device_stats(assessments),
                stats_vulnerable=per_device_stats(assessments, vulnerable_only=True),
                ports=PortTable(tuple(port_frequency(a.profile.host for a in assessments)), len(assessments)),
            )
        )
    comparison = ComparisonTable(tuple(family_comparison({fam: groups[fam] for fam in ordered})))
    return Report(source, len(hosts), unidentified, tuple(families), comparison)
