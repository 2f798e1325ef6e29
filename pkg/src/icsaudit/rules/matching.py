"""Match fingerprinted devices against a rule set."""
from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from typing import Optional

from ..errors import FamilyMismatch
from ..model import DeviceFamily, DeviceProfile
from .conditions import Condition, MatchOutcome
from .ruleset import Certainty, PrevalenceKey, RuleSet


@dataclass(frozen=True)
class VulnFinding:
    cve_id: str
    certainty: Certainty
    score_used: Decimal
    stride: frozenset[str]
    source_cluster: Optional[str] = None
    outcome: MatchOutcome = MatchOutcome.MATCH


@dataclass(frozen=True)
class Exposure:
    """A matched prevalence key: a whole cluster, or one unclustered CVE.

    Analytics count exposures, so a device hit by a cluster counts once for
    it, weighted by the highest member score.
    """

    key: str
    cves: tuple[str, ...]
    score: Decimal
    stride: frozenset[str]
    certainty: Certainty


@dataclass(frozen=True)
class DeviceAssessment:
    profile: DeviceProfile
    findings: tuple[VulnFinding, ...] = ()
    exposures: tuple[Exposure, ...] = ()

    @property
    def family(self) -> DeviceFamily:
        return self.profile.family

    @property
    def country(self) -> tuple[str, str]:
        return (self.profile.host.country_code, self.profile.host.country_name)

    def cve_ids(self) -> frozenset[str]:
        return frozenset(f.cve_id for f in self.findings)


_RANK = {MatchOutcome.NO_MATCH: 0, MatchOutcome.INDETERMINATE: 1, MatchOutcome.MATCH: 2}


def _effective(certainty: Certainty, outcome: MatchOutcome) -> Certainty:
    if outcome is MatchOutcome.INDETERMINATE and certainty is Certainty.FULL:
        return Certainty.PARTIAL
    return certainty


class _Memo:
    def __init__(self, profile: DeviceProfile):
        self.profile = profile
        self.cache: dict[int, MatchOutcome] = {}

    def __call__(self, cond: Condition) -> MatchOutcome:
        hit = self.cache.get(id(cond))
        if hit is None:
            hit = self.cache[id(cond)] = cond.evaluate(self.profile)
        return hit


def match_cves(profile: DeviceProfile, ruleset: RuleSet) -> DeviceAssessment:
    if profile.family is DeviceFamily.UNKNOWN or profile.family is not ruleset.family:
        raise FamilyMismatch(f"profile family {profile.family.value} vs rule set {ruleset.family.value}")
    outcome_of = _Memo(profile)

    cluster_outcomes = {cid: outcome_of(ruleset.cluster_condition(cid)) for cid in ruleset.clusters}

    best: dict[str, VulnFinding] = {}
    for rule in ruleset.rules:
        # a CVE listed in several clusters is hit when any of them matches
        outcome, source = outcome_of(rule.condition), rule.cluster_id
        for cid, members in ruleset.clusters.items():
            if rule.cve_id in members and _RANK[cluster_outcomes[cid]] > _RANK[outcome]:
                outcome, source = cluster_outcomes[cid], cid
        if not outcome.matched:
            continue
        finding = VulnFinding(
            cve_id=rule.cve_id,
            certainty=_effective(rule.certainty, outcome),
            score_used=rule.score,
            stride=rule.stride,
            source_cluster=source,
            outcome=outcome,
        )
        prior = best.get(rule.cve_id)
        if prior is None or finding.certainty > prior.certainty:
            best[rule.cve_id] = finding

    exposures = []
    for key in ruleset.keys:
        if not outcome_of(key.condition).matched:
            continue
        members = [best[c] for c in key.cves if c in best]
        if not members:
            continue
        exposures.append(
            Exposure(
                key=key.key,
                cves=tuple(f.cve_id for f in members),
                score=max(f.score_used for f in members),
                stride=frozenset().union(*(f.stride for f in members)),
                certainty=min(f.certainty for f in members),
            )
        )
    return DeviceAssessment(profile=profile, findings=tuple(best.values()), exposures=tuple(exposures))


def exposure_signature(profile: DeviceProfile, keys: tuple[PrevalenceKey, ...]) -> tuple[bool, ...]:
    """Which prevalence keys a profile hits; a cheap path for corpus fabrication."""
    outcome_of = _Memo(profile)
    return tuple(outcome_of(k.condition).matched for k in keys)
