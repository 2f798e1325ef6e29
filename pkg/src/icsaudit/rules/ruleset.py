"""Rule-set documents: CVE rules, clusters and their JSON loader."""
from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from decimal import Decimal
from importlib import resources
from typing import Optional

from ..errors import MalformedVersion, SchemaError, ValidationError
from ..model import DeviceFamily
from .conditions import (
    SERVICE_PORTS,
    Always,
    And,
    BannerContains,
    Condition,
    FieldContains,
    FirmwareSatisfies,
    ModelIn,
    Or,
    PortOpen,
    ServicePresent,
    parse_constraint,
)

STRIDE = "STRIDE"
MAX_DEPTH = 8
_CVE_ID = re.compile(r"^CVE-\d{4}-\d{4,}$")

BUNDLED_RULE_FILES = {
    DeviceFamily.SCHNEIDER: "schneider_bmx_p34.rules.json",
    DeviceFamily.SIEMENS: "siemens_s7_300.rules.json",
    DeviceFamily.OMRON: "omron_cj_cs.rules.json",
    DeviceFamily.ROCKWELL: "rockwell_micrologix_1400.rules.json",
    DeviceFamily.MITSUBISHI: "mitsubishi_melsec_q.rules.json",
}


class Certainty(enum.IntEnum):
    NONE = 0
    PARTIAL = 1
    FULL = 2

    @classmethod
    def parse(cls, text: str) -> "Certainty":
        try:
            return {"full": cls.FULL, "partial": cls.PARTIAL, "none": cls.NONE}[text]
        except (KeyError, TypeError):
            raise ValidationError(f"certainty must be full, partial or none, got {text!r}") from None

    @property
    def label(self) -> str:
        return self.name.lower()


def stride_letters(value) -> frozenset[str]:
    """Parse a Class column entry such as "T/E" into a set of STRIDE letters."""
    if not isinstance(value, str) or not value.strip():
        raise ValidationError(f"stride must be a non-empty string, got {value!r}")
    letters = [p.strip() for p in value.split("/")]
    bad = [p for p in letters if len(p) != 1 or p not in STRIDE]
    if bad:
        raise ValidationError(f"unknown STRIDE class {'/'.join(bad)!r}")
    return frozenset(letters)


def format_stride(letters) -> str:
    return "/".join(ch for ch in STRIDE if ch in letters)


@dataclass(frozen=True)
class CveRule:
    cve_id: str
    condition: Condition
    stride: frozenset[str]
    certainty: Certainty = Certainty.FULL
    cvss_v2: Optional[Decimal] = None
    cvss_v31: Optional[Decimal] = None
    v31_manually_scored: bool = False
    cluster_id: Optional[str] = None
    note: str = ""

    @property
    def score(self) -> Decimal:
        return self.cvss_v31 if self.cvss_v31 is not None else self.cvss_v2


@dataclass(frozen=True)
class PrevalenceKey:
    """One row of a prevalence table: either a whole cluster or a lone CVE."""

    key: str
    label: str
    condition: Condition
    cves: tuple[str, ...]
    cluster_id: Optional[str] = None


@dataclass(frozen=True)
class RuleSet:
    family: DeviceFamily
    rules: tuple[CveRule, ...] = ()
    clusters: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def rule(self, cve_id: str) -> CveRule:
        for r in self.rules:
            if r.cve_id == cve_id:
                return r
        raise KeyError(cve_id)

    def cluster_condition(self, cluster_id: str) -> Condition:
        for r in self.rules:
            if r.cluster_id == cluster_id:
                return r.condition
        raise KeyError(cluster_id)

    def cluster_label(self, cluster_id: str) -> str:
        members = self.clusters[cluster_id]
        return members[0] if len(members) == 1 else f"Cluster {cluster_id}"

    @property
    def keys(self) -> tuple[PrevalenceKey, ...]:
        """Prevalence keys: clusters in declared order, then unclustered CVEs."""
        cached = self.__dict__.get("_keys")
        if cached is not None:
            return cached
        out = []
        for cid, members in self.clusters.items():
            label = self.cluster_label(cid)
            out.append(PrevalenceKey(label, label, self.cluster_condition(cid), members, cid))
        seen = set()
        for r in self.rules:
            if r.cluster_id is None and r.cve_id not in seen:
                seen.add(r.cve_id)
                out.append(PrevalenceKey(r.cve_id, r.cve_id, r.condition, (r.cve_id,)))
        object.__setattr__(self, "_keys", tuple(out))
        return self.__dict__["_keys"]

    def key_for(self, name: str) -> PrevalenceKey:
        """Look up a key by label, cluster id or member CVE of a single-CVE key."""
        for k in self.keys:
            if name in (k.key, k.cluster_id) or (len(k.cves) == 1 and name == k.cves[0]):
                return k
        for k in self.keys:
            if name in k.cves:
                return k
        raise KeyError(name)


def _score(value, where: str) -> Optional[Decimal]:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float, Decimal, str)):
        raise SchemaError(f"{where}: score must be a number")
    try:
        score = Decimal(str(value))
    except ArithmeticError:
        raise ValidationError(f"{where}: bad score {value!r}") from None
    if not (Decimal(0) <= score <= Decimal(10)):
        raise ValidationError(f"{where}: CVSS score {value} outside 0.0-10.0")
    return score


class _ConditionParser:
    def __init__(self, named: dict):
        self._raw = named
        self._done: dict[str, Condition] = {}
        self._active: set[str] = set()

    def named(self, name: str) -> Condition:
        if name in self._done:
            return self._done[name]
        if name not in self._raw:
            raise ValidationError(f"reference to undefined condition {name!r}")
        if name in self._active:
            raise ValidationError(f"condition {name!r} refers to itself")
        self._active.add(name)
        cond = self.parse(self._raw[name], f"conditions.{name}")
        self._active.discard(name)
        self._done[name] = cond
        return cond

    def parse(self, node, where: str) -> Condition:
        if node == "always":
            return Always()
        if not isinstance(node, dict) or len(node) != 1:
            raise SchemaError(f"{where}: condition must be \"always\" or a single-key object")
        (kind, arg), = node.items()
        try:
            return self._build(kind, arg, where)
        except MalformedVersion as exc:
            raise ValidationError(f"{where}: {exc}") from None

    def _build(self, kind: str, arg, where: str) -> Condition:
        if kind in ("and", "or"):
            if not isinstance(arg, list):
                raise SchemaError(f"{where}: {kind} takes a list")
            if not arg:
                raise ValidationError(f"{where}: empty {kind} list")
            items = tuple(self.parse(x, f"{where}.{kind}[{i}]") for i, x in enumerate(arg))
            return And(items) if kind == "and" else Or(items)
        if kind == "ref":
            if not isinstance(arg, str):
                raise SchemaError(f"{where}: ref takes a name")
            return self.named(arg)
        if kind == "always":
            return Always()
        if kind == "port_open":
            m = re.fullmatch(r"(tcp|udp)/(\d{1,5})", str(arg))
            if not m or not 1 <= int(m.group(2)) <= 65535:
                raise ValidationError(f"{where}: port_open wants tcp/N or udp/N, got {arg!r}")
            return PortOpen(m.group(1), int(m.group(2)))
        if kind == "service":
            if arg not in SERVICE_PORTS:
                raise ValidationError(f"{where}: unknown service {arg!r}")
            return ServicePresent(arg)
        if kind == "banner_contains":
            if not isinstance(arg, str) or not arg:
                raise SchemaError(f"{where}: banner_contains takes a non-empty string")
            return BannerContains(arg)
        if kind == "field_contains":
            if not (isinstance(arg, list) and len(arg) == 2 and all(isinstance(a, str) and a for a in arg)):
                raise SchemaError(f"{where}: field_contains takes [key, substring]")
            return FieldContains(arg[0], arg[1])
        if kind == "model_in":
            if not (isinstance(arg, list) and arg and all(isinstance(a, str) and a for a in arg)):
                raise SchemaError(f"{where}: model_in takes a non-empty list of strings")
            return ModelIn(tuple(arg))
        if kind == "firmware":
            if not isinstance(arg, str):
                raise SchemaError(f"{where}: firmware takes a constraint string")
            return FirmwareSatisfies(parse_constraint(arg))
        raise SchemaError(f"{where}: unknown condition kind {kind!r}")


def _cluster_id(value, where: str) -> Optional[str]:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (str, int)):
        raise SchemaError(f"{where}: cluster must be a string")
    return str(value)


def load_ruleset(document: bytes | str) -> RuleSet:
    try:
        doc = json.loads(document)
    except (ValueError, UnicodeDecodeError) as exc:
        raise SchemaError(f"rule set is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("rule set must be a JSON object")
    for key in ("family", "rules"):
        if key not in doc:
            raise SchemaError(f"rule set lacks {key!r}")
    try:
        family = DeviceFamily(doc["family"])
    except ValueError:
        raise ValidationError(f"unknown family {doc['family']!r}") from None
    if family is DeviceFamily.UNKNOWN:
        raise ValidationError("rule set cannot target the Unknown family")

    raw_rules = doc["rules"]
    raw_clusters = doc.get("clusters", {})
    named = doc.get("conditions", {})
    if not isinstance(raw_rules, list):
        raise SchemaError("rules must be a list")
    if not isinstance(raw_clusters, dict) or not isinstance(named, dict):
        raise SchemaError("clusters and conditions must be objects")

    clusters = {}
    for cid, members in raw_clusters.items():
        if not isinstance(members, list) or not all(isinstance(m, str) for m in members):
            raise SchemaError(f"cluster {cid!r} must list CVE ids")
        if not members:
            raise ValidationError(f"cluster {cid!r} is empty")
        clusters[str(cid)] = tuple(members)

    parser = _ConditionParser(named)
    rules = []
    for i, raw in enumerate(raw_rules):
        where = f"rules[{i}]"
        if not isinstance(raw, dict):
            raise SchemaError(f"{where}: rule must be an object")
        for key in ("cve", "stride", "condition"):
            if key not in raw:
                raise SchemaError(f"{where}: missing {key!r}")
        cve = raw["cve"]
        if not isinstance(cve, str) or not _CVE_ID.match(cve):
            raise ValidationError(f"{where}: bad CVE id {cve!r}")
        where = f"{where} ({cve})"
        v2 = _score(raw.get("cvss_v2"), where)
        v31 = _score(raw.get("cvss_v31"), where)
        if v2 is None and v31 is None:
            raise ValidationError(f"{where}: no CVSS score")
        star = raw.get("v31_star", False)
        if not isinstance(star, bool):
            raise SchemaError(f"{where}: v31_star must be a boolean")
        condition = parser.parse(raw["condition"], f"{where}.condition")
        if condition.depth() > MAX_DEPTH:
            raise ValidationError(f"{where}: condition nested deeper than {MAX_DEPTH}")
        rules.append(
            CveRule(
                cve_id=cve,
                condition=condition,
                stride=stride_letters(raw["stride"]),
                certainty=Certainty.parse(raw.get("certainty", "full")),
                cvss_v2=v2,
                cvss_v31=v31,
                v31_manually_scored=star,
                cluster_id=_cluster_id(raw.get("cluster"), where),
                note=str(raw.get("note", "")),
            )
        )

    listed = {cve for members in clusters.values() for cve in members}
    known = {r.cve_id for r in rules}
    for r in rules:
        if r.cluster_id is None:
            continue
        if r.cluster_id not in clusters:
            raise ValidationError(f"{r.cve_id}: dangling cluster reference {r.cluster_id!r}")
        if r.cve_id not in clusters[r.cluster_id]:
            raise ValidationError(f"{r.cve_id}: cluster {r.cluster_id!r} does not list it")
    for cve in listed - known:
        raise ValidationError(f"cluster member {cve} has no rule")
    for cid in clusters:
        conds = {id(r.condition): r.condition for r in rules if r.cluster_id == cid}
        if not conds:
            raise ValidationError(f"cluster {cid!r} has no rule carrying its condition")
        if len(set(conds.values())) > 1:
            raise ValidationError(f"members of cluster {cid!r} disagree on the condition")
    for r in rules:
        if r.cluster_id is None and r.cve_id in listed:
            raise ValidationError(f"{r.cve_id} is listed in a cluster but has no cluster id")

    return RuleSet(family=family, rules=tuple(rules), clusters=clusters)


def load_bundled_ruleset(family: DeviceFamily) -> RuleSet:
    name = BUNDLED_RULE_FILES[family]
    data = resources.files("icsaudit.data").joinpath("rules", name).read_bytes()
    return load_ruleset(data)


def load_bundled_rulesets() -> dict[DeviceFamily, RuleSet]:
    return {family: load_bundled_ruleset(family) for family in BUNDLED_RULE_FILES}
