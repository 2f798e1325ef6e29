"""Predicate language for CVE applicability conditions."""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Optional, Union

from ..errors import MalformedVersion
from ..model import DeviceProfile, Version

WILDCARD = None  # pattern segment that matches any integer

# first port is the canonical one (used when fabricating hosts)
SERVICE_PORTS: dict[str, tuple[tuple[str, int], ...]] = {
    "ftp": (("tcp", 21),),
    "ssh": (("tcp", 22),),
    "telnet": (("tcp", 23),),
    "http": (("tcp", 80), ("tcp", 8080)),
    "https": (("tcp", 443), ("tcp", 8443)),
    "tftp": (("udp", 69),),
    "snmp": (("udp", 161),),
    "vnc": (("tcp", 5900), ("tcp", 5800)),
}


class MatchOutcome(enum.Enum):
    MATCH = "match"
    NO_MATCH = "no_match"
    INDETERMINATE = "indeterminate_assumed_match"

    @property
    def matched(self) -> bool:
        return self is not MatchOutcome.NO_MATCH


class Op(enum.Enum):
    LT = "<"
    LE = "<="
    EQ = "=="


_CONSTRAINT = re.compile(r"^\s*(<=|<|==|=)\s*[vV]?\s*(\S+)\s*$")


@dataclass(frozen=True)
class VersionConstraint:
    op: Op
    pattern: tuple[Optional[int], ...]
    raw: str = ""

    def __post_init__(self):
        if not self.pattern:
            raise MalformedVersion("empty version pattern")
        wild = [i for i, seg in enumerate(self.pattern) if seg is WILDCARD]
        if len(wild) > 1:
            raise MalformedVersion(f"more than one wildcard in {self.raw!r}")
        if wild and wild[0] == len(self.pattern) - 1:
            raise MalformedVersion(f"wildcard in final segment of {self.raw!r}")

    @property
    def wildcard_index(self) -> Optional[int]:
        for i, seg in enumerate(self.pattern):
            if seg is WILDCARD:
                return i
        return None

    def __str__(self) -> str:
        return self.raw or f"{self.op.value} " + ".".join("X" if s is None else str(s) for s in self.pattern)


def parse_constraint(text: str) -> VersionConstraint:
    """Parse "< 3.X.16", "<= 16.00", "== 2.1" style constraints."""
    m = _CONSTRAINT.match(text)
    if not m:
        raise MalformedVersion(f"bad version constraint {text!r}")
    op = Op.EQ if m.group(1) in ("=", "==") else Op(m.group(1))
    pattern = []
    for part in m.group(2).split("."):
        if part in ("X", "x", "*"):
            pattern.append(WILDCARD)
        elif part.isascii() and part.isdigit():
            pattern.append(int(part))
        else:
            raise MalformedVersion(f"bad version constraint {text!r}")
    return VersionConstraint(op, tuple(pattern), text.strip())


def _pad(segs, n):
    return tuple(segs) + (0,) * (n - len(segs))


def _compare(op: Op, left: tuple[int, ...], right: tuple[int, ...]) -> bool:
    n = max(len(left), len(right))
    left, right = _pad(left, n), _pad(right, n)
    if op is Op.LT:
        return left < right
    if op is Op.LE:
        return left <= right
    return left == right


def compare_version(v: Version, c: VersionConstraint) -> bool:
    w = c.wildcard_index
    if w is None:
        return _compare(c.op, v.segments, c.pattern)
    segs = _pad(v.segments, len(c.pattern))
    if segs[:w] != c.pattern[:w]:
        return False
    return _compare(c.op, segs[w + 1:], c.pattern[w + 1:])


class Condition:
    """Base class; subclasses are immutable and evaluate against a DeviceProfile."""

    def evaluate(self, profile: DeviceProfile) -> MatchOutcome:
        raise NotImplementedError

    def atoms(self):
        yield self

    def depth(self) -> int:
        return 1


def _bool(value: bool) -> MatchOutcome:
    return MatchOutcome.MATCH if value else MatchOutcome.NO_MATCH


@dataclass(frozen=True)
class Always(Condition):
    def evaluate(self, profile):
        return MatchOutcome.MATCH


@dataclass(frozen=True)
class PortOpen(Condition):
    transport: str
    port: int

    def evaluate(self, profile):
        return _bool((self.transport, self.port) in profile.open_ports)


@dataclass(frozen=True)
class ServicePresent(Condition):
    name: str

    def __post_init__(self):
        if self.name not in SERVICE_PORTS:
            raise ValueError(f"unknown service name {self.name!r}")

    @property
    def ports(self) -> tuple[tuple[str, int], ...]:
        return SERVICE_PORTS[self.name]

    def evaluate(self, profile):
        open_ports = profile.open_ports
        return _bool(any(p in open_ports for p in self.ports))


@dataclass(frozen=True)
class BannerContains(Condition):
    text: str

    def evaluate(self, profile):
        return _bool(any(self.text in s.text for s in profile.host.services))


@dataclass(frozen=True)
class FieldContains(Condition):
    key: str
    text: str

    def evaluate(self, profile):
        for svc in profile.host.services:
            if any(self.text in value for value in svc.fields.get_all(self.key)):
                return MatchOutcome.MATCH
        return MatchOutcome.NO_MATCH


@dataclass(frozen=True)
class ModelIn(Condition):
    options: tuple[str, ...]

    def evaluate(self, profile):
        model = profile.model
        return _bool(model is not None and any(opt in model for opt in self.options))


@dataclass(frozen=True)
class FirmwareSatisfies(Condition):
    constraint: VersionConstraint

    def evaluate(self, profile):
        if profile.firmware is None:
            # unknown firmware: assume the device was never patched
            return MatchOutcome.INDETERMINATE
        return _bool(compare_version(profile.firmware, self.constraint))


@dataclass(frozen=True)
class And(Condition):
    items: tuple[Condition, ...]

    def evaluate(self, profile):
        result = MatchOutcome.MATCH
        for item in self.items:
            outcome = item.evaluate(profile)
            if outcome is MatchOutcome.NO_MATCH:
                return outcome
            if outcome is MatchOutcome.INDETERMINATE:
                result = outcome
        return result

    def atoms(self):
        for item in self.items:
            yield from item.atoms()

    def depth(self):
        return 1 + max(item.depth() for item in self.items)


@dataclass(frozen=True)
class Or(Condition):
    items: tuple[Condition, ...]

    def evaluate(self, profile):
        result = MatchOutcome.NO_MATCH
        for item in self.items:
            outcome = item.evaluate(profile)
            if outcome is MatchOutcome.MATCH:
                return outcome
            if outcome is MatchOutcome.INDETERMINATE:
                result = outcome
        return result

    def atoms(self):
        for item in self.items:
            yield from item.atoms()

    def depth(self):
        return 1 + max(item.depth() for item in self.items)


def evaluate_condition(cond: Condition, profile: DeviceProfile) -> MatchOutcome:
    return cond.evaluate(profile)


Atom = Union[Always, PortOpen, ServicePresent, BannerContains, FieldContains, ModelIn, FirmwareSatisfies]
