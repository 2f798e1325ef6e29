"""Value types for scan observations and fingerprinted devices."""
from __future__ import annotations

import enum
import ipaddress
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import total_ordering
from typing import Iterator, Optional

from .errors import MalformedVersion

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
UNKNOWN_COUNTRY = ("ZZ", "Unknown")
TRANSPORTS = ("tcp", "udp")


class DeviceFamily(str, enum.Enum):
    SCHNEIDER = "SchneiderBmxP34"
    SIEMENS = "SiemensS7_300"
    OMRON = "OmronCjCs"
    ROCKWELL = "RockwellMicroLogix1400"
    MITSUBISHI = "MitsubishiMelsecQ"
    UNKNOWN = "Unknown"

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    @classmethod
    def lookup(cls, name: str) -> "DeviceFamily":
        """Resolve an enum value, member name or short vendor alias (case-insensitive)."""
        wanted = name.strip().casefold()
        for member in cls:
            if wanted in (member.value.casefold(), member.name.casefold()):
                return member
        raise ValueError(f"unknown device family: {name!r}")


_DISPLAY_NAMES = {
    DeviceFamily.SCHNEIDER: "Schneider Electric BMX P34",
    DeviceFamily.SIEMENS: "Siemens S7-300",
    DeviceFamily.OMRON: "Omron CJ/CS",
    DeviceFamily.ROCKWELL: "Rockwell MicroLogix 1400",
    DeviceFamily.MITSUBISHI: "Mitsubishi MELSEC-Q",
    DeviceFamily.UNKNOWN: "Unknown",
}


def decode_banner(raw: bytes) -> str:
    return raw.decode("utf-8", errors="replace")


@dataclass(frozen=True)
class FieldMap:
    """Ordered multimap of banner "Key: Value" pairs with case-insensitive lookup."""

    entries: tuple[tuple[str, str], ...] = ()

    def get(self, key: str, default: Optional[str] = None) -> Optional[str]:
        wanted = key.casefold()
        for k, v in self.entries:
            if k.casefold() == wanted:
                return v
        return default

    def get_all(self, key: str) -> list[str]:
        wanted = key.casefold()
        return [v for k, v in self.entries if k.casefold() == wanted]

    def __contains__(self, key: object) -> bool:
        return isinstance(key, str) and self.get(key) is not None

    def __iter__(self) -> Iterator[tuple[str, str]]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def extract_banner_fields(raw_banner: bytes) -> FieldMap:
    entries = []
    for line in decode_banner(raw_banner).splitlines():
        key, sep, value = line.partition(":")
        key = key.strip()
        if not sep or not key:
            continue
        entries.append((key, value.strip(" \t")))
    return FieldMap(tuple(entries))


@total_ordering
@dataclass(frozen=True, eq=False)
class Version:
    segments: tuple[int, ...]
    raw: str = ""

    def __post_init__(self):
        if not self.segments or any(s < 0 for s in self.segments):
            raise MalformedVersion(f"invalid version segments: {self.segments!r}")
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def key(self) -> tuple[int, ...]:
        # trailing zeros carry no ordering information: 3.10 == 3.10.0
        segs = list(self.segments)
        while len(segs) > 1 and segs[-1] == 0:
            segs.pop()
        return tuple(segs)

    def __eq__(self, other):
        if not isinstance(other, Version):
            return NotImplemented
        return self.key == other.key

    def __lt__(self, other):
        if not isinstance(other, Version):
            return NotImplemented
        return self.key < other.key

    def __hash__(self):
        return hash(self.key)

    def render(self) -> str:
        return ".".join(str(s) for s in self.segments)

    def __str__(self) -> str:
        return self.raw or self.render()


def parse_version(text: str) -> Version:
    body = text.strip()
    if body[:1] in ("v", "V"):
        body = body[1:].lstrip(" ")
    if not body:
        raise MalformedVersion(f"not a version: {text!r}")
    segments = []
    for part in body.split("."):
        if not part.isascii() or not part.isdigit():
            raise MalformedVersion(f"not a version: {text!r}")
        segments.append(int(part))
    return Version(tuple(segments), text)


@dataclass(frozen=True)
class ServiceObservation:
    transport: str
    port: int
    raw_banner: bytes = b""
    product: Optional[str] = None
    version: Optional[str] = None
    fields: FieldMap = field(init=False, repr=False)
    text: str = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.transport not in TRANSPORTS:
            raise ValueError(f"transport must be tcp or udp, got {self.transport!r}")
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port out of range: {self.port}")
        object.__setattr__(self, "fields", extract_banner_fields(self.raw_banner))
        object.__setattr__(self, "text", decode_banner(self.raw_banner))

    @property
    def endpoint(self) -> tuple[str, int]:
        return (self.transport, self.port)


@dataclass(frozen=True)
class HostRecord:
    ip: str
    services: tuple[ServiceObservation, ...] = ()
    country_code: str = UNKNOWN_COUNTRY[0]
    country_name: str = UNKNOWN_COUNTRY[1]
    hostnames: tuple[str, ...] = ()
    org: Optional[str] = None
    observed_at: datetime = EPOCH
    honeypot_flag: Optional[bool] = None

    def __post_init__(self):
        object.__setattr__(self, "ip", str(ipaddress.ip_address(self.ip)))
        object.__setattr__(self, "services", tuple(self.services))
        object.__setattr__(self, "hostnames", tuple(self.hostnames))
        seen = set()
        for svc in self.services:
            if svc.endpoint in seen:
                raise ValueError(f"duplicate service {svc.endpoint} on {self.ip}")
            seen.add(svc.endpoint)
        if self.observed_at.tzinfo is None:
            object.__setattr__(self, "observed_at", self.observed_at.replace(tzinfo=timezone.utc))

    @property
    def open_ports(self) -> frozenset[tuple[str, int]]:
        return frozenset(s.endpoint for s in self.services)

    def service(self, transport: str, port: int) -> Optional[ServiceObservation]:
        for svc in self.services:
            if svc.transport == transport and svc.port == port:
                return svc
        return None


@dataclass(frozen=True)
class DeviceProfile:
    host: HostRecord
    family: DeviceFamily
    firmware: Optional[Version] = None
    model: Optional[str] = None

    @property
    def open_ports(self) -> frozenset[tuple[str, int]]:
        return self.host.open_ports


def format_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    # strftime does not zero-pad years below 1000
    text = f"{ts.year:04d}-{ts.month:02d}-{ts.day:02d}T{ts.hour:02d}:{ts.minute:02d}:{ts.second:02d}"
    if ts.microsecond:
        text += f".{ts.microsecond:06d}"
    return text + "Z"


def host_to_json(host: HostRecord) -> dict:
    """Canonical JSON object for a host; parse_host_record reads it back unchanged."""
    doc = {
        "ip_str": host.ip,
        "location": {"country_code": host.country_code, "country_name": host.country_name},
        "hostnames": list(host.hostnames),
        "org": host.org,
        "timestamp": format_timestamp(host.observed_at),
        "services": [
            {
                "transport": s.transport,
                "port": s.port,
                # surrogateescape keeps undecodable bytes recoverable
                "data": s.raw_banner.decode("utf-8", errors="surrogateescape"),
                "product": s.product,
                "version": s.version,
            }
            for s in host.services
        ],
    }
    if host.honeypot_flag is not None:
        doc["honeypot"] = host.honeypot_flag
    return doc
