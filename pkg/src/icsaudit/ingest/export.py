"""NDJSON host exports: parsing, per-IP merging and canonical serialization."""
from __future__ import annotations

import gzip
import io
import json
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import BinaryIO, Iterable, Optional

from ..errors import EmptyInput, MalformedRecord
from ..model import EPOCH, UNKNOWN_COUNTRY, HostRecord, ServiceObservation, host_to_json

log = logging.getLogger(__name__)

GZIP_MAGIC = b"\x1f\x8b"


@dataclass
class ExportStats:
    lines: int = 0
    records: int = 0
    malformed: int = 0
    hosts: int = 0
    errors: list[str] = field(default_factory=list)


def parse_timestamp(value) -> datetime:
    if value is None:
        return EPOCH
    if not isinstance(value, str):
        raise MalformedRecord(f"timestamp must be a string, got {value!r}")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(text)
    except ValueError as exc:
        raise MalformedRecord(f"bad timestamp {value!r}") from exc
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _optional_str(doc: dict, key: str) -> Optional[str]:
    value = doc.get(key)
    if value is None:
        return None
    if not isinstance(value, str):
        raise MalformedRecord(f"{key} must be a string")
    return value


def _parse_service(doc) -> ServiceObservation:
    if not isinstance(doc, dict):
        raise MalformedRecord("service entry is not an object")
    port = doc.get("port")
    if isinstance(port, bool) or not isinstance(port, int):
        raise MalformedRecord(f"service port must be an integer, got {port!r}")
    transport = doc.get("transport") or "tcp"
    data = doc.get("data") or ""
    if not isinstance(data, str):
        raise MalformedRecord("service data must be a string")
    try:
        return ServiceObservation(
            transport=transport,
            port=port,
            raw_banner=data.encode("utf-8", errors="surrogateescape"),
            product=_optional_str(doc, "product"),
            version=_optional_str(doc, "version"),
        )
    except ValueError as exc:
        raise MalformedRecord(str(exc)) from exc


def record_from_json(doc) -> HostRecord:
    """Map one decoded JSON object to a HostRecord.

    Besides the canonical shape (a "services" array) this accepts a raw search
    banner, where a single service is described by top-level port/data keys.
    """
    if not isinstance(doc, dict):
        raise MalformedRecord("record is not a JSON object")
    ip = doc.get("ip_str")
    if not isinstance(ip, str) or not ip:
        raise MalformedRecord("missing ip_str")

    if "services" in doc:
        raw_services = doc["services"]
        if not isinstance(raw_services, list):
            raise MalformedRecord("services must be an array")
    elif "port" in doc:
        raw_services = [doc]
    else:
        raw_services = []
    if not raw_services:
        raise MalformedRecord(f"no services for {ip}")
    services = [_parse_service(s) for s in raw_services]

    location = doc.get("location") or {}
    if not isinstance(location, dict):
        raise MalformedRecord("location must be an object")
    code = location.get("country_code") or UNKNOWN_COUNTRY[0]
    name = location.get("country_name")
    if name is None:
        name = UNKNOWN_COUNTRY[1] if code == UNKNOWN_COUNTRY[0] else code

    hostnames = doc.get("hostnames") or []
    if not isinstance(hostnames, list) or not all(isinstance(h, str) for h in hostnames):
        raise MalformedRecord("hostnames must be an array of strings")
    honeypot = doc.get("honeypot")
    if honeypot is not None and not isinstance(honeypot, bool):
        raise MalformedRecord("honeypot must be a boolean")

    try:
        return HostRecord(
            ip=ip,
            services=tuple(services),
            country_code=str(code),
            country_name=str(name),
            hostnames=tuple(hostnames),
            org=_optional_str(doc, "org"),
            observed_at=parse_timestamp(doc.get("timestamp")),
            honeypot_flag=honeypot,
        )
    except ValueError as exc:
        raise MalformedRecord(str(exc)) from exc


def parse_host_record(line: bytes | str) -> HostRecord:
    try:
        doc = json.loads(line)
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedRecord(f"invalid JSON: {exc}") from exc
    return record_from_json(doc)


class _Prefixed(io.RawIOBase):
    """Re-attach bytes consumed while sniffing the stream header."""

    def __init__(self, head: bytes, stream: BinaryIO):
        self._head = head
        self._stream = stream

    def readable(self):
        return True

    def readinto(self, buf):
        if self._head:
            n = min(len(buf), len(self._head))
            buf[:n] = self._head[:n]
            self._head = self._head[n:]
            return n
        data = self._stream.read(len(buf))
        buf[: len(data)] = data
        return len(data)


def _open_lines(stream: BinaryIO) -> Iterable[bytes]:
    head = stream.read(2)
    source = io.BufferedReader(_Prefixed(head, stream))
    if head == GZIP_MAGIC:
        return gzip.GzipFile(fileobj=source)
    return source


def merge_records(records: Iterable[HostRecord]) -> list[HostRecord]:
    """Collapse records by IP, in order of first appearance.

    Services are unioned by (transport, port); the copy from the latest
    timestamp wins and ties go to the record seen later. Host-level fields
    come from the latest record, hostnames are unioned.
    """
    merged: dict[str, dict] = {}
    for rec in records:
        state = merged.get(rec.ip)
        if state is None:
            merged[rec.ip] = {
                "host": rec,
                "services": {s.endpoint: (rec.observed_at, s) for s in rec.services},
                "hostnames": list(rec.hostnames),
            }
            continue
        for svc in rec.services:
            prior = state["services"].get(svc.endpoint)
            if prior is None or rec.observed_at >= prior[0]:
                state["services"][svc.endpoint] = (rec.observed_at, svc)
        for name in rec.hostnames:
            if name not in state["hostnames"]:
                state["hostnames"].append(name)
        if rec.observed_at >= state["host"].observed_at:
            state["host"] = rec

    hosts = []
    for state in merged.values():
        services = tuple(svc for _, svc in state["services"].values())
        hosts.append(replace(state["host"], services=services, hostnames=tuple(state["hostnames"])))
    return hosts


def load_export(stream: BinaryIO, stats: Optional[ExportStats] = None) -> list[HostRecord]:
    stats = stats if stats is not None else ExportStats()
    records = []
    for lineno, line in enumerate(_open_lines(stream), start=1):
        if not line.strip():
            continue
        stats.lines += 1
        try:
            records.append(parse_host_record(line))
        except MalformedRecord as exc:
            stats.malformed += 1
            if len(stats.errors) < 20:
                stats.errors.append(f"line {lineno}: {exc}")
    stats.records = len(records)
    if stats.malformed:
        log.warning("skipped %d malformed line(s) of %d", stats.malformed, stats.lines)
    if stats.lines and not records:
        raise EmptyInput(f"none of {stats.lines} line(s) held a valid host record")
    hosts = merge_records(records)
    stats.hosts = len(hosts)
    return hosts


def dump_host(host: HostRecord) -> bytes:
    return json.dumps(host_to_json(host), ensure_ascii=True, separators=(",", ":")).encode("ascii") + b"\n"


def dump_export(hosts: Iterable[HostRecord], stream: BinaryIO) -> None:
    for host in hosts:
        stream.write(dump_host(host))
