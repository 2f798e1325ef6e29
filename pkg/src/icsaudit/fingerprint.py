"""Device-family identification from open ports and banners."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

from .errors import MalformedVersion, SchemaError, ValidationError
from .model import DeviceFamily, DeviceProfile, HostRecord, ServiceObservation, Version, parse_version

log = logging.getLogger(__name__)

_VERSION_RUN = re.compile(r"\d+(?:\.\d+)+")
_FILTER_SOURCES = ("banner", "field", "product", "version")


@dataclass(frozen=True)
class LocalFilter:
    """Predicate over one service: a banner, a banner field, or the product/version attributes."""

    source: str
    key: Optional[str] = None
    contains_any: tuple[str, ...] = ()
    startswith: Optional[str] = None

    def _subject(self, svc: ServiceObservation) -> list[str]:
        if self.source == "banner":
            return [svc.text]
        if self.source == "field":
            return svc.fields.get_all(self.key or "")
        value = svc.product if self.source == "product" else svc.version
        return [value] if value is not None else []

    def accepts(self, svc: ServiceObservation) -> bool:
        for text in self._subject(svc):
            if self.contains_any and not any(s in text for s in self.contains_any):
                continue
            if self.startswith is not None and not text.startswith(self.startswith):
                continue
            return True
        return False


@dataclass(frozen=True)
class ExtractSource:
    field: Optional[str] = None
    attr: Optional[str] = None
    pattern: Optional[str] = None

    def read(self, svc: ServiceObservation) -> Optional[str]:
        if self.field is not None:
            value = svc.fields.get(self.field)
        else:
            value = svc.product if self.attr == "product" else svc.version
        if value is None:
            return None
        if self.pattern is not None:
            m = re.search(self.pattern, value)
            if not m:
                return None
            value = m.group(1) if m.groups() else m.group(0)
        value = value.strip()
        return value or None


@dataclass(frozen=True)
class FamilyFingerprint:
    family: DeviceFamily
    required_ports: frozenset[tuple[str, int]]
    banner_must_contain: tuple[str, ...] = ()
    local_filters: tuple[LocalFilter, ...] = ()
    firmware_sources: tuple[ExtractSource, ...] = ()
    model_sources: tuple[ExtractSource, ...] = ()
    query: str = ""

    def matching_services(self, host: HostRecord) -> list[ServiceObservation]:
        hits = []
        for svc in host.services:
            if svc.endpoint not in self.required_ports:
                continue
            if not all(s in svc.text for s in self.banner_must_contain):
                continue
            if not all(f.accepts(svc) for f in self.local_filters):
                continue
            hits.append(svc)
        return hits


def _port(text, where: str) -> tuple[str, int]:
    m = re.fullmatch(r"(tcp|udp)/(\d{1,5})", str(text))
    if not m or not 1 <= int(m.group(2)) <= 65535:
        raise ValidationError(f"{where}: bad port {text!r}, expected tcp/N or udp/N")
    return (m.group(1), int(m.group(2)))


def _strings(value, where: str) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise SchemaError(f"{where}: expected a list of strings")
    return tuple(value)


def _sources(raw, where: str) -> tuple[ExtractSource, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise SchemaError(f"{where}: expected a list")
    out = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or ("field" in item) == ("attr" in item):
            raise SchemaError(f"{where}[{i}]: give exactly one of field or attr")
        if "attr" in item and item["attr"] not in ("product", "version"):
            raise ValidationError(f"{where}[{i}]: attr must be product or version")
        pattern = item.get("pattern")
        if pattern is not None:
            try:
                re.compile(pattern)
            except re.error as exc:
                raise ValidationError(f"{where}[{i}]: bad pattern: {exc}") from None
        out.append(ExtractSource(field=item.get("field"), attr=item.get("attr"), pattern=pattern))
    return tuple(out)


def _filter(raw, where: str) -> LocalFilter:
    if not isinstance(raw, dict):
        raise SchemaError(f"{where}: filter must be an object")
    source = raw.get("in")
    if source not in _FILTER_SOURCES:
        raise ValidationError(f"{where}: 'in' must be one of {', '.join(_FILTER_SOURCES)}")
    if source == "field" and not isinstance(raw.get("key"), str):
        raise SchemaError(f"{where}: field filters need a key")
    contains = _strings(raw.get("contains_any", []), where)
    startswith = raw.get("startswith")
    if startswith is not None and not isinstance(startswith, str):
        raise SchemaError(f"{where}: startswith must be a string")
    if not contains and startswith is None:
        raise ValidationError(f"{where}: filter needs contains_any or startswith")
    return LocalFilter(source, raw.get("key"), contains, startswith)


def load_fingerprints(document: bytes | str) -> list[FamilyFingerprint]:
    try:
        doc = json.loads(document)
    except (ValueError, UnicodeDecodeError) as exc:
        raise SchemaError(f"fingerprint file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("fingerprints"), list):
        raise SchemaError("fingerprint file needs a 'fingerprints' list")
    out = []
    seen = set()
    for i, raw in enumerate(doc["fingerprints"]):
        where = f"fingerprints[{i}]"
        if not isinstance(raw, dict):
            raise SchemaError(f"{where}: must be an object")
        try:
            family = DeviceFamily(raw.get("family"))
        except ValueError:
            raise ValidationError(f"{where}: unknown family {raw.get('family')!r}") from None
        if family is DeviceFamily.UNKNOWN or family in seen:
            raise ValidationError(f"{where}: family {family.value} is invalid or repeated")
        seen.add(family)
        ports = frozenset(_port(p, where) for p in _strings(raw.get("required_ports", []), where))
        if not ports:
            raise ValidationError(f"{where}: required_ports is empty")
        must = _strings(raw.get("banner_must_contain", []), where)
        filters = tuple(_filter(f, f"{where}.local_filters") for f in raw.get("local_filters", []) or [])
        if not must and not filters:
            raise ValidationError(f"{where}: needs banner_must_contain or local_filters")
        extract = raw.get("extract", {}) or {}
        if not isinstance(extract, dict):
            raise SchemaError(f"{where}: extract must be an object")
        out.append(
            FamilyFingerprint(
                family=family,
                required_ports=ports,
                banner_must_contain=must,
                local_filters=filters,
                firmware_sources=_sources(extract.get("firmware"), f"{where}.extract.firmware"),
                model_sources=_sources(extract.get("model"), f"{where}.extract.model"),
                query=str(raw.get("query", "")),
            )
        )
    return out


_BUNDLED: Optional[list[FamilyFingerprint]] = None


def bundled_fingerprints() -> list[FamilyFingerprint]:
    global _BUNDLED
    if _BUNDLED is None:
        _BUNDLED = load_fingerprints(resources.files("icsaudit.data").joinpath("fingerprints.json").read_bytes())
    return list(_BUNDLED)


def _as_version(text: str) -> Optional[Version]:
    try:
        return parse_version(text)
    except MalformedVersion:
        pass
    # banners such as "v.3.2.6" or "V3.3.17 (build 4)"
    m = _VERSION_RUN.search(text)
    return parse_version(m.group(0)) if m else None


def _ordered_services(host: HostRecord, fp: FamilyFingerprint) -> list[ServiceObservation]:
    primary = [s for s in host.services if s.endpoint in fp.required_ports]
    return primary + [s for s in host.services if s.endpoint not in fp.required_ports]


def extract_profile_fields(
    host: HostRecord,
    family: DeviceFamily,
    fingerprints: Optional[Sequence[FamilyFingerprint]] = None,
) -> tuple[Optional[Version], Optional[str]]:
    fps = bundled_fingerprints() if fingerprints is None else fingerprints
    fp = next((f for f in fps if f.family is family), None)
    if fp is None:
        return None, None
    services = _ordered_services(host, fp)
    firmware = None
    for source in fp.firmware_sources:
        for svc in services:
            text = source.read(svc)
            if text is not None:
                firmware = _as_version(text)
            if firmware is not None:
                break
        if firmware is not None:
            break
    model = None
    for source in fp.model_sources:
        model = next((t for t in (source.read(s) for s in services) if t is not None), None)
        if model is not None:
            break
    return firmware, model


def identify_family(host: HostRecord, fingerprints: Optional[Sequence[FamilyFingerprint]] = None) -> DeviceProfile:
    fps = bundled_fingerprints() if fingerprints is None else fingerprints
    matched = [fp for fp in fps if fp.matching_services(host)]
    if not matched:
        return DeviceProfile(host=host, family=DeviceFamily.UNKNOWN)
    if len(matched) > 1:
        log.warning(
            "%s matches several families (%s); keeping %s",
            host.ip,
            ", ".join(fp.family.value for fp in matched),
            matched[0].family.value,
        )
    family = matched[0].family
    firmware, model = extract_profile_fields(host, family, fps)
    return DeviceProfile(host=host, family=family, firmware=firmware, model=model)
