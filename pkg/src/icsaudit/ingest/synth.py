"""Deterministic synthetic corpora with prescribed per-CVE occurrence counts.

Hosts are fabricated from a small archetype space per family (firmware,
model, optional ports, banner strings, banner fields). Every archetype is
rendered and pushed through the real fingerprint and rule code, which yields
its match signature. An integer program then decides how many hosts of each
signature to emit so the requested counts hold exactly.
"""
from __future__ import annotations

import ipaddress
import itertools
import json
import random
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable, Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from ..errors import InfeasibleSpec
from ..fingerprint import FamilyFingerprint, bundled_fingerprints, identify_family
from ..model import DeviceFamily, HostRecord, ServiceObservation, Version
from ..rules.conditions import (
    BannerContains,
    FieldContains,
    FirmwareSatisfies,
    PortOpen,
    ServicePresent,
    VersionConstraint,
    compare_version,
)
from ..rules.matching import exposure_signature
from ..rules.ruleset import RuleSet, load_bundled_rulesets
from .export import parse_timestamp

Endpoint = tuple[str, int]

DOC_NETWORKS = ("192.0.2.0/24", "198.51.100.0/24", "203.0.113.0/24", "198.18.0.0/15")

AUX_BANNERS: dict[Endpoint, bytes] = {
    ("tcp", 21): b"220 FTP server ready.\r\n",
    ("tcp", 22): b"SSH-2.0-dropbear_2017.75\r\n",
    ("tcp", 23): b"\xff\xfd\x18\xff\xfd\x20\xff\xfd\x23\xff\xfd\x27",
    ("tcp", 80): b"HTTP/1.1 200 OK\r\nContent-Type: text/html\r\n",
    ("tcp", 443): b"HTTP/1.1 200 OK\r\nContent-Type: text/html\r\n",
    ("tcp", 8080): b"HTTP/1.1 200 OK\r\nContent-Type: text/html\r\n",
    ("tcp", 8443): b"HTTP/1.1 200 OK\r\nContent-Type: text/html\r\n",
    ("tcp", 5900): b"RFB 003.008\n",
    ("udp", 161): b"SNMP:\n  Versions:\n    1\n",
}


@dataclass(frozen=True)
class CountryCount:
    code: str
    name: str
    devices: int


@dataclass(frozen=True)
class FamilySpec:
    family: DeviceFamily
    countries: tuple[CountryCount, ...] = ()
    targets: Mapping[str, int] = field(default_factory=dict)
    ports: Mapping[Endpoint, int] = field(default_factory=dict)
    observed_at: datetime = parse_timestamp("2020-04-14T00:00:00Z")

    @property
    def device_count(self) -> int:
        return sum(c.devices for c in self.countries)


@dataclass(frozen=True)
class CorpusSpec:
    families: tuple[FamilySpec, ...]
    rng_seed: int = 0


def _endpoint(text: str) -> Endpoint:
    transport, _, port = str(text).partition("/")
    if transport not in ("tcp", "udp") or not port.isdigit():
        raise ValueError(f"bad endpoint {text!r}, expected tcp/N or udp/N")
    return (transport, int(port))


def corpus_spec_from_json(doc: Mapping) -> CorpusSpec:
    if not isinstance(doc, Mapping) or not isinstance(doc.get("families"), list):
        raise ValueError("corpus spec needs a 'families' list")
    seed = doc.get("rng_seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ValueError("rng_seed must be a 64-bit unsigned integer")
    families = []
    for entry in doc["families"]:
        family = DeviceFamily.lookup(entry["family"])
        countries = []
        for c in entry.get("countries", []):
            devices = c["devices"]
            if isinstance(devices, bool) or not isinstance(devices, int) or devices < 0:
                raise ValueError(f"device count for {c.get('code')} must be a non-negative integer")
            countries.append(CountryCount(c["code"], c.get("name") or c["code"], devices))
        targets = {str(k): int(v) for k, v in entry.get("targets", {}).items()}
        ports = {_endpoint(k): int(v) for k, v in entry.get("ports", {}).items()}
        kwargs = {}
        if "observed_at" in entry:
            kwargs["observed_at"] = parse_timestamp(entry["observed_at"])
        families.append(FamilySpec(family, tuple(countries), targets, ports, **kwargs))
    return CorpusSpec(tuple(families), seed)


def load_corpus_spec(document: bytes | str) -> CorpusSpec:
    return corpus_spec_from_json(json.loads(document))


# ---------------------------------------------------------------- rendering


@dataclass(frozen=True)
class Archetype:
    firmware: Optional[tuple[int, ...]]
    model: Optional[str]
    ports: frozenset[Endpoint]
    tokens: tuple[str, ...]
    fields: tuple[tuple[str, str], ...]

    @property
    def cost(self) -> float:
        # prefer plain hosts; unknown firmware is allowed but slightly penalised
        return len(self.ports) + len(self.tokens) + len(self.fields) + (0.25 if self.firmware is None else 0.0)


@dataclass(frozen=True)
class FamilyTemplate:
    primary_ports: tuple[Endpoint, ...]
    models: tuple[Optional[str], ...]
    render_primary: Callable[[Archetype], tuple[bytes, Optional[str], Optional[str]]]


def _extra_lines(arch: Archetype) -> list[str]:
    return [f"{k}: {v}" for k, v in arch.fields] + list(arch.tokens)


def _schneider(arch: Archetype):
    fw = f"v{arch.firmware[0]}.{arch.firmware[1] if len(arch.firmware) > 1 else 0:02d}" if arch.firmware else None
    ident = "Schneider Electric BMX" if arch.model is None else f"Schneider Electric {arch.model}"
    lines = ["Unit ID: 0", f"Device Identification: {ident}" + (f" {fw}" if fw else "")]
    if arch.model:
        lines.append(f"CPU module: {arch.model}")
    if fw:
        lines.append(f"Version: {fw}")
    lines.append("Memory card: BMXRMS008MP")
    return ("\n".join(lines + _extra_lines(arch)) + "\n").encode(), None, None


def _siemens(arch: Archetype):
    lines = ["Copyright: Original Siemens Equipment", "PLC name: SIMATIC 300(1)"]
    if arch.model:
        lines.append(f"Module type: {arch.model}")
    lines.append("Module: 6ES7 315-2EH14-0AB0  v.0.0")
    if arch.firmware:
        lines.append("Basic Firmware: v." + ".".join(str(s) for s in arch.firmware))
    lines.append("Plant identification: ")
    return ("\n".join(lines + _extra_lines(arch)) + "\n").encode(), None, None


def _omron(arch: Archetype):
    lines = ["response code: 0x0000"]
    if arch.model:
        lines.append(f"Controller Model: {arch.model}")
    if arch.firmware:
        lines.append("Controller Version: " + ".".join(f"{s:02d}" for s in arch.firmware))
    if arch.model is None or not any(s in arch.model for s in ("CJ", "CS")):
        # the network unit is a CJ-series board even when the CPU is not
        lines.append("Unit Model: CJ1W-ETN21")
    lines.append("For System Use: ")
    lines.append("Program Area Size: 20")
    return ("\n".join(lines + _extra_lines(arch)) + "\n").encode(), None, None


def _rockwell(arch: Archetype):
    version = arch.model or "1766-L32BWA"
    if arch.firmware:
        major, *rest = arch.firmware
        version += f"/{major}." + (".".join(f"{s:02d}" for s in rest) if rest else "00")
    product = "Rockwell Automation/Allen-Bradley"
    lines = [f"Product name: {version}", f"Vendor ID: {product}", "Device type: Programmable Logic Controller"]
    return ("\n".join(lines + _extra_lines(arch)) + "\n").encode(), product, version


def _mitsubishi(arch: Archetype):
    lines = ["Melsec Q"]
    if arch.model:
        lines.append(f"CPU: {arch.model}")
    return ("\n".join(lines + _extra_lines(arch)) + "\n").encode(), None, None


TEMPLATES: dict[DeviceFamily, FamilyTemplate] = {
    DeviceFamily.SCHNEIDER: FamilyTemplate(
        (("tcp", 502),),
        ("BMX P34 2020", "BMX P34 2010", "BMX P34 20102", "BMX P34 2030", "BMX P34 20302",
         "BMX P34 2000", "BMX P34 1000", None),
        _schneider,
    ),
    DeviceFamily.SIEMENS: FamilyTemplate(
        (("tcp", 102),),
        ("CPU 315-2 PN/DP", "CPU 317-2 PN/DP", "CPU 315-2 DP", "CPU 314C-2 DP", "CPU 314", "CPU 312C",
         "IM 151-8 PN/DP", None),
        _siemens,
    ),
    DeviceFamily.OMRON: FamilyTemplate(
        (("tcp", 9600),),
        ("CJ2M-CPU33", "CJ2H-CPU64-EIP", "CJ1M-CPU12", "CS1G-CPU44H", "CS1H-CPU66H", "NJ501-1300",
         "CP1L-EM40DR-D", None),
        _omron,
    ),
    DeviceFamily.ROCKWELL: FamilyTemplate(
        (("tcp", 44818),),
        ("1766-L32BWA A", "1766-L32BWA B", "1766-L32BXB B", "1766-L32AWA C", "1766-L32BWAA C"),
        _rockwell,
    ),
    DeviceFamily.MITSUBISHI: FamilyTemplate(
        (("tcp", 5007), ("udp", 5006)),
        ("Q03UDECPU", "Q06UDEHCPU", "Q04UDVCPU", "Q06UDPVCPU", "Q03UDCPU", "Q02UCPU", "Q06HCPU"),
        _mitsubishi,
    ),
}


def render_services(family: DeviceFamily, arch: Archetype) -> tuple[ServiceObservation, ...]:
    template = TEMPLATES[family]
    banner, product, version = template.render_primary(arch)
    services = []
    for ep in sorted(arch.ports | set(template.primary_ports[:1] if len(template.primary_ports) == 1 else ())):
        if ep in template.primary_ports:
            services.append(ServiceObservation(ep[0], ep[1], banner, product, version))
        else:
            services.append(ServiceObservation(ep[0], ep[1], AUX_BANNERS.get(ep, b"")))
    return tuple(services)


# ---------------------------------------------------------------- archetypes


def _pred(t: tuple[int, ...]) -> Optional[tuple[int, ...]]:
    for i in range(len(t) - 1, -1, -1):
        if t[i] > 0:
            return t[:i] + (t[i] - 1,) + (99,) * (len(t) - i - 1)
    return None


def firmware_candidates(constraints: Sequence[VersionConstraint]) -> list[tuple[int, ...]]:
    """One representative version per region carved out by the constraints."""
    fills: dict[int, set[int]] = defaultdict(lambda: {0})
    for c in constraints:
        for i, seg in enumerate(c.pattern):
            if seg is not None:
                fills[i].add(seg)
    raw = []
    for c in constraints:
        w = c.wildcard_index
        bases = [c.pattern] if w is None else [c.pattern[:w] + (x,) + c.pattern[w + 1:] for x in sorted(fills[w])]
        for b in bases:
            raw.extend([b, _pred(b), b[:-1] + (b[-1] + 1,)])
    grid_axes = [sorted({v for s in fills[i] for v in (s, s + 1, max(s - 1, 0))}) for i in sorted(fills)]
    if grid_axes and np.prod([len(a) for a in grid_axes]) <= 5000:
        raw.extend(itertools.product(*grid_axes))
    reps: dict[tuple[bool, ...], tuple[int, ...]] = {}
    for cand in raw:
        if cand is None:
            continue
        sig = tuple(compare_version(Version(cand), c) for c in constraints)
        reps.setdefault(sig, cand)
    return list(reps.values())


def _atoms(ruleset: RuleSet):
    seen = set()
    for rule in ruleset.rules:
        for atom in rule.condition.atoms():
            if atom not in seen:
                seen.add(atom)
                yield atom


def enumerate_archetypes(family: DeviceFamily, ruleset: RuleSet, extra_ports: Iterable[Endpoint] = ()) -> list[Archetype]:
    template = TEMPLATES[family]
    atoms = list(_atoms(ruleset))
    constraints = [a.constraint for a in atoms if isinstance(a, FirmwareSatisfies)]
    firmwares: list[Optional[tuple[int, ...]]] = list(firmware_candidates(constraints)) if constraints else []
    firmwares.append(None)

    toggles: list[Endpoint] = []
    for a in atoms:
        if isinstance(a, PortOpen):
            toggles.append((a.transport, a.port))
        elif isinstance(a, ServicePresent):
            toggles.append(a.ports[0])
    toggles.extend(extra_ports)
    if len(template.primary_ports) > 1:
        toggles.extend(template.primary_ports)
    else:
        toggles = [t for t in toggles if t not in template.primary_ports]
    toggles = list(dict.fromkeys(toggles))

    tokens = list(dict.fromkeys(a.text for a in atoms if isinstance(a, BannerContains)))
    fields = list(dict.fromkeys((a.key, a.text) for a in atoms if isinstance(a, FieldContains)))

    def subsets(items):
        for r in range(len(items) + 1):
            yield from itertools.combinations(items, r)

    out = []
    for fw, model, ports, toks, flds in itertools.product(
        firmwares, template.models, list(subsets(toggles)), list(subsets(tokens)), list(subsets(fields))
    ):
        if len(template.primary_ports) > 1 and not set(ports) & set(template.primary_ports):
            continue
        out.append(Archetype(fw, model, frozenset(ports), toks, flds))
    return out


# ---------------------------------------------------------------- solving


def _solve_counts(signatures: list, costs: list[float], n: int, rows: list[tuple[list[int], int]]) -> list[int]:
    """Integer counts per signature meeting every (member-indices, total) row."""
    m = len(signatures)
    a = np.zeros((len(rows) + 1, m))
    b = np.zeros(len(rows) + 1)
    a[0, :] = 1
    b[0] = n
    for r, (members, total) in enumerate(rows, start=1):
        a[r, members] = 1
        b[r] = total
    res = milp(
        c=np.asarray(costs, dtype=float),
        constraints=LinearConstraint(a, b, b),
        integrality=np.ones(m),
        bounds=Bounds(0, n),
    )
    if res.status != 0 or res.x is None:
        raise InfeasibleSpec(res.message)
    counts = [int(round(v)) for v in res.x]
    if not np.array_equal(a @ np.asarray(counts), b):
        raise InfeasibleSpec("integer solution does not meet the targets")
    return counts


def _resolve_targets(spec: FamilySpec, ruleset: RuleSet) -> dict[int, int]:
    index = {k.key: i for i, k in enumerate(ruleset.keys)}
    out: dict[int, int] = {}
    for name, count in spec.targets.items():
        try:
            key = ruleset.key_for(name)
        except KeyError:
            raise InfeasibleSpec(f"{spec.family.value}: no rule or cluster named {name!r}") from None
        if not 0 <= count <= spec.device_count:
            raise InfeasibleSpec(f"{spec.family.value}: target {name}={count} outside 0..{spec.device_count}")
        i = index[key.key]
        if out.get(i, count) != count:
            raise InfeasibleSpec(f"{spec.family.value}: conflicting targets for {key.key}")
        out[i] = count
    return out


def _rule_ports(ruleset: RuleSet) -> set[Endpoint]:
    ports = set()
    for a in _atoms(ruleset):
        if isinstance(a, PortOpen):
            ports.add((a.transport, a.port))
        elif isinstance(a, ServicePresent):
            ports.update(a.ports)
    return ports


def _fabricate_family(
    spec: FamilySpec,
    ruleset: RuleSet,
    fingerprints: Sequence[FamilyFingerprint],
    rng: random.Random,
) -> list[tuple[tuple[ServiceObservation, ...], str, str]]:
    n = spec.device_count
    if n == 0:
        for name, count in spec.targets.items():
            if count:
                raise InfeasibleSpec(f"{spec.family.value}: target {name}={count} with no devices")
        return []
    template = TEMPLATES[spec.family]
    key_targets = _resolve_targets(spec, ruleset)
    rule_ports = _rule_ports(ruleset) | set(template.primary_ports)
    tracked_ports = sorted(p for p in spec.ports if p in rule_ports)
    late_ports = sorted(p for p in spec.ports if p not in rule_ports)

    groups: dict[tuple, list[Archetype]] = {}
    best_cost: dict[tuple, float] = {}
    probe_ip = "192.0.2.1"
    for arch in enumerate_archetypes(spec.family, ruleset, tracked_ports):
        host = HostRecord(ip=probe_ip, services=render_services(spec.family, arch))
        profile = identify_family(host, fingerprints)
        if profile.family is not spec.family:
            continue
        sig = (exposure_signature(profile, ruleset.keys), tuple(p in host.open_ports for p in tracked_ports))
        groups.setdefault(sig, []).append(arch)
        best_cost[sig] = min(best_cost.get(sig, arch.cost), arch.cost)
    if not groups:
        raise InfeasibleSpec(f"{spec.family.value}: no fabricated host is recognised by the fingerprint")

    sigs = list(groups)
    rows = [([j for j, s in enumerate(sigs) if s[0][i]], t) for i, t in sorted(key_targets.items())]
    rows += [([j for j, s in enumerate(sigs) if s[1][i]], spec.ports[p]) for i, p in enumerate(tracked_ports)]
    counts = _solve_counts(sigs, [best_cost[s] for s in sigs], n, rows)

    hosts: list[tuple[ServiceObservation, ...]] = []
    for sig, count in zip(sigs, counts):
        cheapest = [a for a in groups[sig] if a.cost == best_cost[sig]]
        for _ in range(count):
            pool = cheapest if rng.random() < 0.75 else groups[sig]
            hosts.append(render_services(spec.family, rng.choice(pool)))
    rng.shuffle(hosts)

    for port in late_ports:
        want = spec.ports[port]
        have = [i for i, svcs in enumerate(hosts) if any(s.endpoint == port for s in svcs)]
        lacking = [i for i, svcs in enumerate(hosts) if not any(s.endpoint == port for s in svcs)]
        if not len(have) <= want <= len(hosts):
            raise InfeasibleSpec(f"{spec.family.value}: cannot place {port[0]}/{port[1]} on exactly {want} hosts")
        for i in rng.sample(lacking, want - len(have)):
            svc = ServiceObservation(port[0], port[1], AUX_BANNERS.get(port, b""))
            hosts[i] = tuple(sorted(hosts[i] + (svc,), key=lambda s: s.endpoint))

    countries = [c for c in spec.countries for _ in range(c.devices)]
    return [(svcs, c.code, c.name) for svcs, c in zip(hosts, countries)]


def _address_pool() -> Iterator[str]:
    for net in DOC_NETWORKS:
        for addr in ipaddress.ip_network(net).hosts():
            yield str(addr)


def generate_corpus(
    spec: CorpusSpec,
    rulesets: Optional[Mapping[DeviceFamily, RuleSet]] = None,
    fingerprints: Optional[Sequence[FamilyFingerprint]] = None,
) -> list[HostRecord]:
    rulesets = load_bundled_rulesets() if rulesets is None else rulesets
    fingerprints = bundled_fingerprints() if fingerprints is None else list(fingerprints)
    seen = set()
    for fam in spec.families:
        if fam.family in seen or fam.family is DeviceFamily.UNKNOWN:
            raise InfeasibleSpec(f"family {fam.family.value} listed twice or not a device family")
        seen.add(fam.family)

    pool = _address_pool()
    out = []
    for fam in spec.families:
        rng = random.Random(f"{spec.rng_seed}:{fam.family.value}")
        for services, code, name in _fabricate_family(fam, rulesets[fam.family], fingerprints, rng):
            try:
                ip = next(pool)
            except StopIteration:
                raise InfeasibleSpec("corpus larger than the documentation address pool") from None
            out.append(
                HostRecord(
                    ip=ip,
                    services=services,
                    country_code=code,
                    country_name=name,
                    observed_at=fam.observed_at,
                )
            )
    return out
