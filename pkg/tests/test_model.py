from datetime import datetime, timezone

import pytest

from icsaudit.errors import MalformedVersion
from icsaudit.model import (
    DeviceFamily,
    HostRecord,
    ServiceObservation,
    Version,
    extract_banner_fields,
    format_timestamp,
    host_to_json,
    parse_version,
)


def test_banner_fields_simatic():
    fields = extract_banner_fields(b"PLC name: SIMATIC 300\nModule type: CPU 315-2 DP")
    assert list(fields) == [("PLC name", "SIMATIC 300"), ("Module type", "CPU 315-2 DP")]


def test_banner_fields_empty():
    assert len(extract_banner_fields(b"")) == 0


def test_banner_without_key_lines():
    assert len(extract_banner_fields(b"220 iQ-R FTP server ready.")) == 0


def test_banner_fields_first_colon_and_case_insensitive_lookup():
    fields = extract_banner_fields(b"Time: 12:30:00\r\n  Version : v2.70 \r\n: orphan\n")
    assert fields.get("time") == "12:30:00"
    assert fields.get("VERSION") == "v2.70"
    assert "Version" in fields and "orphan" not in fields
    assert len(fields) == 2


def test_banner_fields_repeated_keys_kept_in_order():
    fields = extract_banner_fields(b"Module: A\nModule: B\n")
    assert fields.get("Module") == "A"
    assert fields.get_all("module") == ["A", "B"]


def test_banner_fields_tolerate_invalid_utf8():
    fields = extract_banner_fields(b"Name: \xff\xfeabc\n")
    assert fields.get("Name").endswith("abc")


@pytest.mark.parametrize(
    "text, segments",
    [("v2.70", (2, 70)), ("V 3.2.12", (3, 2, 12)), ("16.00", (16, 0)), ("7", (7,))],
)
def test_parse_version(text, segments):
    assert parse_version(text).segments == segments


@pytest.mark.parametrize("text", ["1766-L32BWA", "", "v", "3..1", "3.a", "-1.2", "３.1"])
def test_parse_version_rejects(text):
    with pytest.raises(MalformedVersion):
        parse_version(text)


def test_version_ordering_ignores_trailing_zeros():
    assert parse_version("3.10") == parse_version("3.10.0")
    assert hash(parse_version("3.10")) == hash(parse_version("3.10.0"))
    assert parse_version("3.9") < parse_version("3.10") < parse_version("3.10.1")
    assert parse_version("v2.70").render() == "2.70"
    assert str(parse_version("v2.70")) == "v2.70"


def test_version_rejects_negative():
    with pytest.raises(MalformedVersion):
        Version((1, -1))


def test_service_validation():
    with pytest.raises(ValueError):
        ServiceObservation("sctp", 80)
    with pytest.raises(ValueError):
        ServiceObservation("tcp", 0)
    svc = ServiceObservation("tcp", 502, b"Version: v2.70")
    assert svc.endpoint == ("tcp", 502)
    assert svc.fields.get("Version") == "v2.70"


def test_host_normalizes_and_rejects_duplicates():
    host = HostRecord("2001:DB8::1", (ServiceObservation("tcp", 80),), observed_at=datetime(2020, 4, 14))
    assert host.ip == "2001:db8::1"
    assert host.observed_at.tzinfo is not None
    assert host.open_ports == {("tcp", 80)}
    assert host.service("tcp", 80) is not None and host.service("udp", 80) is None
    with pytest.raises(ValueError):
        HostRecord("not-an-ip")
    with pytest.raises(ValueError):
        HostRecord("192.0.2.1", (ServiceObservation("tcp", 80), ServiceObservation("tcp", 80, b"x")))


def test_host_defaults_to_unknown_country():
    host = HostRecord("192.0.2.1")
    assert (host.country_code, host.country_name) == ("ZZ", "Unknown")


def test_format_timestamp():
    assert format_timestamp(datetime(2020, 4, 14, tzinfo=timezone.utc)) == "2020-04-14T00:00:00Z"
    assert format_timestamp(datetime(2020, 4, 14, 1, 2, 3, 45, tzinfo=timezone.utc)) == "2020-04-14T01:02:03.000045Z"
    assert format_timestamp(datetime(999, 1, 1, tzinfo=timezone.utc)).startswith("0999-")


def test_host_to_json_shape():
    host = HostRecord("192.0.2.7", (ServiceObservation("tcp", 502, b"abc"),), "FR", "France", honeypot_flag=False)
    doc = host_to_json(host)
    assert list(doc) == ["ip_str", "location", "hostnames", "org", "timestamp", "services", "honeypot"]
    assert doc["services"][0]["data"] == "abc"
    assert "honeypot" not in host_to_json(HostRecord("192.0.2.7"))


def test_family_lookup():
    assert DeviceFamily.lookup("schneiderbmxp34") is DeviceFamily.SCHNEIDER
    assert DeviceFamily.lookup("MITSUBISHI") is DeviceFamily.MITSUBISHI
    assert DeviceFamily.SIEMENS.display_name
    with pytest.raises(ValueError):
        DeviceFamily.lookup("Beckhoff")
