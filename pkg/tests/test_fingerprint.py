import json

import pytest

from icsaudit.errors import SchemaError, ValidationError
from icsaudit.fingerprint import extract_profile_fields, identify_family, load_fingerprints
from icsaudit.model import DeviceFamily, HostRecord, ServiceObservation

F = DeviceFamily


def host(*services):
    return HostRecord("192.0.2.1", tuple(ServiceObservation(*s) for s in services))


def test_schneider_identified_with_firmware():
    profile = identify_family(host(("tcp", 502, b"Schneider Electric BMX P34 2020\nVersion: v2.70")))
    assert profile.family is F.SCHNEIDER
    assert profile.firmware.segments == (2, 70)


def test_schneider_banner_on_wrong_port_is_unknown():
    assert identify_family(host(("tcp", 80, b"Schneider Electric BMX"))).family is F.UNKNOWN


def test_omron_local_filter():
    ok = host(("tcp", 9600, b"response code: 0x0000\nController Model: CJ2M-CPU33\n"))
    assert identify_family(ok).family is F.OMRON
    assert identify_family(ok).model == "CJ2M-CPU33"
    other = host(("tcp", 9600, b"response code: 0x0000\nController Model: NJ501-1300\n"))
    assert identify_family(other).family is F.UNKNOWN


def test_http_only_is_unknown():
    assert identify_family(host(("tcp", 80, b"HTTP/1.1 200 OK"))).family is F.UNKNOWN


def test_rockwell_product_and_version():
    h = host(("tcp", 44818, b"", "Rockwell Automation/Allen-Bradley", "1766-L32BWA B/15.00"))
    profile = identify_family(h)
    assert profile.family is F.ROCKWELL
    assert profile.model == "1766-L32BWA B/15.00"
    assert profile.firmware.segments == (15, 0)
    wrong = host(("tcp", 44818, b"", "Rockwell Automation/Allen-Bradley", "1756-EN2T"))
    assert identify_family(wrong).family is F.UNKNOWN


def test_siemens_model_and_dotted_firmware():
    h = host(("tcp", 102, b"PLC name: SIMATIC 300\nModule type: CPU 315-2 PN/DP\nBasic Firmware: v.3.2.6\n"))
    firmware, model = extract_profile_fields(h, F.SIEMENS)
    assert model == "CPU 315-2 PN/DP"
    assert firmware.segments == (3, 2, 6)


def test_mitsubishi_model_on_either_port():
    for ep in (("udp", 5006), ("tcp", 5007)):
        profile = identify_family(host((*ep, b"Melsec Q\nCPU: Q03UDECPU\n")))
        assert profile.family is F.MITSUBISHI
        assert profile.model == "Q03UDECPU"
        assert profile.firmware is None


def test_unparseable_firmware_is_unknown():
    profile = identify_family(host(("tcp", 502, b"Schneider Electric BMX\nVersion: unknown")))
    assert profile.family is F.SCHNEIDER and profile.firmware is None


def test_first_matching_family_wins(caplog):
    h = host(("tcp", 502, b"Schneider Electric BMX"), ("tcp", 102, b"PLC name: SIMATIC 300"))
    assert identify_family(h).family is F.SCHNEIDER
    assert "several families" in caplog.text


def _doc(**override):
    entry = {"family": "SchneiderBmxP34", "required_ports": ["tcp/502"], "banner_must_contain": ["BMX"]}
    entry.update(override)
    return json.dumps({"version": 1, "fingerprints": [entry]})


@pytest.mark.parametrize(
    "document, error",
    [
        ("not json", SchemaError),
        ('{"fingerprints": 3}', SchemaError),
        (_doc(family="Nope"), ValidationError),
        (_doc(required_ports=[]), ValidationError),
        (_doc(required_ports=["sctp/1"]), SchemaError),
        (_doc(banner_must_contain=[]), ValidationError),
        (_doc(local_filters=[{"in": "nowhere", "contains_any": ["x"]}]), SchemaError),
    ],
)
def test_bad_fingerprint_files(document, error):
    with pytest.raises(error):
        load_fingerprints(document)


def test_repeated_family_rejected():
    entry = {"family": "SchneiderBmxP34", "required_ports": ["tcp/502"], "banner_must_contain": ["BMX"]}
    with pytest.raises(ValidationError):
        load_fingerprints(json.dumps({"fingerprints": [entry, entry]}))


def test_custom_fingerprints_used():
    fps = load_fingerprints(_doc(banner_must_contain=["Custom"]))
    assert identify_family(host(("tcp", 502, b"Custom PLC")), fps).family is F.SCHNEIDER
    assert identify_family(host(("tcp", 502, b"Schneider Electric BMX")), fps).family is F.UNKNOWN
