import pytest

from rangekit.scanmerge import (
    ReportParseError,
    Source,
    merge_scan_entries,
    parse_nmap_report,
    parse_openvas_report,
)

NMAP_TEMPLATE = """<?xml version="1.0"?>
<nmaprun scanner="nmap">
{hosts}
</nmaprun>
"""


def nmap_host(ip: str, body: str = "") -> str:
    return f'<host><address addr="{ip}" addrtype="ipv4"/>{body}</host>'


def osmatch(accuracy: int, *cpes: str, name: str = "match", osclass_attrs: str = "") -> str:
    cpe_elems = "".join(f"<cpe>{c}</cpe>" for c in cpes)
    return (
        f'<osmatch name="{name}" accuracy="{accuracy}">'
        f'<osclass type="general purpose" vendor="Linux" osfamily="Linux" osgen="3.X" {osclass_attrs}>'
        f"{cpe_elems}</osclass></osmatch>"
    )


def test_highest_accuracy_tier_wins():
    body = "<os>" + osmatch(97, "cpe:/o:linux:linux_kernel:4.4") + osmatch(92, "cpe:/o:linux:linux_kernel:2.6") + "</os>"
    doc = NMAP_TEMPLATE.format(hosts=nmap_host("10.0.0.5", body)).encode()
    [entry] = parse_nmap_report(doc)
    assert entry.ip == "10.0.0.5"
    assert entry.nmap.accuracy == 97
    assert [str(c) for c in entry.nmap.cpes] == ["cpe:/o:linux:linux_kernel:4.4"]


def test_no_osmatch_yields_empty_observation():
    doc = NMAP_TEMPLATE.format(hosts=nmap_host("10.0.0.5")).encode()
    [entry] = parse_nmap_report(doc)
    assert entry.nmap.cpes == ()
    assert entry.nmap.accuracy is None


def test_tied_accuracy_keeps_all_cpes():
    matches = [
        (95, "cpe:/o:linux:linux_kernel:3.2"),
        (95, "cpe:/o:linux:linux_kernel:4.4"),
        (90, "cpe:/o:linux:linux_kernel:2.6"),
    ]
    body = "<os>" + "".join(osmatch(acc, cpe) for acc, cpe in matches) + "</os>"
    doc = NMAP_TEMPLATE.format(hosts=nmap_host("10.0.0.7", body)).encode()
    [entry] = parse_nmap_report(doc)
    # brute-force the max-accuracy tier from the fixture list
    best = max(acc for acc, _ in matches)
    expected = [cpe for acc, cpe in matches if acc == best]
    assert [str(c) for c in entry.nmap.cpes] == expected


def test_application_cpes_stay_out_of_os_observation():
    body = "<os>" + osmatch(95, "cpe:/a:apache:http_server", "cpe:/o:linux:linux_kernel:3.2") + "</os>"
    doc = NMAP_TEMPLATE.format(hosts=nmap_host("10.0.0.9", body)).encode()
    [entry] = parse_nmap_report(doc)
    assert [str(c) for c in entry.nmap.cpes] == ["cpe:/o:linux:linux_kernel:3.2"]


def test_nmap_services_parsed():
    body = (
        "<ports>"
        '<port protocol="tcp" portid="22"><state state="open"/>'
        '<service name="ssh" product="OpenSSH" version="7.2p2"><cpe>cpe:/a:openbsd:openssh:7.2</cpe></service></port>'
        '<port protocol="udp" portid="53"><state state="open"/><service name="domain"/></port>'
        "</ports>"
    )
    doc = NMAP_TEMPLATE.format(hosts=nmap_host("10.0.0.5", body)).encode()
    [entry] = parse_nmap_report(doc)
    assert len(entry.services) == 2
    ssh = entry.services[0]
    assert (ssh.port, ssh.proto, ssh.name, ssh.version) == (22, "TCP", "ssh", "7.2p2")
    assert str(ssh.cpe) == "cpe:/a:openbsd:openssh:7.2"


def test_missing_accuracy_defaults_to_zero():
    body = '<os><osmatch name="guess"><osclass vendor="Linux" osfamily="Linux"><cpe>cpe:/o:linux:linux_kernel</cpe></osclass></osmatch></os>'
    doc = NMAP_TEMPLATE.format(hosts=nmap_host("10.0.0.5", body)).encode()
    [entry] = parse_nmap_report(doc)
    assert entry.nmap.accuracy == 0


def test_malformed_xml_raises():
    with pytest.raises(ReportParseError):
        parse_nmap_report(b"<nmaprun><host>")


def test_bad_accuracy_names_element_path():
    body = '<os><osmatch name="m" accuracy="high"/></os>'
    doc = NMAP_TEMPLATE.format(hosts=nmap_host("10.0.0.5", body)).encode()
    with pytest.raises(ReportParseError, match=r"host\[0\]/os/osmatch\[0\]"):
        parse_nmap_report(doc)


def test_host_without_ipv4_address_skipped():
    doc = NMAP_TEMPLATE.format(
        hosts='<host><address addr="00:11:22:33:44:55" addrtype="mac"/></host>'
    ).encode()
    assert parse_nmap_report(doc) == []


def test_bad_ipv4_address_rejected():
    doc = NMAP_TEMPLATE.format(hosts=nmap_host("10.0.0.999")).encode()
    with pytest.raises(ReportParseError, match="ipv4"):
        parse_nmap_report(doc)


def test_accuracy_out_of_range_rejected():
    body = '<os><osmatch name="m" accuracy="140"/></os>'
    doc = NMAP_TEMPLATE.format(hosts=nmap_host("10.0.0.5", body)).encode()
    with pytest.raises(ReportParseError, match="out of range"):
        parse_nmap_report(doc)


def test_duplicate_port_proto_rejected():
    body = (
        "<ports>"
        '<port protocol="tcp" portid="22"><service name="ssh"/></port>'
        '<port protocol="tcp" portid="22"><service name="ssh-alt"/></port>'
        "</ports>"
    )
    doc = NMAP_TEMPLATE.format(hosts=nmap_host("10.0.0.5", body)).encode()
    with pytest.raises(ReportParseError, match="duplicate"):
        parse_nmap_report(doc)


# ---------------------------------------------------------------------------
# OpenVAS CSV

HEADER = "ip,os_cpe,os,family,generation,vendor,cve_id,severity,port,proto,service,service_version,service_cpe"


def openvas_doc(*rows: str) -> bytes:
    return ("\n".join([HEADER, *rows]) + "\n").encode()


def test_openvas_os_row():
    doc = openvas_doc("10.1.10.16,cpe:/o:canonical:ubuntu_linux:12.04,Linux,Ubuntu,12.04,Canonical,,,,,,,")
    [entry] = parse_openvas_report(doc)
    assert entry.ip == "10.1.10.16"
    assert entry.openvas.source is Source.OPENVAS
    assert [str(c) for c in entry.openvas.cpes] == ["cpe:/o:canonical:ubuntu_linux:12.04"]
    assert entry.openvas.family == "Ubuntu"
    assert entry.openvas.generation == "12.04"


def test_openvas_cpe_less_row_keeps_text_fields():
    doc = openvas_doc("10.1.10.11,,Windows,10,,Microsoft,,,,,,,")
    [entry] = parse_openvas_report(doc)
    assert entry.openvas.cpes == ()
    assert entry.openvas.os == "Windows"
    assert entry.openvas.family == "10"
    assert entry.openvas.vendor == "Microsoft"


def test_openvas_duplicate_ip_rows_grouped():
    rows = [
        "10.0.0.4,cpe:/o:canonical:ubuntu_linux:14.04,Linux,Ubuntu,14.04,,,,,,,,",
        "10.0.0.4,cpe:/o:canonical:ubuntu_linux:16.04,,,,,,,,,,,",
        "10.0.0.9,cpe:/o:debian:debian_linux:7,,,,,,,,,,,",
    ]
    entries = parse_openvas_report(openvas_doc(*rows))
    # reference grouping pass
    groups: dict[str, list[str]] = {}
    for row in rows:
        cells = row.split(",")
        groups.setdefault(cells[0], [])
        if cells[1]:
            groups[cells[0]].append(cells[1])
    assert {e.ip for e in entries} == set(groups)
    by_ip = {e.ip: e for e in entries}
    for ip, cpes in groups.items():
        assert [str(c) for c in by_ip[ip].openvas.cpes] == cpes


def test_openvas_vuln_and_service_rows():
    rows = [
        "10.0.0.4,,,,,,CVE-2016-6515,7.8,,,,,",
        "10.0.0.4,,,,,,,,22,TCP,ssh,7.2p2,cpe:/a:openbsd:openssh:7.2",
    ]
    [entry] = parse_openvas_report(openvas_doc(*rows))
    assert entry.vulns == (("CVE-2016-6515", 7.8),)
    [service] = entry.services
    assert (service.port, service.proto, service.name) == (22, "TCP", "ssh")


@pytest.mark.parametrize(
    "row,column",
    [
        ("10.0.0.4,,,,,,CVE-1,eleven,,,,,", "severity"),
        ("10.0.0.4,,,,,,CVE-1,11.5,,,,,", "severity"),
        ("10.0.0.4,,,,,,,,99999,TCP,ssh,,", "port"),
        ("10.0.0.4,,,,,,,,22,ICMP,ssh,,", "proto"),
        ("10.0.0.4,,,,,,,,22,TCP,,,", "service"),
        ("10.0.0.4,cpe:/a:apache:http_server,,,,,,,,,,,", "os_cpe"),
        (",cpe:/o:debian:debian_linux:7,,,,,,,,,,,", "ip"),
    ],
)
def test_openvas_errors_name_row_and_column(row, column):
    with pytest.raises(ReportParseError) as excinfo:
        parse_openvas_report(openvas_doc(row))
    assert "row 2" in str(excinfo.value)
    assert column in str(excinfo.value)


def test_openvas_wrong_header_rejected():
    with pytest.raises(ReportParseError, match="header"):
        parse_openvas_report(b"ip,os\n10.0.0.1,Linux\n")


def test_merge_joins_on_ip_sorted():
    nmap_doc = NMAP_TEMPLATE.format(
        hosts=nmap_host("10.0.0.12") + nmap_host("10.0.0.2")
    ).encode()
    openvas = openvas_doc("10.0.0.12,cpe:/o:debian:debian_linux:7,,,,,,,,,,,")
    merged = merge_scan_entries(parse_nmap_report(nmap_doc), parse_openvas_report(openvas))
    assert [e.ip for e in merged] == ["10.0.0.2", "10.0.0.12"]
    assert merged[1].nmap is not None and merged[1].openvas is not None
