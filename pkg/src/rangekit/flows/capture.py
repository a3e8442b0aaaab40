"""Packet-capture ingestion: classic libpcap files and a CSV fixture format.

Only IPv4 frames become packets; anything else is skipped and counted on
the returned list. Packet lengths are the capture-recorded frame lengths.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from enum import Enum

TCP = 6
UDP = 17

# TCP flag bits (wire positions).
FIN = 0x01
SYN = 0x02
RST = 0x04
ACK = 0x10

_FLAG_LETTERS = (("S", SYN), ("F", FIN), ("R", RST), ("A", ACK))

_MAGIC_US = 0xA1B2C3D4
_MAGIC_NS = 0xA1B23C4D

_ETHERTYPE_IPV4 = 0x0800
_ETHERTYPE_VLAN = (0x8100, 0x88A8)


class CaptureFormat(Enum):
    PCAP = "pcap"
    PACKET_CSV = "csv"


class CaptureFormatError(ValueError):
    """The capture file is structurally invalid; message carries the offset."""


@dataclass(frozen=True, slots=True)
class PacketMeta:
    ts: int  # epoch microseconds
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    proto: int  # IP protocol number
    length: int
    tcp_flags: int | None = None


class PacketList(list):
    """A list of PacketMeta carrying the non-IPv4 skip counter."""

    def __init__(self, packets=(), skipped_non_ipv4: int = 0):
        super().__init__(packets)
        self.skipped_non_ipv4 = skipped_non_ipv4


def flags_to_letters(flags: int | None) -> str:
    if not flags:
        return ""
    return "".join(letter for letter, bit in _FLAG_LETTERS if flags & bit)


def letters_to_flags(letters: str) -> int:
    mask = 0
    lookup = dict(_FLAG_LETTERS)
    for letter in letters:
        bit = lookup.get(letter.upper())
        if bit is None:
            raise ValueError(f"unknown flag letter {letter!r}")
        mask |= bit
    return mask


def read_capture(data: bytes, format: CaptureFormat) -> PacketList:
    """Parse capture bytes into packets, in file order."""
    if format is CaptureFormat.PCAP:
        return _read_pcap(data)
    return _read_packet_csv(data)


def _read_pcap(data: bytes) -> PacketList:
    if len(data) < 24:
        raise CaptureFormatError("truncated global header at byte offset 0")
    magic = struct.unpack("<I", data[:4])[0]
    if magic == _MAGIC_US:
        endian, ns = "<", False
    elif magic == _MAGIC_NS:
        endian, ns = "<", True
    else:
        magic_be = struct.unpack(">I", data[:4])[0]
        if magic_be == _MAGIC_US:
            endian, ns = ">", False
        elif magic_be == _MAGIC_NS:
            endian, ns = ">", True
        else:
            raise CaptureFormatError(f"bad magic 0x{magic:08x} at byte offset 0")

    packets: list[PacketMeta] = []
    skipped = 0
    offset = 24
    record = struct.Struct(endian + "IIII")
    total = len(data)
    while offset < total:
        if offset + 16 > total:
            raise CaptureFormatError(f"truncated record header at byte offset {offset}")
        ts_sec, ts_frac, incl_len, orig_len = record.unpack_from(data, offset)
        offset += 16
        if offset + incl_len > total:
            raise CaptureFormatError(f"truncated record body at byte offset {offset}")
        frame = data[offset : offset + incl_len]
        offset += incl_len
        ts = ts_sec * 1_000_000 + (ts_frac // 1000 if ns else ts_frac)
        packet = _decode_ethernet(frame, ts, orig_len)
        if packet is None:
            skipped += 1
        else:
            packets.append(packet)
    return PacketList(packets, skipped)


def _decode_ethernet(frame: bytes, ts: int, orig_len: int) -> PacketMeta | None:
    if len(frame) < 14:
        return None
    ethertype = struct.unpack_from("!H", frame, 12)[0]
    l3_offset = 14
    if ethertype in _ETHERTYPE_VLAN:
        if len(frame) < 18:
            return None
        ethertype = struct.unpack_from("!H", frame, 16)[0]
        l3_offset = 18
    if ethertype != _ETHERTYPE_IPV4:
        return None
    ip = frame[l3_offset:]
    if len(ip) < 20:
        return None
    version_ihl = ip[0]
    if version_ihl >> 4 != 4:
        return None
    ihl = (version_ihl & 0x0F) * 4
    proto = ip[9]
    src_ip = ".".join(str(b) for b in ip[12:16])
    dst_ip = ".".join(str(b) for b in ip[16:20])
    src_port = dst_port = 0
    tcp_flags = None
    l4 = ip[ihl:]
    if proto == TCP and len(l4) >= 14:
        src_port, dst_port = struct.unpack_from("!HH", l4, 0)
        tcp_flags = l4[13]
    elif proto == UDP and len(l4) >= 4:
        src_port, dst_port = struct.unpack_from("!HH", l4, 0)
    return PacketMeta(
        ts=ts,
        src_ip=src_ip,
        dst_ip=dst_ip,
        src_port=src_port,
        dst_port=dst_port,
        proto=proto,
        length=orig_len,
        tcp_flags=tcp_flags,
    )


PACKET_CSV_COLUMNS = ("ts_us", "src_ip", "src_port", "dst_ip", "dst_port", "proto", "length", "flags")

_PROTO_TOKENS = {"TCP": TCP, "UDP": UDP}


def _read_packet_csv(data: bytes) -> PacketList:
    reader = csv.reader(io.StringIO(data.decode("utf-8")))
    try:
        header = next(reader)
    except StopIteration:
        raise CaptureFormatError("row 1: missing header") from None
    if tuple(header) != PACKET_CSV_COLUMNS:
        raise CaptureFormatError(f"row 1: header must be {','.join(PACKET_CSV_COLUMNS)}")
    packets: list[PacketMeta] = []
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not cell for cell in row):
            continue
        if len(row) != len(PACKET_CSV_COLUMNS):
            raise CaptureFormatError(f"row {row_no}: expected {len(PACKET_CSV_COLUMNS)} columns")
        try:
            ts = int(row[0])
            src_port = int(row[2])
            dst_port = int(row[4])
            length = int(row[6])
        except ValueError as exc:
            raise CaptureFormatError(f"row {row_no}: {exc}") from exc
        proto_token = row[5].strip().upper()
        proto = _PROTO_TOKENS.get(proto_token)
        if proto is None:
            try:
                proto = int(proto_token)
            except ValueError:
                raise CaptureFormatError(f"row {row_no}: bad proto {row[5]!r}") from None
        flags: int | None = None
        if proto == TCP:
            try:
                flags = letters_to_flags(row[7].strip())
            except ValueError as exc:
                raise CaptureFormatError(f"row {row_no}: {exc}") from exc
        packets.append(
            PacketMeta(
                ts=ts,
                src_ip=row[1].strip(),
                dst_ip=row[3].strip(),
                src_port=src_port,
                dst_port=dst_port,
                proto=proto,
                length=length,
                tcp_flags=flags,
            )
        )
    return PacketList(packets, 0)
