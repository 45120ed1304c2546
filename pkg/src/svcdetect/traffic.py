"""Packet and conversation model: capture ingestion, direction, relevance.

A conversation is all traffic between one local and one remote IP address,
direction-normalized, so both directions of an exchange share one key.
Ports and protocol are carried as metadata only; grouping uses the IP pair.

Canonical capture format is JSON Lines, one object per line:

    {"ts_us": 1200, "src": "192.168.50.10", "dst": "203.0.113.7",
     "len": 1400, "proto": "udp", "sport": 50000, "dport": 443}

``sport``/``dport`` are present iff ``proto`` is ``tcp`` or ``udp``.
A classic libpcap adapter (Ethernet + IPv4/IPv6 only) feeds the same
record type.
"""

from __future__ import annotations

import enum
import functools
import ipaddress
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple


class CaptureError(Exception):
    """Base class for capture ingestion failures."""


class CaptureParseError(CaptureError):
    """A record is malformed; the message cites the line or byte offset."""


class CaptureFormatError(CaptureError):
    """The file is not in the declared format (bad magic, link type, ...)."""


class DirectionAmbiguityError(ValueError):
    """Both or neither endpoint of a packet is local."""


class Protocol(str, enum.Enum):
    TCP = "tcp"
    UDP = "udp"
    OTHER = "other"


class Direction(str, enum.Enum):
    UL = "UL"
    DL = "DL"


class ConversationKey(NamedTuple):
    """Direction-normalized flow identity: (local endpoint, remote endpoint)."""

    local_ip: str
    remote_ip: str


@functools.lru_cache(maxsize=4096)
def canonical_ip(text: str) -> str:
    """Normalize an IP literal (compresses IPv6, rejects junk)."""
    return str(ipaddress.ip_address(text))


@dataclass(frozen=True, slots=True)
class PacketRecord:
    """One observed packet. Immutable; safe to share across threads."""

    timestamp_us: int
    src_ip: str
    dst_ip: str
    size_bytes: int
    protocol: Protocol
    src_port: int | None = None
    dst_port: int | None = None

    def __post_init__(self) -> None:
        if self.timestamp_us < 0:
            raise ValueError(f"negative timestamp_us: {self.timestamp_us}")
        if self.size_bytes < 0:
            raise ValueError(f"negative size_bytes: {self.size_bytes}")
        has_ports = self.src_port is not None and self.dst_port is not None
        if self.protocol is Protocol.OTHER:
            if self.src_port is not None or self.dst_port is not None:
                raise ValueError("ports are only valid for tcp/udp packets")
        elif not has_ports:
            raise ValueError(f"{self.protocol.value} packet is missing ports")
        for port in (self.src_port, self.dst_port):
            if port is not None and not 0 <= port <= 65535:
                raise ValueError(f"port out of range: {port}")


@dataclass
class Diagnostics:
    """Counters for packets the pipeline drops rather than classifies."""

    ambiguous_direction: int = 0
    pre_epoch: int = 0
    irrelevant: int = 0
    non_ip_frames: int = 0
    truncated_l4: int = 0


@dataclass(frozen=True)
class RelevanceConfig:
    """Networks whose subnet-broadcast addresses are filtered out."""

    local_networks: tuple[ipaddress.IPv4Network, ...] = ()

    @classmethod
    def from_cidrs(cls, cidrs: Iterable[str]) -> "RelevanceConfig":
        nets = tuple(ipaddress.IPv4Network(c, strict=False) for c in cidrs)
        return cls(local_networks=nets)


def classify_direction(packet: PacketRecord, local: frozenset[str] | set[str]) -> Direction:
    """UL when the packet originates from a local address, DL when it targets one.

    Raises DirectionAmbiguityError when both or neither endpoint is local;
    callers drop such packets and count them in Diagnostics.
    """
    src_local = packet.src_ip in local
    dst_local = packet.dst_ip in local
    if src_local == dst_local:
        raise DirectionAmbiguityError(
            f"cannot orient packet {packet.src_ip} -> {packet.dst_ip} "
            f"(src_local={src_local}, dst_local={dst_local})"
        )
    return Direction.UL if src_local else Direction.DL


def conversation_key(packet: PacketRecord, local: frozenset[str] | set[str]) -> ConversationKey:
    """Direction-normalized key; identical for both directions of an exchange."""
    if classify_direction(packet, local) is Direction.UL:
        return ConversationKey(packet.src_ip, packet.dst_ip)
    return ConversationKey(packet.dst_ip, packet.src_ip)


def format_conversation_key(key: ConversationKey) -> str:
    """Key as the "local|remote" string used in manifests and streams."""
    return f"{key.local_ip}|{key.remote_ip}"


def parse_conversation_key(text: str) -> ConversationKey:
    local_ip, sep, remote_ip = text.partition("|")
    if not sep or not local_ip or not remote_ip:
        raise ValueError(f"malformed conversation key: {text!r}")
    return ConversationKey(canonical_ip(local_ip), canonical_ip(remote_ip))


@functools.lru_cache(maxsize=4096)
def _remote_is_noise(remote: str, networks: tuple[ipaddress.IPv4Network, ...]) -> bool:
    addr = ipaddress.ip_address(remote)
    if addr.version == 4:
        if addr == ipaddress.IPv4Address("255.255.255.255"):
            return True
        if addr.is_multicast or addr.is_link_local:
            return True
        return any(addr == net.broadcast_address for net in networks)
    # IPv6: only multicast (ff00::/8) is filtered.
    return addr.is_multicast


def is_relevant(key: ConversationKey, config: RelevanceConfig | None = None) -> bool:
    """False for broadcast, multicast, and link-local remote endpoints."""
    networks = config.local_networks if config is not None else ()
    return not _remote_is_noise(key.remote_ip, networks)


# --------------------------------------------------------------------------
# JSON Lines capture format
# --------------------------------------------------------------------------

_PROTO_FROM_WIRE = {"tcp": Protocol.TCP, "udp": Protocol.UDP, "other": Protocol.OTHER}


def _record_from_json(obj: dict) -> PacketRecord:
    proto = _PROTO_FROM_WIRE[obj["proto"]]
    return PacketRecord(
        timestamp_us=int(obj["ts_us"]),
        src_ip=canonical_ip(obj["src"]),
        dst_ip=canonical_ip(obj["dst"]),
        size_bytes=int(obj["len"]),
        protocol=proto,
        src_port=obj.get("sport"),
        dst_port=obj.get("dport"),
    )


def record_to_json(packet: PacketRecord) -> dict:
    obj: dict = {
        "ts_us": packet.timestamp_us,
        "src": packet.src_ip,
        "dst": packet.dst_ip,
        "len": packet.size_bytes,
        "proto": packet.protocol.value,
    }
    if packet.src_port is not None:
        obj["sport"] = packet.src_port
        obj["dport"] = packet.dst_port
    return obj


def _parse_jsonl(path: Path) -> list[PacketRecord]:
    records: list[PacketRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(_record_from_json(obj))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CaptureParseError(f"{path}:{lineno}: malformed record: {exc}") from exc
    return records


def write_capture(records: Iterable[PacketRecord], path: str | Path) -> None:
    """Write the canonical JSONL capture format (UTF-8, LF line endings)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for packet in records:
            fh.write(json.dumps(record_to_json(packet), separators=(",", ":")))
            fh.write("\n")


# --------------------------------------------------------------------------
# Classic libpcap adapter
# --------------------------------------------------------------------------

_PCAP_MAGIC_LE = 0xA1B2C3D4
_PCAP_MAGIC_BE = 0xD4C3B2A1
_LINKTYPE_ETHERNET = 1
_ETHERTYPE_IPV4 = 0x0800
_ETHERTYPE_IPV6 = 0x86DD
_IPPROTO_TCP = 6
_IPPROTO_UDP = 17


def _frame_to_record(ts_us: int, frame: bytes, orig_len: int,
                     diagnostics: Diagnostics | None) -> PacketRecord | None:
    """Decode one Ethernet frame; None for non-IP frames (counted, not fatal)."""
    if len(frame) < 14:
        if diagnostics:
            diagnostics.non_ip_frames += 1
        return None
    ethertype = int.from_bytes(frame[12:14], "big")
    payload = frame[14:]

    if ethertype == _ETHERTYPE_IPV4:
        if len(payload) < 20:
            if diagnostics:
                diagnostics.non_ip_frames += 1
            return None
        ihl = (payload[0] & 0x0F) * 4
        ip_proto = payload[9]
        src = str(ipaddress.IPv4Address(payload[12:16]))
        dst = str(ipaddress.IPv4Address(payload[16:20]))
        l4 = payload[ihl:]
    elif ethertype == _ETHERTYPE_IPV6:
        if len(payload) < 40:
            if diagnostics:
                diagnostics.non_ip_frames += 1
            return None
        ip_proto = payload[6]
        src = str(ipaddress.IPv6Address(payload[8:24]))
        dst = str(ipaddress.IPv6Address(payload[24:40]))
        l4 = payload[40:]
    else:
        if diagnostics:
            diagnostics.non_ip_frames += 1
        return None

    proto = Protocol.OTHER
    sport = dport = None
    if ip_proto in (_IPPROTO_TCP, _IPPROTO_UDP):
        if len(l4) >= 4:
            proto = Protocol.TCP if ip_proto == _IPPROTO_TCP else Protocol.UDP
            sport = int.from_bytes(l4[0:2], "big")
            dport = int.from_bytes(l4[2:4], "big")
        else:
            # Snaplen cut the transport header off; degrade to OTHER so the
            # ports-iff-tcp/udp invariant holds.
            if diagnostics:
                diagnostics.truncated_l4 += 1
    return PacketRecord(
        timestamp_us=ts_us,
        src_ip=src,
        dst_ip=dst,
        size_bytes=orig_len,
        protocol=proto,
        src_port=sport,
        dst_port=dport,
    )


def _parse_pcap(path: Path, diagnostics: Diagnostics | None) -> list[PacketRecord]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 24:
        raise CaptureFormatError(f"{path}: truncated pcap global header")
    (magic,) = struct.unpack("<I", data[:4])
    if magic == _PCAP_MAGIC_LE:
        endian = "<"
    elif magic == _PCAP_MAGIC_BE:
        endian = ">"
    else:
        raise CaptureFormatError(f"{path}: unsupported capture magic 0x{magic:08X}")
    _, _, _, _, _, network = struct.unpack(endian + "HHiIII", data[4:24])
    if network != _LINKTYPE_ETHERNET:
        raise CaptureFormatError(f"{path}: unsupported link type {network} (Ethernet only)")

    records: list[PacketRecord] = []
    offset = 24
    while offset < len(data):
        if offset + 16 > len(data):
            raise CaptureParseError(f"{path}: truncated packet header at byte {offset}")
        ts_sec, ts_frac, incl_len, orig_len = struct.unpack(
            endian + "IIII", data[offset:offset + 16]
        )
        offset += 16
        if offset + incl_len > len(data):
            raise CaptureParseError(f"{path}: truncated packet data at byte {offset}")
        frame = data[offset:offset + incl_len]
        offset += incl_len
        ts_us = ts_sec * 1_000_000 + ts_frac
        record = _frame_to_record(ts_us, frame, orig_len, diagnostics)
        if record is not None:
            records.append(record)
    return records


def parse_capture(path: str | Path, fmt: str = "jsonl",
                  diagnostics: Diagnostics | None = None) -> list[PacketRecord]:
    """Read a capture file and return records sorted by timestamp (stable).

    ``fmt`` is "jsonl" or "pcap". Malformed records raise CaptureParseError
    with the offending line or byte offset; a file that is not in the declared
    format raises CaptureFormatError.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if fmt == "jsonl":
        records = _parse_jsonl(path)
    elif fmt == "pcap":
        records = _parse_pcap(path, diagnostics)
    else:
        raise ValueError(f"unknown capture format: {fmt!r}")
    records.sort(key=lambda p: p.timestamp_us)
    return records
