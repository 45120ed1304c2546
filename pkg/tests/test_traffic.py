"""Capture parsing, direction, conversation keys, relevance filtering."""

import ipaddress
import struct

import pytest

from svcdetect.traffic import (
    CaptureFormatError,
    CaptureParseError,
    ConversationKey,
    Diagnostics,
    Direction,
    DirectionAmbiguityError,
    PacketRecord,
    Protocol,
    RelevanceConfig,
    classify_direction,
    conversation_key,
    format_conversation_key,
    is_relevant,
    parse_capture,
    parse_conversation_key,
    write_capture,
)

LOCAL = frozenset({"192.168.50.10"})


def pkt(ts=0, src="192.168.50.10", dst="203.0.113.5", size=100,
        proto=Protocol.UDP, sport=4000, dport=443):
    if proto is Protocol.OTHER:
        sport = dport = None
    return PacketRecord(timestamp_us=ts, src_ip=src, dst_ip=dst,
                        size_bytes=size, protocol=proto,
                        src_port=sport, dst_port=dport)


class TestPacketRecord:
    def test_ports_required_for_tcp_udp(self):
        with pytest.raises(ValueError, match="missing ports"):
            PacketRecord(0, "1.2.3.4", "5.6.7.8", 10, Protocol.TCP)

    def test_ports_forbidden_for_other(self):
        with pytest.raises(ValueError, match="only valid for tcp/udp"):
            PacketRecord(0, "1.2.3.4", "5.6.7.8", 10, Protocol.OTHER,
                         src_port=1, dst_port=2)

    def test_port_range(self):
        with pytest.raises(ValueError, match="port out of range"):
            pkt(sport=70000)

    def test_negative_fields(self):
        with pytest.raises(ValueError):
            pkt(ts=-1)
        with pytest.raises(ValueError):
            pkt(size=-5)


class TestDirection:
    def test_uplink(self):
        assert classify_direction(pkt(), LOCAL) is Direction.UL

    def test_downlink(self):
        p = pkt(src="203.0.113.5", dst="192.168.50.10")
        assert classify_direction(p, LOCAL) is Direction.DL

    def test_neither_local_is_ambiguous(self):
        p = pkt(src="10.0.0.1", dst="10.0.0.2")
        with pytest.raises(DirectionAmbiguityError):
            classify_direction(p, LOCAL)

    def test_both_local_is_ambiguous(self):
        p = pkt(dst="192.168.50.10")
        with pytest.raises(DirectionAmbiguityError):
            classify_direction(p, LOCAL)

    def test_key_is_direction_normalized(self):
        up = pkt()
        down = pkt(src="203.0.113.5", dst="192.168.50.10")
        key = ConversationKey("192.168.50.10", "203.0.113.5")
        assert conversation_key(up, LOCAL) == key
        assert conversation_key(down, LOCAL) == key

    def test_key_ignores_ports_and_protocol(self):
        a = pkt(sport=1000, dport=2000, proto=Protocol.TCP)
        b = pkt(sport=3000, dport=4000, proto=Protocol.UDP)
        assert conversation_key(a, LOCAL) == conversation_key(b, LOCAL)


class TestRelevance:
    def test_normal_remote_is_relevant(self):
        assert is_relevant(ConversationKey("192.168.50.10", "203.0.113.5"))

    @pytest.mark.parametrize("remote", [
        "255.255.255.255",   # limited broadcast
        "224.0.0.251",       # IPv4 multicast
        "239.255.255.250",
        "169.254.1.1",       # link-local
        "ff02::fb",          # IPv6 multicast
    ])
    def test_noise_remotes_filtered(self, remote):
        assert not is_relevant(ConversationKey("192.168.50.10", remote))

    def test_subnet_broadcast_needs_config(self):
        key = ConversationKey("192.168.50.10", "192.168.50.255")
        assert is_relevant(key)  # unknown mask, kept
        config = RelevanceConfig.from_cidrs(["192.168.50.0/24"])
        assert not is_relevant(key, config)

    def test_ipv6_unicast_kept(self):
        assert is_relevant(ConversationKey("fd00::1", "2001:db8::7"))


class TestKeyStrings:
    def test_round_trip(self):
        key = ConversationKey("192.168.50.10", "203.0.113.5")
        assert parse_conversation_key(format_conversation_key(key)) == key

    def test_malformed(self):
        with pytest.raises(ValueError, match="malformed conversation key"):
            parse_conversation_key("no-separator")


class TestJsonlCapture:
    def test_round_trip(self, tmp_path):
        records = [
            pkt(ts=10),
            pkt(ts=20, proto=Protocol.TCP),
            pkt(ts=30, proto=Protocol.OTHER),
        ]
        path = tmp_path / "cap.jsonl"
        write_capture(records, path)
        assert parse_capture(path) == records

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "cap.jsonl"
        path.write_text(
            '{"ts_us":5,"src":"192.168.50.10","dst":"203.0.113.5",'
            '"len":99,"proto":"other"}\n\n')
        (record,) = parse_capture(path)
        assert record.size_bytes == 99
        assert record.protocol is Protocol.OTHER

    def test_malformed_record_cites_line(self, tmp_path):
        path = tmp_path / "cap.jsonl"
        path.write_text('{"ts_us":5,"src":"192.168.50.10","dst":"203.0.113.5",'
                        '"len":9,"proto":"udp","sport":1,"dport":2}\n'
                        '{"broken": true}\n')
        with pytest.raises(CaptureParseError, match=r":2:"):
            parse_capture(path)

    def test_records_sorted_by_timestamp(self, tmp_path):
        path = tmp_path / "cap.jsonl"
        write_capture([pkt(ts=30), pkt(ts=10), pkt(ts=20)], path)
        assert [p.timestamp_us for p in parse_capture(path)] == [10, 20, 30]

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            parse_capture(tmp_path / "nope.jsonl")


def build_pcap(frames, magic=0xA1B2C3D4, linktype=1):
    head = struct.pack("<IHHiIII", magic, 2, 4, 0, 0, 65535, linktype)
    body = b""
    for ts_us, frame, orig_len in frames:
        body += struct.pack("<IIII", ts_us // 1_000_000, ts_us % 1_000_000,
                            len(frame), orig_len)
        body += frame
    return head + body


def eth_udp_frame(src, dst, sport, dport, payload=b"x" * 20):
    eth = b"\x00" * 12 + b"\x08\x00"
    udp = struct.pack(">HHHH", sport, dport, 8 + len(payload), 0) + payload
    ip = struct.pack(">BBHHHBBH4s4s", 0x45, 0, 20 + len(udp), 0, 0, 64, 17, 0,
                     ipaddress.IPv4Address(src).packed,
                     ipaddress.IPv4Address(dst).packed)
    return eth + ip + udp


class TestPcapCapture:
    def test_parses_udp_frame(self, tmp_path):
        frame = eth_udp_frame("192.168.50.10", "203.0.113.5", 4000, 443)
        path = tmp_path / "cap.pcap"
        path.write_bytes(build_pcap([(1_500_000, frame, len(frame))]))
        (record,) = parse_capture(path, fmt="pcap")
        assert record == PacketRecord(1_500_000, "192.168.50.10", "203.0.113.5",
                                      len(frame), Protocol.UDP, 4000, 443)

    def test_big_endian_magic(self, tmp_path):
        frame = eth_udp_frame("192.168.50.10", "203.0.113.5", 4000, 443)
        head = struct.pack(">IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
        body = struct.pack(">IIII", 0, 7, len(frame), len(frame)) + frame
        path = tmp_path / "cap.pcap"
        path.write_bytes(head + body)
        (record,) = parse_capture(path, fmt="pcap")
        assert record.timestamp_us == 7

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "cap.pcap"
        path.write_bytes(build_pcap([], magic=0xDEADBEEF))
        with pytest.raises(CaptureFormatError, match="magic"):
            parse_capture(path, fmt="pcap")

    def test_non_ethernet_link_rejected(self, tmp_path):
        path = tmp_path / "cap.pcap"
        path.write_bytes(build_pcap([], linktype=101))
        with pytest.raises(CaptureFormatError, match="link type"):
            parse_capture(path, fmt="pcap")

    def test_non_ip_frames_counted_not_fatal(self, tmp_path):
        arp = b"\x00" * 12 + b"\x08\x06" + b"\x00" * 28
        udp = eth_udp_frame("192.168.50.10", "203.0.113.5", 1, 2)
        path = tmp_path / "cap.pcap"
        path.write_bytes(build_pcap([(0, arp, len(arp)), (1, udp, len(udp))]))
        diag = Diagnostics()
        records = parse_capture(path, fmt="pcap", diagnostics=diag)
        assert len(records) == 1
        assert diag.non_ip_frames == 1

    def test_snapped_l4_degrades_to_other(self, tmp_path):
        # Truncate the frame right after the IP header: ports unreadable.
        full = eth_udp_frame("192.168.50.10", "203.0.113.5", 4000, 443)
        snapped = full[:34]
        path = tmp_path / "cap.pcap"
        path.write_bytes(build_pcap([(0, snapped, len(full))]))
        diag = Diagnostics()
        (record,) = parse_capture(path, fmt="pcap", diagnostics=diag)
        assert record.protocol is Protocol.OTHER
        assert record.src_port is None
        assert record.size_bytes == len(full)  # original length, not snapped
        assert diag.truncated_l4 == 1

    def test_truncated_packet_data(self, tmp_path):
        frame = eth_udp_frame("192.168.50.10", "203.0.113.5", 1, 2)
        blob = build_pcap([(0, frame, len(frame))])
        path = tmp_path / "cap.pcap"
        path.write_bytes(blob[:-4])
        with pytest.raises(CaptureParseError, match="truncated"):
            parse_capture(path, fmt="pcap")
