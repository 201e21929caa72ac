"""Classic libpcap reading/writing, Ethernet/IPv4 decoding and flow assembly."""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, Optional, Union

from .core import (FIN, IP_PROTO_NUMBERS, PROTOCOL_BY_NUMBER, RST, ACK, SYN,
                   FlowRecord, PacketRecord, Protocol)

MAGIC_MICRO = 0xA1B2C3D4
MAGIC_NANO = 0xA1B23C4D
LINKTYPE_ETHERNET = 1
ETH_HDR = 14
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_ARP = 0x0806
_OTHER_IP_PROTO = 255
DEFAULT_IDLE_TIMEOUT_US = 60_000_000
REORDER_TOLERANCE_US = 1_000_000


class PcapError(ValueError):
    pass


class BadMagic(PcapError):
    pass


class UnsupportedLinkType(PcapError):
    pass


class Truncated(PcapError):
    pass


class MalformedHeader(PcapError):
    pass


class UnorderedInput(ValueError):
    pass


@dataclass
class PcapReader:
    data: bytes
    byte_order: str  # "LE" or "BE"
    ts_resolution: str  # "MICRO" or "NANO"
    snaplen: int
    linktype: int
    offset: int = 24

    @property
    def _endian(self) -> str:
        return "<" if self.byte_order == "LE" else ">"

    def __iter__(self) -> Iterator[PacketRecord]:
        while True:
            pkt = pcap_next(self)
            if pkt is None:
                return
            yield pkt


def pcap_open(stream: Union[bytes, bytearray, BinaryIO]) -> PcapReader:
    data = bytes(stream) if isinstance(stream, (bytes, bytearray, memoryview)) else stream.read()
    if len(data) < 24:
        raise Truncated(f"global header needs 24 bytes, got {len(data)}")
    (magic,) = struct.unpack_from("<I", data, 0)
    formats = {
        MAGIC_MICRO: ("LE", "MICRO"),
        0xD4C3B2A1: ("BE", "MICRO"),
        MAGIC_NANO: ("LE", "NANO"),
        0x4D3CB2A1: ("BE", "NANO"),
    }
    if magic not in formats:
        raise BadMagic(f"unknown pcap magic 0x{magic:08x}")
    byte_order, res = formats[magic]
    e = "<" if byte_order == "LE" else ">"
    _vmaj, _vmin, _zone, _sigfigs, snaplen, linktype = struct.unpack_from(e + "HHiIII", data, 4)
    if linktype != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"linktype {linktype} (only Ethernet=1 supported)")
    return PcapReader(data=data, byte_order=byte_order, ts_resolution=res,
                      snaplen=snaplen, linktype=linktype)


def pcap_next(reader: PcapReader) -> Optional[PacketRecord]:
    """Decode the next record, or return None at end of file."""
    data = reader.data
    off = reader.offset
    if off == len(data):
        return None
    if len(data) - off < 16:
        raise Truncated(f"record header at offset {off} cut short")
    ts_sec, ts_frac, incl_len, orig_len = struct.unpack_from(reader._endian + "IIII", data, off)
    off += 16
    if incl_len > len(data) - off:
        raise Truncated(f"captured_len={incl_len} but only {len(data) - off} bytes remain")
    if incl_len > reader.snaplen:
        raise MalformedHeader(f"captured_len={incl_len} exceeds snaplen={reader.snaplen}")
    frame = data[off:off + incl_len]
    reader.offset = off + incl_len
    frac_us = ts_frac // 1000 if reader.ts_resolution == "NANO" else ts_frac
    return decode_frame(frame, ts_sec * 1_000_000 + frac_us, orig_len)


def _other(ts: int, wire_len: int, payload_len: int, src="0.0.0.0", dst="0.0.0.0") -> PacketRecord:
    return PacketRecord(timestamp_us=ts, src_ip=src, dst_ip=dst, protocol=Protocol.OTHER,
                        payload_len=max(payload_len, 0), wire_len=wire_len)


def decode_frame(frame: bytes, timestamp_us: int, wire_len: int) -> PacketRecord:
    if len(frame) < ETH_HDR:
        raise MalformedHeader("frame shorter than an Ethernet header")
    (ethertype,) = struct.unpack_from("!H", frame, 12)
    if ethertype != ETHERTYPE_IPV4:
        return _other(timestamp_us, wire_len, wire_len - ETH_HDR)

    ip = frame[ETH_HDR:]
    if len(ip) < 20:
        raise MalformedHeader("IPv4 header not captured")
    ver_ihl, _tos, total_len, _ident, frag, _ttl, proto, _csum, src, dst = \
        struct.unpack_from("!BBHHHBBH4s4s", ip, 0)
    if ver_ihl >> 4 != 4:
        return _other(timestamp_us, wire_len, wire_len - ETH_HDR)
    ihl = (ver_ihl & 0x0F) * 4
    if ihl < 20:
        raise MalformedHeader(f"IP header length {ihl} < 20")
    src_ip = socket.inet_ntoa(src)
    dst_ip = socket.inet_ntoa(dst)
    ip_payload = total_len - ihl
    protocol = PROTOCOL_BY_NUMBER.get(proto, Protocol.OTHER)
    # non-first fragments carry no transport header
    if protocol is Protocol.OTHER or (frag & 0x1FFF):
        return _other(timestamp_us, wire_len, ip_payload, src_ip, dst_ip)

    seg = ip[ihl:]
    src_port = dst_port = flags = 0
    if protocol is Protocol.TCP:
        if len(seg) < 20:
            raise MalformedHeader("TCP header not captured")
        src_port, dst_port, _seq, _ack, data_off, flags = struct.unpack_from("!HHIIBB", seg, 0)
        hdr = (data_off >> 4) * 4
        if hdr < 20:
            raise MalformedHeader(f"TCP header length {hdr} < 20")
    elif protocol is Protocol.UDP:
        if len(seg) < 8:
            raise MalformedHeader("UDP header not captured")
        src_port, dst_port = struct.unpack_from("!HH", seg, 0)
        hdr = 8
    else:
        if len(seg) < 8:
            raise MalformedHeader("ICMP header not captured")
        hdr = 8
    return PacketRecord(timestamp_us=timestamp_us, src_ip=src_ip, dst_ip=dst_ip,
                        src_port=src_port, dst_port=dst_port, protocol=protocol,
                        tcp_flags=flags, payload_len=max(ip_payload - hdr, 0), wire_len=wire_len)


def read_pcap(stream) -> list[PacketRecord]:
    return list(pcap_open(stream))


_MAC_SRC = bytes.fromhex("020000000001")
_MAC_DST = bytes.fromhex("020000000002")


def _ip_checksum(header: bytes) -> int:
    s = sum(struct.unpack("!10H", header))
    s = (s & 0xFFFF) + (s >> 16)
    s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def encode_frame(pkt: PacketRecord) -> bytes:
    """Build an Ethernet frame whose decode reproduces ``pkt`` (payload is zero-filled)."""
    if pkt.protocol is Protocol.OTHER and pkt.src_ip == "0.0.0.0" and pkt.dst_ip == "0.0.0.0":
        # non-IP frame (e.g. ARP): opaque body
        return _MAC_DST + _MAC_SRC + struct.pack("!H", ETHERTYPE_ARP) + bytes(pkt.payload_len)
    proto_num = IP_PROTO_NUMBERS.get(pkt.protocol, _OTHER_IP_PROTO)
    if pkt.protocol is Protocol.TCP:
        seg = struct.pack("!HHIIBBHHH", pkt.src_port, pkt.dst_port, 0, 0, 5 << 4,
                          pkt.tcp_flags, 65535, 0, 0)
    elif pkt.protocol is Protocol.UDP:
        seg = struct.pack("!HHHH", pkt.src_port, pkt.dst_port, 8 + pkt.payload_len, 0)
    elif pkt.protocol is Protocol.ICMP:
        seg = struct.pack("!BBHHH", 8, 0, 0, 0, 0)
    else:
        seg = b""
    total_len = 20 + len(seg) + pkt.payload_len
    if total_len > 0xFFFF:
        raise ValueError("IPv4 total length exceeds 65535")
    hdr = struct.pack("!BBHHHBBH4s4s", 0x45, 0, total_len, 0, 0x4000, 64, proto_num, 0,
                      socket.inet_aton(pkt.src_ip), socket.inet_aton(pkt.dst_ip))
    hdr = hdr[:10] + struct.pack("!H", _ip_checksum(hdr)) + hdr[12:]
    return (_MAC_DST + _MAC_SRC + struct.pack("!H", ETHERTYPE_IPV4) + hdr + seg
            + bytes(pkt.payload_len))


def pcap_write(packets: Iterable[PacketRecord], snaplen: int = 65535) -> bytes:
    """Little-endian microsecond pcap.

    Frames longer than ``snaplen`` are truncated as a capturing tool would;
    the original length field always carries ``wire_len``.
    """
    out = bytearray(struct.pack("<IHHiIII", MAGIC_MICRO, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))
    for pkt in packets:
        frame = encode_frame(pkt)
        if len(frame) > pkt.wire_len:
            raise ValueError(f"wire_len {pkt.wire_len} smaller than encoded frame {len(frame)}")
        frame = frame[:snaplen]
        sec, usec = divmod(pkt.timestamp_us, 1_000_000)
        out += struct.pack("<IIII", sec, usec, len(frame), pkt.wire_len)
        out += frame
    return bytes(out)


def header_len(protocol: Protocol) -> int:
    """Ethernet + IPv4 + transport header bytes for packets built by ``encode_frame``."""
    return ETH_HDR + 20 + {Protocol.TCP: 20, Protocol.UDP: 8, Protocol.ICMP: 8}.get(protocol, 0)


class _ActiveFlow:
    __slots__ = ("rec", "fwd_first_us", "fwd_last_us", "fin_fwd", "fin_bwd")

    def __init__(self, pkt: PacketRecord):
        self.rec = FlowRecord(src_ip=pkt.src_ip, src_port=pkt.src_port, dst_ip=pkt.dst_ip,
                              dst_port=pkt.dst_port, protocol=pkt.protocol,
                              first_seen_us=pkt.timestamp_us, last_seen_us=pkt.timestamp_us)
        self.fwd_first_us = pkt.timestamp_us
        self.fwd_last_us = pkt.timestamp_us
        self.fin_fwd = False
        self.fin_bwd = False

    def add(self, pkt: PacketRecord) -> bool:
        """Account one packet; return True when the flow is finished."""
        r = self.rec
        forward = pkt.src_ip == r.src_ip and pkt.src_port == r.src_port and \
            pkt.dst_ip == r.dst_ip and pkt.dst_port == r.dst_port
        if r.src_ip == r.dst_ip and r.src_port == r.dst_port:
            forward = True
        if forward:
            if r.fwd_pkts:
                self.fwd_first_us = min(self.fwd_first_us, pkt.timestamp_us)
                self.fwd_last_us = max(self.fwd_last_us, pkt.timestamp_us)
            else:
                self.fwd_first_us = self.fwd_last_us = pkt.timestamp_us
            r.fwd_pkts += 1
            r.fwd_bytes += pkt.wire_len
        else:
            r.bwd_pkts += 1
            r.bwd_bytes += pkt.wire_len
        r.first_seen_us = min(r.first_seen_us, pkt.timestamp_us)
        r.last_seen_us = max(r.last_seen_us, pkt.timestamp_us)
        fl = pkt.tcp_flags
        r.syn_cnt += bool(fl & SYN)
        r.ack_cnt += bool(fl & ACK)
        r.rst_cnt += bool(fl & RST)
        r.fin_cnt += bool(fl & FIN)
        if fl & FIN:
            if forward:
                self.fin_fwd = True
            else:
                self.fin_bwd = True
        return bool(fl & RST) or (self.fin_fwd and self.fin_bwd)

    def finish(self) -> FlowRecord:
        r = self.rec
        if r.fwd_pkts >= 2:
            r.fwd_iat_mean_us = (self.fwd_last_us - self.fwd_first_us) / (r.fwd_pkts - 1)
        return r


def flow_assemble(packets: Iterable[PacketRecord],
                  idle_timeout_us: Optional[int] = DEFAULT_IDLE_TIMEOUT_US) -> list[FlowRecord]:
    """Group TCP/UDP/ICMP packets into bidirectional flows.

    A flow closes when the gap since its last packet exceeds ``idle_timeout_us``
    (None disables the timeout), after an RST, once both sides sent FIN, or at
    end of stream. Output is ordered by first_seen_us, ties by close order.
    """
    active: dict[tuple, _ActiveFlow] = {}
    completed: list[FlowRecord] = []
    newest = None
    for pkt in packets:
        if newest is not None and pkt.timestamp_us < newest - REORDER_TOLERANCE_US:
            raise UnorderedInput(f"timestamp {pkt.timestamp_us} regresses past {newest}")
        newest = pkt.timestamp_us if newest is None else max(newest, pkt.timestamp_us)
        if pkt.protocol is Protocol.OTHER:
            continue
        key = pkt.flow_key
        flow = active.get(key)
        if flow is not None and idle_timeout_us is not None and \
                pkt.timestamp_us - flow.rec.last_seen_us > idle_timeout_us:
            completed.append(active.pop(key).finish())
            flow = None
        if flow is None:
            flow = active[key] = _ActiveFlow(pkt)
        if flow.add(pkt):
            completed.append(active.pop(key).finish())
    completed.extend(f.finish() for f in active.values())
    completed.sort(key=lambda f: f.first_seen_us)
    return completed
