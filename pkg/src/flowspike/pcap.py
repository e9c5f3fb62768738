"""Classic pcap parsing, 5-tuple flow assembly, and the packet CSV format.

The pcap reader speaks the original libpcap file layout only (no pcapng):
a 24-byte global header whose magic selects byte order and timestamp
resolution, then per-packet records of

    ts_sec:u32  ts_frac:u32  incl_len:u32  orig_len:u32  data[incl_len]

Timestamps are re-based so the first packet of every capture is at 0.0
seconds, and packet size is taken from ``orig_len`` (the on-wire length,
which is what an observer of encrypted traffic sees), clamped to 65535.
"""

from __future__ import annotations

import csv
import io
import math
import socket
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import BinaryIO, Iterable, Iterator, NamedTuple

MAX_WIRE_LEN = 65535

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW_IP = 101

_MAGIC_MICRO = 0xA1B2C3D4
_MAGIC_MICRO_SWAPPED = 0xD4C3B2A1
_MAGIC_NANO = 0xA1B23C4D
_MAGIC_NANO_SWAPPED = 0x4D3CB2A1

_GLOBAL_HEADER_LEN = 24
_RECORD_HEADER_LEN = 16


class PcapError(ValueError):
    """Base for fatal capture-file problems; carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BadMagic(PcapError):
    pass


class TruncatedFile(PcapError):
    pass


class Direction(Enum):
    FORWARD = "F"
    BACKWARD = "B"


class Endpoint(NamedTuple):
    ip: str
    port: int


@dataclass(frozen=True)
class FlowKey:
    """Canonical bidirectional 5-tuple: endpoint_a <= endpoint_b under
    lexicographic (ip, port) ordering, so both directions share one key."""

    endpoint_a: Endpoint
    endpoint_b: Endpoint
    protocol: str  # "TCP" or "UDP"

    @staticmethod
    def canonical(src: Endpoint, dst: Endpoint, protocol: str) -> "FlowKey":
        a, b = (src, dst) if src <= dst else (dst, src)
        return FlowKey(a, b, protocol)

    @property
    def flow_id(self) -> str:
        a, b = self.endpoint_a, self.endpoint_b
        return f"{self.protocol.lower()}-{a.ip}:{a.port}-{b.ip}:{b.port}"


class PacketRecord(NamedTuple):
    ts: float
    wire_len: int
    direction: Direction


@dataclass
class Flow:
    """Time-ordered packets sharing one canonical flow key.  Flows read back
    from CSV carry only the opaque ``flow_id`` (key is None)."""

    flow_id: str
    packets: list[PacketRecord]
    key: FlowKey | None = None

    @property
    def last_ts(self) -> float:
        return self.packets[-1].ts if self.packets else 0.0


class RawPacket(NamedTuple):
    ts: float
    wire_len: int
    payload: bytes


class PcapReader:
    """Iterates RawPacket records out of a classic pcap stream.

    The global header is consumed on construction (exposing ``linktype``);
    iteration is lazy and single-pass.
    """

    def __init__(self, stream: BinaryIO | bytes):
        if isinstance(stream, (bytes, bytearray)):
            stream = io.BytesIO(bytes(stream))
        self._stream = stream
        self._offset = 0
        header = self._read(_GLOBAL_HEADER_LEN, "global header")
        magic_be = struct.unpack(">I", header[:4])[0]
        if magic_be == _MAGIC_MICRO:
            self._fmt, self._frac_per_s = ">", 10**6
        elif magic_be == _MAGIC_MICRO_SWAPPED:
            self._fmt, self._frac_per_s = "<", 10**6
        elif magic_be == _MAGIC_NANO:
            self._fmt, self._frac_per_s = ">", 10**9
        elif magic_be == _MAGIC_NANO_SWAPPED:
            self._fmt, self._frac_per_s = "<", 10**9
        else:
            raise BadMagic(f"unrecognized pcap magic 0x{magic_be:08X}", 0)
        _, _, _, _, _, self.linktype = struct.unpack(
            self._fmt + "HHiIII", header[4:]
        )
        self._origin: tuple[int, int] | None = None

    def _read(self, n: int, what: str) -> bytes:
        data = self._stream.read(n)
        if len(data) < n:
            raise TruncatedFile(
                f"{what} needs {n} bytes, only {len(data)} remain", self._offset
            )
        self._offset += n
        return data

    def __iter__(self) -> Iterator[RawPacket]:
        rec = struct.Struct(self._fmt + "IIII")
        while True:
            head_offset = self._offset
            head = self._stream.read(_RECORD_HEADER_LEN)
            if not head:
                return
            if len(head) < _RECORD_HEADER_LEN:
                raise TruncatedFile("record header truncated", head_offset)
            self._offset += _RECORD_HEADER_LEN
            sec, frac, incl_len, orig_len = rec.unpack(head)
            payload = self._read(incl_len, f"packet data ({incl_len} bytes)")
            if self._origin is None:
                self._origin = (sec, frac)
            rel = (sec - self._origin[0]) * self._frac_per_s + (frac - self._origin[1])
            yield RawPacket(rel / self._frac_per_s, min(orig_len, MAX_WIRE_LEN), payload)


def parse_pcap(stream: BinaryIO | bytes) -> PcapReader:
    """Open a classic pcap byte stream; the first yielded timestamp is 0.0."""
    return PcapReader(stream)


def write_pcap(
    packets: Iterable[tuple[float, bytes]],
    linktype: int = LINKTYPE_ETHERNET,
    *,
    nanosecond: bool = False,
    big_endian: bool = False,
    snaplen: int = 65535,
) -> bytes:
    """Assemble a classic pcap file from (absolute_ts_seconds, frame) pairs.
    Mainly a debugging/test aid; orig_len is taken as len(frame)."""
    fmt = ">" if big_endian else "<"
    frac_per_s = 10**9 if nanosecond else 10**6
    magic = _MAGIC_NANO if nanosecond else _MAGIC_MICRO
    out = bytearray(struct.pack(fmt + "IHHiIII", magic, 2, 4, 0, 0, snaplen, linktype))
    for ts, frame in packets:
        sec = int(math.floor(ts))
        frac = int(round((ts - sec) * frac_per_s))
        if frac >= frac_per_s:
            sec, frac = sec + 1, frac - frac_per_s
        out += struct.pack(fmt + "IIII", sec, frac, len(frame), len(frame))
        out += frame
    return bytes(out)


class NonFlow(NamedTuple):
    """Marker for frames that do not belong to a TCP/UDP conversation."""

    reason: str  # "non-ip" | "non-transport" | "fragment" | "malformed"


class ClassifiedPacket(NamedTuple):
    key: FlowKey
    src: Endpoint


_ETHERTYPE_IPV4 = 0x0800
_ETHERTYPE_IPV6 = 0x86DD
_ETHERTYPE_VLAN = 0x8100


def _classify_ipv4(buf: bytes) -> ClassifiedPacket | NonFlow:
    if len(buf) < 20 or buf[0] >> 4 != 4:
        return NonFlow("malformed")
    ihl = (buf[0] & 0x0F) * 4
    if ihl < 20 or len(buf) < ihl + 4:
        return NonFlow("malformed")
    if struct.unpack(">H", buf[6:8])[0] & 0x1FFF:
        return NonFlow("fragment")  # non-first fragment: no transport header
    proto = buf[9]
    if proto == 6:
        protocol = "TCP"
    elif proto == 17:
        protocol = "UDP"
    else:
        return NonFlow("non-transport")
    sport, dport = struct.unpack(">HH", buf[ihl : ihl + 4])
    src = Endpoint(socket.inet_ntoa(buf[12:16]), sport)
    dst = Endpoint(socket.inet_ntoa(buf[16:20]), dport)
    return ClassifiedPacket(FlowKey.canonical(src, dst, protocol), src)


def _classify_ipv6(buf: bytes) -> ClassifiedPacket | NonFlow:
    if len(buf) < 44 or buf[0] >> 4 != 6:
        return NonFlow("malformed")
    nxt = buf[6]
    if nxt == 6:
        protocol = "TCP"
    elif nxt == 17:
        protocol = "UDP"
    else:
        # extension-header chains are out of scope
        return NonFlow("non-transport")
    sport, dport = struct.unpack(">HH", buf[40:44])
    src = Endpoint(socket.inet_ntop(socket.AF_INET6, buf[8:24]), sport)
    dst = Endpoint(socket.inet_ntop(socket.AF_INET6, buf[24:40]), dport)
    return ClassifiedPacket(FlowKey.canonical(src, dst, protocol), src)


def classify_packet(payload: bytes, linktype: int) -> ClassifiedPacket | NonFlow:
    """Extract the canonical TCP/UDP 5-tuple from a link-layer frame.

    Non-IP and non-TCP/UDP frames come back as NonFlow with a reason; they
    are never fatal.  Only Ethernet (1) and raw-IP (101) link types are
    supported.
    """
    if linktype == LINKTYPE_ETHERNET:
        if len(payload) < 14:
            return NonFlow("malformed")
        ethertype = struct.unpack(">H", payload[12:14])[0]
        offset = 14
        if ethertype == _ETHERTYPE_VLAN:
            if len(payload) < 18:
                return NonFlow("malformed")
            ethertype = struct.unpack(">H", payload[16:18])[0]
            offset = 18
        if ethertype == _ETHERTYPE_IPV4:
            return _classify_ipv4(payload[offset:])
        if ethertype == _ETHERTYPE_IPV6:
            return _classify_ipv6(payload[offset:])
        return NonFlow("non-ip")
    if linktype == LINKTYPE_RAW_IP:
        if not payload:
            return NonFlow("malformed")
        version = payload[0] >> 4
        if version == 4:
            return _classify_ipv4(payload)
        if version == 6:
            return _classify_ipv6(payload)
        return NonFlow("malformed")
    raise ValueError(f"unsupported linktype {linktype}")


def assemble_flows(
    records: Iterable[tuple[float, int, ClassifiedPacket]],
) -> list[Flow]:
    """Group classified packets into bidirectional flows.

    Direction is anchored at the first-seen packet of each flow: a packet is
    Forward iff its source endpoint equals that packet's source.  Packets are
    time-sorted per flow (stable, so capture order breaks ties).  Flows come
    back in first-seen order.
    """
    anchors: dict[FlowKey, Endpoint] = {}
    groups: dict[FlowKey, list[PacketRecord]] = {}
    for ts, wire_len, cp in records:
        anchor = anchors.get(cp.key)
        if anchor is None:
            anchors[cp.key] = anchor = cp.src
            groups[cp.key] = []
        direction = Direction.FORWARD if cp.src == anchor else Direction.BACKWARD
        groups[cp.key].append(PacketRecord(ts, wire_len, direction))
    flows = []
    for key, packets in groups.items():
        packets.sort(key=lambda p: p.ts)
        flows.append(Flow(key.flow_id, packets, key=key))
    return flows


@dataclass
class IngestStats:
    """Per-file counters for frames that never reach a flow."""

    non_ip: int = 0
    non_transport: int = 0
    fragment: int = 0
    malformed: int = 0

    def count(self, nf: NonFlow) -> None:
        setattr(self, nf.reason.replace("-", "_"), getattr(self, nf.reason.replace("-", "_")) + 1)

    @property
    def total(self) -> int:
        return self.non_ip + self.non_transport + self.fragment + self.malformed


def flows_from_pcap(stream: BinaryIO | bytes) -> tuple[list[Flow], IngestStats]:
    """parse -> classify -> assemble for one capture."""
    reader = parse_pcap(stream)
    if reader.linktype not in (LINKTYPE_ETHERNET, LINKTYPE_RAW_IP):
        raise PcapError(f"unsupported linktype {reader.linktype}", 20)
    stats = IngestStats()

    def classified() -> Iterator[tuple[float, int, ClassifiedPacket]]:
        for pkt in reader:
            result = classify_packet(pkt.payload, reader.linktype)
            if isinstance(result, NonFlow):
                stats.count(result)
            else:
                yield pkt.ts, pkt.wire_len, result

    return assemble_flows(classified()), stats


CSV_HEADER = ["flow_id", "ts", "wire_len", "dir"]


class RowError(ValueError):
    """A packet CSV row that cannot be parsed; rejects the whole file."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def write_packet_csv(flows: Iterable[Flow]) -> str:
    """Serialize flows to the packet CSV schema; ts gets 6 decimal places."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for flow in flows:
        for p in flow.packets:
            writer.writerow([flow.flow_id, f"{p.ts:.6f}", p.wire_len, p.direction.value])
    return buf.getvalue()


_DIRECTIONS = {"F": Direction.FORWARD, "B": Direction.BACKWARD}


def read_packet_csv(text: str) -> list[Flow]:
    """Parse the packet CSV schema back into flows (keys are not recoverable).

    Any malformed row raises RowError with its 1-based line number and the
    file is rejected.
    """
    rows = csv.reader(io.StringIO(text))
    try:
        header = next(rows)
    except StopIteration:
        raise RowError(1, "missing header") from None
    if header != CSV_HEADER:
        raise RowError(1, f"header must be {','.join(CSV_HEADER)}")
    grouped: dict[str, list[PacketRecord]] = {}
    for line_no, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise RowError(line_no, f"expected 4 fields, got {len(row)}")
        flow_id, ts_s, len_s, dir_s = row
        if not flow_id:
            raise RowError(line_no, "empty flow_id")
        try:
            ts = float(ts_s)
        except ValueError:
            raise RowError(line_no, f"non-numeric ts {ts_s!r}") from None
        if not math.isfinite(ts) or ts < 0:
            raise RowError(line_no, f"ts must be finite and non-negative, got {ts_s}")
        try:
            wire_len = int(len_s)
        except ValueError:
            raise RowError(line_no, f"non-numeric wire_len {len_s!r}") from None
        if not 0 <= wire_len <= MAX_WIRE_LEN:
            raise RowError(line_no, f"wire_len out of range: {wire_len}")
        direction = _DIRECTIONS.get(dir_s)
        if direction is None:
            raise RowError(line_no, f"dir must be F or B, got {dir_s!r}")
        grouped.setdefault(flow_id, []).append(PacketRecord(ts, wire_len, direction))
    flows = []
    for flow_id, packets in grouped.items():
        packets.sort(key=lambda p: p.ts)
        flows.append(Flow(flow_id, packets))
    return flows
