"""Shared record types, the flow CSV schema and the seeded generator."""

from __future__ import annotations

import csv
import io
import math
import socket
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Iterable, Optional

import numpy as np

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# TCP flag bits
FIN = 0x01
SYN = 0x02
RST = 0x04
PSH = 0x08
ACK = 0x10
URG = 0x20


class Protocol(str, Enum):
    TCP = "TCP"
    UDP = "UDP"
    ICMP = "ICMP"
    OTHER = "OTHER"


IP_PROTO_NUMBERS = {Protocol.TCP: 6, Protocol.UDP: 17, Protocol.ICMP: 1}
PROTOCOL_BY_NUMBER = {v: k for k, v in IP_PROTO_NUMBERS.items()}


class LabelSource(str, Enum):
    SIMULATOR_GROUND_TRUTH = "SIMULATOR_GROUND_TRUTH"
    ATTACKER_IP_LIST = "ATTACKER_IP_LIST"
    UNLABELED = "UNLABELED"


def ip_bytes(ip: str) -> bytes:
    return socket.inet_aton(ip)


def canonical_key(src_ip: str, src_port: int, dst_ip: str, dst_port: int,
                  protocol: Protocol) -> tuple:
    """5-tuple with the lower (address, port) endpoint first."""
    a = (ip_bytes(src_ip), src_port)
    b = (ip_bytes(dst_ip), dst_port)
    if b < a:
        return (dst_ip, dst_port, src_ip, src_port, Protocol(protocol))
    return (src_ip, src_port, dst_ip, dst_port, Protocol(protocol))


def key_string(key: tuple) -> str:
    lo_ip, lo_port, hi_ip, hi_port, proto = key
    return f"{lo_ip}:{lo_port}-{hi_ip}:{hi_port}/{Protocol(proto).value}"


@dataclass(frozen=True)
class PacketRecord:
    timestamp_us: int
    src_ip: str
    dst_ip: str
    src_port: int = 0
    dst_port: int = 0
    protocol: Protocol = Protocol.TCP
    tcp_flags: int = 0
    payload_len: int = 0
    wire_len: int = 0

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        if self.payload_len < 0 or self.wire_len < self.payload_len:
            raise ValueError(f"bad lengths payload={self.payload_len} wire={self.wire_len}")
        if self.protocol not in (Protocol.TCP, Protocol.UDP) and (self.src_port or self.dst_port):
            raise ValueError("ports must be 0 for non-TCP/UDP packets")
        if self.protocol != Protocol.TCP and self.tcp_flags:
            raise ValueError("tcp_flags must be 0 for non-TCP packets")
        if not (0 <= self.src_port <= 0xFFFF and 0 <= self.dst_port <= 0xFFFF):
            raise ValueError("port out of range")
        if not 0 <= self.tcp_flags <= 0xFF:
            raise ValueError("tcp_flags must fit in 8 bits")

    @property
    def flow_key(self) -> tuple:
        return canonical_key(self.src_ip, self.src_port, self.dst_ip, self.dst_port, self.protocol)


@dataclass
class FlowRecord:
    """Bidirectional flow. src/dst are the direction of the first packet ("forward")."""

    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int
    protocol: Protocol
    first_seen_us: int
    last_seen_us: int
    fwd_pkts: int = 0
    bwd_pkts: int = 0
    fwd_bytes: int = 0
    bwd_bytes: int = 0
    syn_cnt: int = 0
    ack_cnt: int = 0
    rst_cnt: int = 0
    fin_cnt: int = 0
    fwd_iat_mean_us: float = 0.0
    label: Optional[int] = None
    label_source: LabelSource = LabelSource.UNLABELED

    def __post_init__(self):
        self.protocol = Protocol(self.protocol)
        self.label_source = LabelSource(self.label_source)

    @property
    def flow_key(self) -> tuple:
        return canonical_key(self.src_ip, self.src_port, self.dst_ip, self.dst_port, self.protocol)

    @property
    def total_pkts(self) -> int:
        return self.fwd_pkts + self.bwd_pkts

    @property
    def total_bytes(self) -> int:
        return self.fwd_bytes + self.bwd_bytes

    def check(self) -> None:
        if self.last_seen_us < self.first_seen_us:
            raise ValueError("last_seen_us < first_seen_us")
        if self.total_pkts < 1:
            raise ValueError("flow without packets")
        counters = (self.fwd_pkts, self.bwd_pkts, self.fwd_bytes, self.bwd_bytes,
                    self.syn_cnt, self.ack_cnt, self.rst_cnt, self.fin_cnt)
        if min(counters) < 0 or self.fwd_iat_mean_us < 0:
            raise ValueError("negative counter")


# Field order of the flow CSV is fixed; see README for per-field meaning.
FLOW_CSV_FIELDS = [f.name for f in fields(FlowRecord)]
_INT_FIELDS = {"src_port", "dst_port", "first_seen_us", "last_seen_us", "fwd_pkts", "bwd_pkts",
               "fwd_bytes", "bwd_bytes", "syn_cnt", "ack_cnt", "rst_cnt", "fin_cnt"}


def flow_to_row(flow: FlowRecord) -> list[str]:
    row = []
    for name, value in asdict(flow).items():
        if isinstance(value, Enum):
            row.append(value.value)
        elif value is None:
            row.append("")
        elif isinstance(value, float):
            row.append(repr(value))
        else:
            row.append(str(value))
    return row


def flow_from_row(row: dict) -> FlowRecord:
    kwargs = {}
    for name in FLOW_CSV_FIELDS:
        raw = row[name]
        if name in _INT_FIELDS:
            kwargs[name] = int(raw)
        elif name == "fwd_iat_mean_us":
            kwargs[name] = float(raw)
        elif name == "label":
            kwargs[name] = int(raw) if raw != "" else None
        else:
            kwargs[name] = raw
    return FlowRecord(**kwargs)


def write_flows_csv(flows: Iterable[FlowRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FLOW_CSV_FIELDS)
    for f in flows:
        w.writerow(flow_to_row(f))
    return buf.getvalue()


def read_flows_csv(text: str) -> list[FlowRecord]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != FLOW_CSV_FIELDS:
        raise ValueError(f"unexpected flow CSV header: {reader.fieldnames}")
    return [flow_from_row(r) for r in reader]


def _splitmix_mix(z):
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


@dataclass
class Rng64:
    """SplitMix64 generator.

    The state advances by the golden-ratio increment and each output is the
    SplitMix64 finalizer of the new state. ``uniform`` uses the top 53 bits.
    ``split`` seeds a child generator with the parent's next 64-bit output.
    """

    state: int = field(default=0)

    def __post_init__(self):
        self.state &= MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & MASK64
        return _splitmix_mix(self.state)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniforms(self, n: int) -> np.ndarray:
        """n draws as a float64 array, identical to n successive ``uniform`` calls."""
        if n <= 0:
            return np.zeros(0)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _GAMMA) & MASK64
        return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        return min(int(self.uniform() * n), n - 1)

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi] inclusive."""
        return lo + self.randbelow(hi - lo + 1)

    def bernoulli(self, p: float) -> bool:
        return self.uniform() < p

    def exponential(self, mean: float) -> float:
        return -mean * math.log1p(-self.uniform())

    def normal(self) -> float:
        # Box-Muller, one output per call
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log1p(-u1)) * math.cos(2.0 * math.pi * u2)

    def lognormal(self, mean: float, sigma: float) -> float:
        """Lognormal draw parameterized by its arithmetic mean."""
        mu = math.log(mean) - 0.5 * sigma * sigma
        return math.exp(mu + sigma * self.normal())

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        idx = list(range(n))
        self.shuffle(idx)
        return idx

    def split(self) -> "Rng64":
        return Rng64(self.next_u64())


def rng_new(seed: int) -> Rng64:
    return Rng64(seed)


def rng_uniform(rng: Rng64) -> float:
    return rng.uniform()
