"""Attack-graph planning and synthetic benign/scan traffic.

The attack graph runs from an initial condition ``I`` to the exploitation
state ``G``; each directed action carries a success probability in (0, 1].
"""

from __future__ import annotations

import heapq
import ipaddress
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

from .core import (ACK, FIN, PSH, RST, SYN, FlowRecord, LabelSource, PacketRecord, Protocol,
                   Rng64, key_string)
from .pcap import header_len


class Unreachable(ValueError):
    pass


class InvalidAction(ValueError):
    pass


@dataclass(frozen=True)
class Action:
    from_state: str
    to_state: str
    action_id: str


@dataclass
class AttackGraph:
    states: list[str]
    actions: list[Action]
    probs: dict[str, float]
    initial: str = "I"
    goal: str = "G"

    def __post_init__(self):
        self.actions = [a if isinstance(a, Action) else Action(*a) for a in self.actions]
        if self.states.count(self.initial) != 1 or self.states.count(self.goal) != 1:
            raise ValueError("graph needs exactly one initial and one goal state")
        if self.initial == self.goal:
            raise ValueError("initial and goal state must differ")
        known = set(self.states)
        ids = set()
        for a in self.actions:
            if a.from_state not in known or a.to_state not in known:
                raise ValueError(f"action {a.action_id} references unknown state")
            if a.action_id in ids:
                raise ValueError(f"duplicate action id {a.action_id}")
            ids.add(a.action_id)
            p = self.probs.get(a.action_id)
            if p is None or not 0.0 < p <= 1.0:
                raise ValueError(f"probability of {a.action_id} must lie in (0, 1]")

    def action(self, action_id: str) -> Action:
        for a in self.actions:
            if a.action_id == action_id:
                return a
        raise InvalidAction(f"unknown action {action_id}")

    def outgoing(self, state: str) -> list[Action]:
        return [a for a in self.actions if a.from_state == state]


@dataclass(frozen=True)
class AttackPath:
    actions: tuple[str, ...]
    success_prob: float


def path_probability(g: AttackGraph, action_ids: Sequence[str]) -> float:
    return math.prod(g.probs[a] for a in action_ids)


def best_attack_path(g: AttackGraph) -> AttackPath:
    """Most probable I->G action chain.

    Dijkstra over -log p with key (cost, hop count, action-id sequence); the
    key is monotone under extension, so ties resolve to fewer actions and then
    the lexicographically smallest id sequence.
    """
    start = (0.0, 0, ())
    best = {g.initial: start}
    heap = [(0.0, 0, (), g.initial)]
    done = set()
    while heap:
        cost, hops, seq, state = heapq.heappop(heap)
        if state in done:
            continue
        done.add(state)
        if state == g.goal:
            return AttackPath(actions=seq, success_prob=path_probability(g, seq))
        for a in g.outgoing(state):
            if a.to_state in done:
                continue
            cand = (cost - math.log(g.probs[a.action_id]), hops + 1, seq + (a.action_id,))
            cur = best.get(a.to_state)
            if cur is None or cand < cur:
                best[a.to_state] = cand
                heapq.heappush(heap, (*cand, a.to_state))
    raise Unreachable(f"{g.goal} is not reachable from {g.initial}")


def apply_transition(g: AttackGraph, current: str, action_id: str) -> str:
    a = g.action(action_id)
    if a.from_state != current:
        raise InvalidAction(f"action {action_id} leaves {a.from_state}, not {current}")
    return a.to_state


class ScanKind(str, Enum):
    PING_SWEEP = "PING_SWEEP"
    SYN_PORT_SCAN = "SYN_PORT_SCAN"
    SERVICE_VERSION_SCAN = "SERVICE_VERSION_SCAN"


@dataclass
class ScanProfile:
    kind: ScanKind
    scanner_ip: str
    target_ports: list[int] = field(default_factory=list)
    rate_pps: float = 100.0
    open_prob: float = 0.05
    reply_prob: float = 0.9
    # probes that get no answer at all (filtered ports)
    silent_prob: float = 0.0

    def __post_init__(self):
        self.kind = ScanKind(self.kind)
        if self.rate_pps <= 0:
            raise ValueError("rate_pps must be positive")
        if self.kind is not ScanKind.PING_SWEEP and not self.target_ports:
            raise ValueError("port scans need at least one target port")


RTT_MEAN_US = 2_000.0


class _Emitter:
    """Collects packets with a stable creation index, sorted on output."""

    def __init__(self):
        self.items: list[tuple[int, int, PacketRecord]] = []

    def tcp(self, ts, src, sport, dst, dport, flags, payload=0):
        self._add(PacketRecord(int(ts), src, dst, sport, dport, Protocol.TCP, flags, payload,
                               header_len(Protocol.TCP) + payload))

    def udp(self, ts, src, sport, dst, dport, payload):
        self._add(PacketRecord(int(ts), src, dst, sport, dport, Protocol.UDP, 0, payload,
                               header_len(Protocol.UDP) + payload))

    def icmp(self, ts, src, dst, payload=56):
        self._add(PacketRecord(int(ts), src, dst, 0, 0, Protocol.ICMP, 0, payload,
                               header_len(Protocol.ICMP) + payload))

    def _add(self, pkt):
        self.items.append((pkt.timestamp_us, len(self.items), pkt))

    def packets(self) -> list[PacketRecord]:
        return [p for _, _, p in sorted(self.items, key=lambda t: (t[0], t[1]))]


def _rtt(rng: Rng64) -> int:
    return 1 + int(rng.exponential(RTT_MEAN_US))


def simulate_scan(profile: ScanProfile, targets: Sequence[str], rng: Rng64,
                  start_us: int = 0) -> list[PacketRecord]:
    """Packets of one reconnaissance scan, probes paced by exponential gaps."""
    if not targets:
        raise ValueError("scan needs at least one target")
    out = _Emitter()
    me = profile.scanner_ip
    gap_mean = 1e6 / profile.rate_pps
    t = float(start_us)
    if profile.kind is ScanKind.PING_SWEEP:
        for target in targets:
            out.icmp(t, me, target)
            if rng.bernoulli(profile.reply_prob):
                out.icmp(t + _rtt(rng), target, me)
            t += rng.exponential(gap_mean)
        return out.packets()

    sport = rng.randint(1024, 65535)
    for target in targets:
        for port in profile.target_ports:
            out.tcp(t, me, sport, target, port, SYN)
            if rng.bernoulli(profile.silent_prob):
                pass
            elif rng.bernoulli(profile.open_prob):
                t1 = t + _rtt(rng)
                out.tcp(t1, target, port, me, sport, SYN | ACK)
                t2 = t1 + 1 + int(rng.exponential(100.0))
                if profile.kind is ScanKind.SYN_PORT_SCAN:
                    out.tcp(t2, me, sport, target, port, RST)
                else:
                    _banner_grab(out, rng, me, sport, target, port, t2)
            else:
                out.tcp(t + _rtt(rng), target, port, me, sport, RST | ACK)
            t += rng.exponential(gap_mean)
        if profile.kind is ScanKind.SERVICE_VERSION_SCAN:
            sport = sport + 1 if sport < 65535 else 1024
    return out.packets()


def _banner_grab(out: _Emitter, rng: Rng64, me, sport, target, port, t) -> None:
    out.tcp(t, me, sport, target, port, ACK)
    n = rng.randint(2, 4)
    for k in range(n):
        t += _rtt(rng)
        # server speaks first (banner), then probe/response alternate
        if k % 2 == 0:
            out.tcp(t, target, port, me, sport, PSH | ACK, rng.randint(16, 96))
        else:
            out.tcp(t, me, sport, target, port, PSH | ACK, rng.randint(8, 48))
    out.tcp(t + 1 + int(rng.exponential(100.0)), me, sport, target, port, RST)


BENIGN_SERVICES = (("http", Protocol.TCP, 80), ("https", Protocol.TCP, 443),
                   ("mqtt", Protocol.TCP, 1883), ("dns", Protocol.UDP, 53))
MAX_PAYLOAD = 1460


@dataclass
class BenignSession:
    client: str
    sport: int
    server: str
    dport: int
    protocol: Protocol


def simulate_benign(n_flows: int, subnet: str, rng: Rng64, start_us: int = 0,
                    duration_s: float = 300.0, n_servers: int = 4,
                    sessions: Optional[list] = None) -> list[PacketRecord]:
    """HTTP/HTTPS/MQTT over TCP and DNS over UDP sessions inside ``subnet``.

    Each session has a unique client endpoint, 5-50 data packets with
    lognormal payload sizes (mean 300 B), and ends with a FIN exchange. When
    ``sessions`` is a list, the generated session descriptors are appended.
    """
    if n_flows < 0:
        raise ValueError("n_flows must be >= 0")
    out = _Emitter()
    if n_flows == 0:
        return []
    hosts = [str(h) for h in ipaddress.ip_network(subnet, strict=False).hosts()]
    if len(hosts) <= n_servers:
        raise ValueError(f"subnet {subnet} too small")
    servers = hosts[:n_servers]
    clients = hosts[n_servers:]
    next_port = {}
    span = duration_s * 1e6
    for _ in range(n_flows):
        client = clients[rng.randbelow(len(clients))]
        server = servers[rng.randbelow(len(servers))]
        if client not in next_port:
            next_port[client] = rng.randint(49152, 60000)
        sport = next_port[client]
        next_port[client] = sport + 1 if sport < 65535 else 1024
        _name, proto, dport = BENIGN_SERVICES[rng.randbelow(len(BENIGN_SERVICES))]
        t = start_us + rng.uniform() * span
        n_data = rng.randint(5, 50)
        if sessions is not None:
            sessions.append(BenignSession(client, sport, server, dport, proto))
        if proto is Protocol.UDP:
            for k in range(n_data):
                size = _payload(rng)
                if k % 2 == 0:
                    out.udp(t, client, sport, server, dport, size)
                else:
                    out.udp(t, server, dport, client, sport, size)
                t += _rtt(rng)
            continue
        out.tcp(t, client, sport, server, dport, SYN)
        t += _rtt(rng)
        out.tcp(t, server, dport, client, sport, SYN | ACK)
        t += _rtt(rng)
        out.tcp(t, client, sport, server, dport, ACK)
        for _k in range(n_data):
            t += 1 + rng.exponential(20_000.0)
            size = _payload(rng)
            if rng.bernoulli(0.5):
                out.tcp(t, client, sport, server, dport, PSH | ACK, size)
            else:
                out.tcp(t, server, dport, client, sport, PSH | ACK, size)
        # final ACK after FIN/FIN is omitted so the closed flow is not reopened
        t += _rtt(rng)
        out.tcp(t, client, sport, server, dport, FIN | ACK)
        t += _rtt(rng)
        out.tcp(t, server, dport, client, sport, FIN | ACK)
    return out.packets()


def _payload(rng: Rng64) -> int:
    return max(1, min(MAX_PAYLOAD, int(round(rng.lognormal(300.0, 0.8)))))


def label_flows(flows: Iterable[FlowRecord], attacker_ips: Iterable[str]) -> list[FlowRecord]:
    attackers = set(attacker_ips)
    out = []
    for f in flows:
        hit = f.src_ip in attackers or f.dst_ip in attackers
        out.append(_relabel(f, int(hit), LabelSource.ATTACKER_IP_LIST))
    return out


def label_from_ground_truth(flows: Iterable[FlowRecord], truth: dict[str, int]) -> list[FlowRecord]:
    """Labels keyed by canonical flow-key string; missing keys stay unlabeled."""
    out = []
    for f in flows:
        k = key_string(f.flow_key)
        if k in truth:
            out.append(_relabel(f, int(truth[k]), LabelSource.SIMULATOR_GROUND_TRUTH))
        else:
            out.append(_relabel(f, None, LabelSource.UNLABELED))
    return out


def _relabel(f: FlowRecord, label, source) -> FlowRecord:
    from dataclasses import replace
    return replace(f, label=label, label_source=source)


def merge_streams(*streams: list[PacketRecord]) -> list[PacketRecord]:
    """Timestamp-ordered merge; equal timestamps keep stream order."""
    tagged = [(p.timestamp_us, i, j, p) for i, s in enumerate(streams) for j, p in enumerate(s)]
    tagged.sort(key=lambda t: t[:3])
    return [t[3] for t in tagged]
