"""Scenario configs: benign background plus a list of scans, all from one seed."""

from __future__ import annotations

import ipaddress
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from .core import PacketRecord, Rng64, key_string, rng_new
from .scansim import ScanProfile, merge_streams, simulate_benign, simulate_scan

DEMO_SCENARIO = Path(__file__).parent / "data" / "demo_scenario.json"


class ConfigError(ValueError):
    pass


def parse_targets(spec) -> list[str]:
    """List of addresses, "a.b.c.d-e.f.g.h" range, or CIDR block (hosts only)."""
    if isinstance(spec, list):
        return [str(ipaddress.IPv4Address(t)) for t in spec]
    spec = str(spec)
    if "/" in spec:
        return [str(h) for h in ipaddress.ip_network(spec, strict=False).hosts()]
    if "-" in spec:
        lo, hi = (int(ipaddress.IPv4Address(x.strip())) for x in spec.split("-"))
        return [str(ipaddress.IPv4Address(i)) for i in range(lo, hi + 1)]
    return [str(ipaddress.IPv4Address(spec))]


def parse_ports(spec) -> list[int]:
    if isinstance(spec, list):
        return [int(p) for p in spec]
    ports = []
    for part in str(spec).split(","):
        if "-" in part:
            lo, hi = part.split("-")
            ports.extend(range(int(lo), int(hi) + 1))
        elif part.strip():
            ports.append(int(part))
    return ports


@dataclass
class ScanSpec:
    profile: ScanProfile
    targets: list[str]
    start_s: float = 0.0


@dataclass
class Scenario:
    seed: int = 22
    attacker_ips: list[str] = field(default_factory=list)
    benign_flows: int = 0
    benign_subnet: str = "10.0.1.0/24"
    benign_duration_s: float = 300.0
    benign_start_s: float = 0.0
    scans: list[ScanSpec] = field(default_factory=list)
    output_pcap: str = "capture.pcap"
    snaplen: int = 65535

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            benign = d.get("benign", {})
            scans = []
            for s in d.get("scans", []):
                profile = ScanProfile(
                    kind=s["kind"], scanner_ip=s["scanner_ip"],
                    target_ports=parse_ports(s.get("ports", [])),
                    rate_pps=float(s.get("rate_pps", 100.0)),
                    open_prob=float(s.get("open_prob", 0.05)),
                    reply_prob=float(s.get("reply_prob", 0.9)),
                    silent_prob=float(s.get("silent_prob", 0.0)))
                scans.append(ScanSpec(profile, parse_targets(s["targets"]),
                                      float(s.get("start_s", 0.0))))
            return cls(seed=int(d.get("seed", 22)),
                       attacker_ips=list(d.get("attacker_ips", [])),
                       benign_flows=int(benign.get("n_flows", 0)),
                       benign_subnet=benign.get("subnet", "10.0.1.0/24"),
                       benign_duration_s=float(benign.get("duration_s", 300.0)),
                       benign_start_s=float(benign.get("start_s", 0.0)),
                       scans=scans,
                       output_pcap=d.get("output_pcap", "capture.pcap"),
                       snaplen=int(d.get("snaplen", 65535)))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid scenario: {e}") from e

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Scenario":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"scenario file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"scenario {path} is not valid JSON: {e}") from e
        return cls.from_dict(data)


def run_scenario(sc: Scenario, seed: int | None = None) -> tuple[list[PacketRecord], dict[str, int]]:
    """Generate the merged packet stream and the flow-key -> label ground truth.

    Every component draws from its own child generator split off the root in
    a fixed order: benign first, then scans in listed order.
    """
    root = rng_new(sc.seed if seed is None else seed)
    streams = []
    truth: dict[str, int] = {}
    benign = simulate_benign(sc.benign_flows, sc.benign_subnet, root.split(),
                             int(sc.benign_start_s * 1e6), sc.benign_duration_s)
    streams.append(benign)
    for p in benign:
        truth[key_string(p.flow_key)] = 0
    for spec in sc.scans:
        pkts = simulate_scan(spec.profile, spec.targets, root.split(), int(spec.start_s * 1e6))
        streams.append(pkts)
        for p in pkts:
            truth[key_string(p.flow_key)] = 1
    return merge_streams(*streams), truth
