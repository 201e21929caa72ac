"""Flow features, categorical encoding, min-max scaling and the train/test split."""

from __future__ import annotations

import csv
import io
import numbers
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import FlowRecord, rng_new

FEATURE_NAMES = [
    "duration_s", "protocol", "dst_port", "fwd_pkts", "bwd_pkts", "fwd_bytes", "bwd_bytes",
    "fwd_iat_mean_us", "mean_pkt_size", "syn_cnt", "ack_cnt", "rst_cnt", "fin_cnt",
    "distinct_dst_ports_by_src_60s", "flows_by_src_60s", "fwd_pkt_ratio",
]
N_FEATURES = len(FEATURE_NAMES)
WINDOW_US = 60_000_000


class EmptyTrainingSet(ValueError):
    pass


@dataclass(frozen=True)
class SourceWindow:
    """Activity of a flow's forward source over the trailing window."""
    distinct_dst_ports: int = 1
    flows: int = 1


def trailing_window_context(flows: Sequence[FlowRecord], window_us: int = WINDOW_US) -> list[SourceWindow]:
    """Per flow: flows started by the same source in [first_seen - window, first_seen].

    The count includes the flow itself. Results follow input order.
    """
    order = sorted(range(len(flows)), key=lambda i: (flows[i].first_seen_us, i))
    recent: dict[str, deque] = defaultdict(deque)
    ports: dict[str, Counter] = defaultdict(Counter)
    out: list[Optional[SourceWindow]] = [None] * len(flows)
    for i in order:
        f = flows[i]
        q, pc = recent[f.src_ip], ports[f.src_ip]
        while q and q[0][0] < f.first_seen_us - window_us:
            _, old_port = q.popleft()
            pc[old_port] -= 1
            if not pc[old_port]:
                del pc[old_port]
        q.append((f.first_seen_us, f.dst_port))
        pc[f.dst_port] += 1
        out[i] = SourceWindow(distinct_dst_ports=len(pc), flows=len(q))
    return out


def generate_features(flow: FlowRecord, context: SourceWindow) -> list:
    """16 raw values; the protocol stays a string until encoding."""
    n = flow.total_pkts
    return [
        (flow.last_seen_us - flow.first_seen_us) / 1e6,
        flow.protocol.value.lower(),
        flow.dst_port,
        flow.fwd_pkts,
        flow.bwd_pkts,
        flow.fwd_bytes,
        flow.bwd_bytes,
        flow.fwd_iat_mean_us,
        flow.total_bytes / n,
        flow.syn_cnt,
        flow.ack_cnt,
        flow.rst_cnt,
        flow.fin_cnt,
        context.distinct_dst_ports,
        context.flows,
        flow.fwd_pkts / n,
    ]


def featurize_flows(flows: Sequence[FlowRecord]) -> list[list]:
    ctx = trailing_window_context(flows)
    return [generate_features(f, c) for f, c in zip(flows, ctx)]


def _is_numeric(column: Sequence) -> bool:
    return all(isinstance(v, numbers.Number) and not isinstance(v, bool) for v in column)


def encode_categorical(rows: Sequence[Sequence]) -> tuple[list[list], dict[int, dict]]:
    """Label-encode every non-numeric column, codes by first occurrence.

    Returns the recoded rows and {column index: {value: code}}.
    """
    rows = [list(r) for r in rows]
    if not rows:
        return rows, {}
    mapping: dict[int, dict] = {}
    for j in range(len(rows[0])):
        column = [r[j] for r in rows]
        if _is_numeric(column):
            continue
        codes: dict = {}
        for v in column:
            if v not in codes:
                codes[v] = len(codes)
        for r in rows:
            r[j] = codes[r[j]]
        mapping[j] = codes
    return rows, mapping


def decode_categorical(rows: Sequence[Sequence], mapping: dict[int, dict]) -> list[list]:
    inverse = {j: {c: v for v, c in codes.items()} for j, codes in mapping.items()}
    return [[inverse[j][v] if j in inverse else v for j, v in enumerate(r)] for r in rows]


@dataclass
class NormalizationParams:
    mins: np.ndarray
    maxs: np.ndarray

    def to_dict(self) -> dict:
        return {"min": [float(v) for v in self.mins], "max": [float(v) for v in self.maxs]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationParams":
        return cls(np.asarray(d["min"], dtype=float), np.asarray(d["max"], dtype=float))


def fit_minmax(train_rows) -> NormalizationParams:
    x = np.asarray(train_rows, dtype=float)
    if x.size == 0:
        raise EmptyTrainingSet("cannot fit normalization on an empty training set")
    return NormalizationParams(x.min(axis=0), x.max(axis=0))


def apply_minmax(params: NormalizationParams, rows) -> np.ndarray:
    """(x - min) / (max - min), constant features -> 0, result clamped to [0, 1]."""
    x = np.asarray(rows, dtype=float)
    span = params.maxs - params.mins
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (x - params.mins) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


@dataclass
class SplitDataset:
    train_idx: list[int]
    test_idx: list[int]
    seed: int
    train_frac: float = 0.7

    def to_dict(self) -> dict:
        return {"seed": self.seed, "train_frac": self.train_frac,
                "n_train": len(self.train_idx), "n_test": len(self.test_idx),
                "train": self.train_idx, "test": self.test_idx}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitDataset":
        return cls(list(d["train"]), list(d["test"]), int(d["seed"]), float(d["train_frac"]))


def split_dataset(n_rows: int, seed: int = 22, train_frac: float = 0.7) -> SplitDataset:
    """Seeded Fisher-Yates shuffle of row indices, then a prefix split."""
    if n_rows <= 0:
        raise EmptyTrainingSet("cannot split an empty dataset")
    perm = rng_new(seed).permutation(n_rows)
    n_train = int(round(train_frac * n_rows))
    return SplitDataset(perm[:n_train], perm[n_train:], seed, train_frac)


@dataclass
class Dataset:
    """Encoded, normalized feature matrix with labels and split assignment."""
    x: np.ndarray
    y: np.ndarray
    split: SplitDataset
    encoding: dict = field(default_factory=dict)
    norm: Optional[NormalizationParams] = None

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        i = np.asarray(self.split.train_idx, dtype=int)
        return self.x[i], self.y[i]

    @property
    def test(self) -> tuple[np.ndarray, np.ndarray]:
        i = np.asarray(self.split.test_idx, dtype=int)
        return self.x[i], self.y[i]


def build_dataset(flows: Sequence[FlowRecord], seed: int = 22, train_frac: float = 0.7) -> Dataset:
    unlabeled = [i + 1 for i, f in enumerate(flows) if f.label is None]
    if unlabeled:
        shown = ", ".join(map(str, unlabeled[:20]))
        raise ValueError(f"{len(unlabeled)} unlabeled flow rows (1-based): {shown}")
    raw = featurize_flows(flows)
    encoded, mapping = encode_categorical(raw)
    x = np.asarray(encoded, dtype=float)
    y = np.asarray([f.label for f in flows], dtype=float)
    split = split_dataset(len(flows), seed, train_frac)
    params = fit_minmax(x[split.train_idx])
    return Dataset(apply_minmax(params, x), y, split, mapping, params)


def write_dataset_csv(x: np.ndarray, y: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FEATURE_NAMES + ["label"])
    for row, label in zip(x, y):
        w.writerow([repr(float(v)) for v in row] + [int(label)])
    return buf.getvalue()


def read_dataset_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != FEATURE_NAMES + ["label"]:
        raise ValueError("unexpected dataset header")
    rows = [r for r in reader]
    if not rows:
        return np.zeros((0, N_FEATURES)), np.zeros(0)
    arr = np.asarray(rows, dtype=float)
    return arr[:, :N_FEATURES], arr[:, N_FEATURES]
