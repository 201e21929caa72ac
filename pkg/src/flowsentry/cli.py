"""Command line: simulate -> extract -> featurize -> train -> evaluate -> report.

Structured JSON lines go to stdout, human-readable progress to stderr. All
artifacts of a run live in ``<out>/run-<hash>``, where the hash covers every
setting that changes the artifacts except the model kind.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import baselines as bl
from . import nn
from .core import Protocol, Rng64, read_flows_csv, write_flows_csv
from .features import (NormalizationParams, SplitDataset, build_dataset, read_dataset_csv,
                       write_dataset_csv)
from .metrics import confusion, emit_report, metrics, report_dict, roc_auc
from .pcap import DEFAULT_IDLE_TIMEOUT_US, PcapError, flow_assemble, pcap_write, read_pcap
from .scansim import label_flows, label_from_ground_truth
from .scenario import DEMO_SCENARIO, ConfigError, Scenario, run_scenario

log = logging.getLogger("flowsentry")

MODEL_KINDS = ("lstm", "mlp", "nb", "knn", "svm")
CHECKPOINT_FORMAT = "flowsentry-checkpoint/1"
SEED_ENV = "FLOWSENTRY_SEED"


class MissingArtifact(FileNotFoundError):
    pass


@dataclass
class RunConfig:
    seed: int = 22
    scenario: Optional[str] = None
    idle_timeout_us: int = DEFAULT_IDLE_TIMEOUT_US
    model_kind: str = "lstm"
    train: dict = field(default_factory=dict)
    knn_k: int = 5
    svm_lambda: float = 1e-4
    svm_epochs: int = 50
    out: str = "runs"

    @classmethod
    def load(cls, path: Optional[str]) -> "RunConfig":
        if path is None:
            return cls()
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {p} is not valid JSON: {e}") from e
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        if cfg.scenario is not None and not Path(cfg.scenario).is_absolute():
            cfg.scenario = str((p.parent / cfg.scenario).resolve())
        return cfg

    def scenario_obj(self) -> Scenario:
        sc = Scenario.load(self.scenario or DEMO_SCENARIO)
        sc.seed = self.seed
        return sc

    def train_config(self) -> nn.TrainConfig:
        tc = nn.TrainConfig(seed=self.seed)
        for k, v in self.train.items():
            if not hasattr(tc, k) or k == "seed":
                raise ConfigError(f"unknown train override: {k}")
            setattr(tc, k, type(getattr(tc, k))(v))
        return tc

    def run_dir(self) -> Path:
        scenario_text = Path(self.scenario or DEMO_SCENARIO).read_text() \
            if Path(self.scenario or DEMO_SCENARIO).is_file() else ""
        key = {"seed": self.seed, "scenario": scenario_text, "idle_timeout_us": self.idle_timeout_us,
               "train": self.train, "knn_k": self.knn_k, "svm_lambda": self.svm_lambda,
               "svm_epochs": self.svm_epochs}
        digest = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:12]
        return Path(self.out) / f"run-{digest}"


def emit(event: str, **payload) -> None:
    print(json.dumps({"event": event, **payload}, sort_keys=True), flush=True)


def _require(path: Path, hint: str) -> Path:
    if not path.is_file():
        raise MissingArtifact(f"{path} not found; run `{hint}` first")
    return path


# --- commands ---------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> dict:
    sc = cfg.scenario_obj()
    packets, truth = run_scenario(sc)
    rd = cfg.run_dir()
    rd.mkdir(parents=True, exist_ok=True)
    pcap_path = rd / Path(sc.output_pcap).name
    pcap_path.write_bytes(pcap_write(packets, sc.snaplen))
    sidecar = {"seed": cfg.seed, "attacker_ips": sc.attacker_ips, "flows": truth}
    (rd / "ground_truth.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    n_scan = sum(truth.values())
    summary = {"run_dir": str(rd), "pcap": str(pcap_path), "packets": len(packets),
               "flow_keys_scan": n_scan, "flow_keys_benign": len(truth) - n_scan}
    log.info("simulated %d packets (%d scan / %d benign flow keys)", len(packets), n_scan,
             len(truth) - n_scan)
    emit("simulate", **summary)
    return summary


def cmd_extract(cfg: RunConfig, pcap_path: Optional[str] = None) -> dict:
    rd = cfg.run_dir()
    src = Path(pcap_path) if pcap_path else rd / Path(cfg.scenario_obj().output_pcap).name
    if not src.is_file():
        raise MissingArtifact(f"{src} not found; run `simulate` first or pass --pcap")
    packets = read_pcap(src.read_bytes())
    flows = flow_assemble(packets, cfg.idle_timeout_us)
    sidecar = src.parent / "ground_truth.json"
    if sidecar.is_file():
        flows = label_from_ground_truth(flows, json.loads(sidecar.read_text())["flows"])
        how = "ground_truth"
    else:
        attackers = cfg.scenario_obj().attacker_ips if cfg.scenario else []
        flows = label_flows(flows, attackers) if attackers else flows
        how = "attacker_ips" if attackers else "unlabeled"
    rd.mkdir(parents=True, exist_ok=True)
    (rd / "flows.csv").write_text(write_flows_csv(flows))
    ip_pkts = [p for p in packets if p.protocol is not Protocol.OTHER]
    summary = {"run_dir": str(rd), "flows": len(flows), "labels": how,
               "packets_total": len(packets), "packets_tcp_udp_icmp": len(ip_pkts),
               "flow_packets": sum(f.total_pkts for f in flows),
               "wire_bytes": sum(p.wire_len for p in ip_pkts),
               "flow_bytes": sum(f.total_bytes for f in flows),
               "scan_flows": sum(1 for f in flows if f.label == 1)}
    log.info("extracted %d flows from %d packets", len(flows), len(packets))
    emit("extract", **summary)
    return summary


def cmd_featurize(cfg: RunConfig) -> dict:
    rd = cfg.run_dir()
    flows = read_flows_csv(_require(rd / "flows.csv", "extract").read_text())
    if not flows:
        raise ValueError("flow CSV is empty")
    ds = build_dataset(flows, seed=cfg.seed)
    (rd / "dataset.csv").write_text(write_dataset_csv(ds.x, ds.y))
    enc = {str(j): codes for j, codes in ds.encoding.items()}
    (rd / "encoding.json").write_text(json.dumps(enc, indent=1, sort_keys=True) + "\n")
    (rd / "normalization.json").write_text(json.dumps(ds.norm.to_dict(), indent=1) + "\n")
    (rd / "split.json").write_text(json.dumps(ds.split.to_dict()) + "\n")
    summary = {"run_dir": str(rd), "rows": len(flows), "n_train": len(ds.split.train_idx),
               "n_test": len(ds.split.test_idx), "positives": int(ds.y.sum())}
    log.info("featurized %d rows: %d train / %d test", len(flows), summary["n_train"], summary["n_test"])
    emit("featurize", **summary)
    return summary


def _load_split(rd: Path):
    x, y = read_dataset_csv(_require(rd / "dataset.csv", "featurize").read_text())
    split = SplitDataset.from_dict(json.loads(_require(rd / "split.json", "featurize").read_text()))
    return x, y, split


def _nn_spec(kind: str) -> nn.NetworkSpec:
    return nn.lstm_spec() if kind == "lstm" else nn.mlp_spec()


def train_model(kind: str, cfg: RunConfig, x: np.ndarray, y: np.ndarray) -> tuple[dict, list[float]]:
    """Fit one model kind; returns its checkpoint envelope and the loss history."""
    env = {"format": CHECKPOINT_FORMAT, "model_kind": kind, "seed": cfg.seed}
    losses: list[float] = []
    if kind in ("lstm", "mlp"):
        spec = _nn_spec(kind)
        tc = cfg.train_config()
        res = nn.train(spec, tc, x, y)
        losses = res.losses
        env.update(spec=spec.to_dict(), train_config=tc.to_dict(),
                   params=nn.params_to_dict(spec, res.params))
    elif kind == "nb":
        env["model"] = bl.nb_fit(x, y).to_dict()
    elif kind == "knn":
        env["model"] = bl.knn_fit(x, y, cfg.knn_k).to_dict()
    elif kind == "svm":
        m = bl.svm_fit(x, y, cfg.svm_lambda, cfg.svm_epochs, Rng64(cfg.seed))
        env["model"] = m.to_dict()
        env["svm_epochs"] = cfg.svm_epochs
    else:
        raise ConfigError(f"unknown model kind {kind}")
    return env, losses


def score_model(env: dict, x: np.ndarray, threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    kind = env["model_kind"]
    if kind in ("lstm", "mlp"):
        spec = nn.NetworkSpec.from_dict(env["spec"])
        params = nn.params_from_dict(spec, env["params"])
        scores = nn.predict_proba(spec, params, x)
        return (scores >= threshold).astype(int), scores
    if kind == "nb":
        return bl.nb_predict(bl.GaussianNbModel.from_dict(env["model"]), x)
    if kind == "knn":
        return bl.knn_predict(bl.KnnModel.from_dict(env["model"]), x)
    if kind == "svm":
        return bl.svm_predict(bl.LinearSvmModel.from_dict(env["model"]), x)
    raise ConfigError(f"unknown model kind {kind}")


def cmd_train(cfg: RunConfig) -> dict:
    rd = cfg.run_dir()
    x, y, split = _load_split(rd)
    kind = cfg.model_kind
    t0 = time.perf_counter()
    env, losses = train_model(kind, cfg, x[split.train_idx], y[split.train_idx])
    (rd / f"checkpoint_{kind}.json").write_text(json.dumps(env, sort_keys=True) + "\n")
    if losses:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(losses, 1):
            w.writerow([i, repr(loss)])
        (rd / f"loss_{kind}.csv").write_text(buf.getvalue())
    log.info("trained %s on %d rows in %.1fs", kind, len(split.train_idx), time.perf_counter() - t0)
    summary = {"run_dir": str(rd), "model": kind, "n_train": len(split.train_idx),
               "final_loss": losses[-1] if losses else None}
    emit("train", **summary)
    return summary


def cmd_evaluate(cfg: RunConfig) -> dict:
    rd = cfg.run_dir()
    kind = cfg.model_kind
    ckpt = _require(rd / f"checkpoint_{kind}.json", f"train --model {kind}")
    env = json.loads(ckpt.read_text())
    x, y, split = _load_split(rd)
    threshold = cfg.train_config().threshold
    xt, yt = x[split.test_idx], y[split.test_idx]
    preds, scores = score_model(env, xt, threshold)
    cm = confusion(preds, yt)
    rep = metrics(cm)
    roc, auc = roc_auc(scores, yt)
    rep.auc = auc
    report = report_dict(kind, cfg.seed, threshold, cm, rep,
                         {"idle_timeout_us": cfg.idle_timeout_us, "n_test": len(split.test_idx)})
    js, roc_csv = emit_report(report, roc)
    (rd / f"report_{kind}.json").write_text(js)
    (rd / f"roc_{kind}.csv").write_text(roc_csv)
    log.info("%s: accuracy %.4f, auc %.4f", kind, rep.accuracy, auc)
    emit("evaluate", run_dir=str(rd), **report)
    return report


def cmd_report(cfg: RunConfig) -> dict:
    rd = cfg.run_dir()
    reports = {}
    for kind in MODEL_KINDS:
        p = rd / f"report_{kind}.json"
        if p.is_file():
            reports[kind] = json.loads(p.read_text())
    if not reports:
        raise MissingArtifact(f"no reports in {rd}; run `evaluate` first")
    rows = ["accuracy", "precision", "recall", "specificity", "f_score", "auc"]
    table = {k: {m: r["metrics"][m] for m in rows} for k, r in reports.items()}
    (rd / "summary.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    lines = ["metric       " + "".join(f"{k:>10}" for k in table)]
    for m in rows:
        cells = "".join(f"{v[m]:>10.4f}" if v[m] is not None else f"{'n/a':>10}" for v in table.values())
        lines.append(f"{m:<13}{cells}")
    print("\n".join(lines), file=sys.stderr)
    emit("report", run_dir=str(rd), models=table)
    return table


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flowsentry", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON")
    common.add_argument("--seed", type=int, help="overrides config and $" + SEED_ENV)
    common.add_argument("--model", choices=MODEL_KINDS)
    common.add_argument("--out", help="artifact root directory")
    common.add_argument("--scenario", help="scenario JSON (default: bundled demo)")
    common.add_argument("--idle-timeout-us", type=int)
    for name in ("simulate", "featurize", "train", "evaluate", "report"):
        sub.add_parser(name, parents=[common])
    ex = sub.add_parser("extract", parents=[common])
    ex.add_argument("--pcap", help="capture to read (default: the run's simulated capture)")
    return ap


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError as e:
            raise ConfigError(f"{SEED_ENV} must be an integer") from e
    if args.seed is not None:
        cfg.seed = args.seed
    if args.model:
        cfg.model_kind = args.model
    if args.out:
        cfg.out = args.out
    if args.scenario:
        cfg.scenario = args.scenario
    if args.idle_timeout_us is not None:
        cfg.idle_timeout_us = args.idle_timeout_us
    if cfg.scenario is not None and not Path(cfg.scenario).is_file():
        raise ConfigError(f"scenario file not found: {cfg.scenario}")
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "extract":
            cmd_extract(cfg, args.pcap)
        elif args.command == "featurize":
            cmd_featurize(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg)
        elif args.command == "report":
            cmd_report(cfg)
    except (ConfigError, MissingArtifact, PcapError, ValueError, OSError) as e:
        log.error("error: %s", e)
        emit("error", command=args.command, kind=type(e).__name__, message=str(e))
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
