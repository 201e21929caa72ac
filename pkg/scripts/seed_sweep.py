"""Test accuracy of every model across several seeds on the bundled scenario.

The seed drives the traffic, the split and the weight init, so the spread
shows how much the desk-scale numbers depend on one draw.

    python3 scripts/seed_sweep.py --seeds 22,23,24
"""

import argparse

import numpy as np

from flowsentry import cli
from flowsentry.features import build_dataset
from flowsentry.metrics import confusion, metrics
from flowsentry.pcap import flow_assemble
from flowsentry.scansim import label_from_ground_truth
from flowsentry.scenario import run_scenario


def accuracy_table(seed, kinds):
    cfg = cli.RunConfig(seed=seed)
    packets, truth = run_scenario(cfg.scenario_obj())
    flows = label_from_ground_truth(flow_assemble(packets, cfg.idle_timeout_us), truth)
    ds = build_dataset(flows, seed=seed)
    (xtr, ytr), (xte, yte) = ds.train, ds.test
    out = {}
    for kind in kinds:
        env, _ = cli.train_model(kind, cfg, xtr, ytr)
        preds, _ = cli.score_model(env, xte)
        out[kind] = metrics(confusion(preds, yte)).accuracy
    return len(flows), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default="22,23,24")
    ap.add_argument("--models", default=",".join(cli.MODEL_KINDS))
    args = ap.parse_args()
    kinds = args.models.split(",")

    rows = []
    print("seed   flows " + "".join(f"{k:>9}" for k in kinds))
    for seed in map(int, args.seeds.split(",")):
        n, acc = accuracy_table(seed, kinds)
        rows.append([acc[k] for k in kinds])
        print(f"{seed:<6}{n:>6} " + "".join(f"{acc[k]:>9.4f}" for k in kinds))
    a = np.array(rows)
    print(f"{'min':<13}" + "".join(f"{v:>9.4f}" for v in a.min(axis=0)))


if __name__ == "__main__":
    main()
