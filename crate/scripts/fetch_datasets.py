#!/usr/bin/env python3
"""Download Cora, Citeseer and Texas and convert them to the hopflow layout.

Each dataset directory gets edges.tsv, features.bin (HGF1), labels.tsv and
splits/split-NN.json holding the ten public 48/32/20 splits.

    python3 scripts/fetch_datasets.py --out data cora citeseer texas

Needs numpy and scipy.
"""

import argparse
import io
import json
import pickle
import struct
import sys
import urllib.request
from pathlib import Path

import numpy as np
import scipy.sparse as sp

PLANETOID = "https://raw.githubusercontent.com/kimiyoung/planetoid/master/data"
GEOM_GCN = "https://raw.githubusercontent.com/graphdml-uiuc-jlu/geom-gcn/master"


def fetch(url):
    print(f"  {url}", file=sys.stderr)
    with urllib.request.urlopen(url, timeout=60) as r:
        return r.read()


def load_planetoid(name):
    parts = {}
    for key in ["x", "y", "tx", "ty", "allx", "ally", "graph"]:
        raw = fetch(f"{PLANETOID}/ind.{name}.{key}")
        parts[key] = pickle.load(io.BytesIO(raw), encoding="latin1")
    test_idx = [int(v) for v in fetch(f"{PLANETOID}/ind.{name}.test.index").split()]
    test_sorted = np.sort(test_idx)

    tx, ty = parts["tx"], parts["ty"]
    if name == "citeseer":
        # Some test ids have no features; pad them with zero rows.
        full = range(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[test_sorted - test_sorted.min(), :] = tx
        ty_ext = np.zeros((len(full), ty.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        tx, ty = tx_ext, ty_ext

    feats = sp.vstack((parts["allx"], tx)).tolil()
    feats[test_idx, :] = feats[test_sorted, :]
    onehot = np.vstack((parts["ally"], ty))
    onehot[test_idx, :] = onehot[test_sorted, :]

    n = feats.shape[0]
    labels = np.where(onehot.sum(1) > 0, onehot.argmax(1), -1)
    edges = set()
    for u, nbrs in parts["graph"].items():
        for v in nbrs:
            if u != v and u < n and v < n:
                edges.add((min(u, v), max(u, v)))
    return np.asarray(feats.todense(), dtype=np.float32), labels, sorted(edges)


def load_texas():
    text = fetch(f"{GEOM_GCN}/new_data/texas/out1_node_feature_label.txt").decode()
    rows = {}
    for line in text.splitlines()[1:]:
        node, feat, label = line.split("\t")
        rows[int(node)] = ([float(v) for v in feat.split(",")], int(label))
    n = len(rows)
    feats = np.array([rows[i][0] for i in range(n)], dtype=np.float32)
    labels = np.array([rows[i][1] for i in range(n)])
    text = fetch(f"{GEOM_GCN}/new_data/texas/out1_graph_edges.txt").decode()
    edges = set()
    for line in text.splitlines()[1:]:
        u, v = map(int, line.split("\t"))
        if u != v:
            edges.add((min(u, v), max(u, v)))
    return feats, labels, sorted(edges)


def load_splits(name):
    out = []
    for i in range(10):
        raw = fetch(f"{GEOM_GCN}/splits/{name}_split_0.6_0.2_{i}.npz")
        z = np.load(io.BytesIO(raw))
        out.append({part: np.flatnonzero(z[f"{part}_mask"]).tolist() for part in ["train", "val", "test"]})
    return out


def write(out, feats, labels, edges, splits):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "edges.tsv", "w") as f:
        f.writelines(f"{u}\t{v}\n" for u, v in edges)
    with open(out / "labels.tsv", "w") as f:
        f.writelines(f"{i}\t{y}\n" for i, y in enumerate(labels) if y >= 0)
    with open(out / "features.bin", "wb") as f:
        f.write(b"HGF1" + struct.pack("<QQ", *feats.shape))
        f.write(feats.astype("<f4").tobytes())
    (out / "splits").mkdir(exist_ok=True)
    for i, s in enumerate(splits):
        (out / "splits" / f"split-{i:02}.json").write_text(json.dumps(s))
    print(f"{out}: {feats.shape[0]} nodes, {len(edges)} edges, {feats.shape[1]} features")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path("data"))
    ap.add_argument("datasets", nargs="*", default=["cora", "citeseer", "texas"])
    args = ap.parse_args()
    for name in args.datasets:
        print(f"fetching {name}", file=sys.stderr)
        if name in ("cora", "citeseer"):
            feats, labels, edges = load_planetoid(name)
        elif name == "texas":
            feats, labels, edges = load_texas()
        else:
            sys.exit(f"unknown dataset {name!r}")
        write(args.out / name, feats, labels, edges, load_splits(name))


if __name__ == "__main__":
    main()
