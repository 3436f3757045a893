#!/usr/bin/env python3
"""Export a Planetoid `ind.<name>.*` dataset to the plain TSV layout.

The output directory can be turned into an NGDF dataset with

    gnnkit convert --from tsv --input OUT --out DATASET_DIR --name <name>

Node order, feature rows and the standard semi-supervised split
(train = first labeled block, val = the next 500 nodes, test = test.index)
follow the usual Planetoid preprocessing. Test-range gaps (CiteSeer has a
few isolated nodes without test features) become all-zero, unlabeled rows.
"""
import argparse
import os
import pickle
import sys

import numpy as np
import scipy.sparse as sp


def load(prefix, what):
    with open(f"{prefix}.{what}", "rb") as f:
        return pickle.load(f, encoding="latin1")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--raw", required=True, help="directory holding ind.<name>.* files")
    ap.add_argument("--name", required=True)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    prefix = os.path.join(args.raw, f"ind.{args.name}")
    x, y, tx, ty, allx, ally, graph = (
        load(prefix, w) for w in ["x", "y", "tx", "ty", "allx", "ally", "graph"]
    )
    with open(f"{prefix}.test.index") as f:
        test_idx_reorder = [int(line) for line in f if line.strip()]
    test_idx_range = np.sort(test_idx_reorder)

    if args.name == "citeseer":
        full = range(min(test_idx_reorder), max(test_idx_reorder) + 1)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[test_idx_range - min(test_idx_range), :] = tx
        tx = tx_ext
        ty_ext = np.zeros((len(full), y.shape[1]))
        ty_ext[test_idx_range - min(test_idx_range), :] = ty
        ty = ty_ext

    features = sp.vstack((allx, tx)).tolil()
    features[test_idx_reorder, :] = features[test_idx_range, :]
    features = np.asarray(features.todense(), dtype=np.float32)
    onehot = np.vstack((ally, ty))
    onehot[test_idx_reorder, :] = onehot[test_idx_range, :]
    labels = np.where(onehot.sum(axis=1) > 0, onehot.argmax(axis=1), -1)

    n = features.shape[0]
    edges = set()
    for u, nbrs in graph.items():
        for v in nbrs:
            if u != v and u < n and v < n:
                edges.add((min(u, v), max(u, v)))

    train = list(range(y.shape[0]))
    val = list(range(y.shape[0], y.shape[0] + 500))
    test = [int(i) for i in test_idx_range]
    for idx in train + val + test:
        assert labels[idx] >= 0, f"split node {idx} is unlabeled"

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "edges.tsv"), "w") as f:
        f.write("u\tv\n")
        for u, v in sorted(edges):
            f.write(f"{u}\t{v}\n")
    with open(os.path.join(args.out, "features.tsv"), "w") as f:
        for row in features:
            f.write("\t".join(repr(float(v)) if v != 0 else "0" for v in row))
            f.write("\n")
    with open(os.path.join(args.out, "labels.tsv"), "w") as f:
        f.writelines(f"{int(l)}\n" for l in labels)
    for part, idx in [("train", train), ("val", val), ("test", test)]:
        with open(os.path.join(args.out, f"split_{part}.idx"), "w") as f:
            f.writelines(f"{i}\n" for i in idx)

    print(
        f"{args.name}: {n} nodes, {len(edges)} undirected edges, "
        f"{features.shape[1]} features, {int(labels.max()) + 1} classes, "
        f"splits {len(train)}/{len(val)}/{len(test)}",
        file=sys.stderr,
    )


if __name__ == "__main__":
    main()
