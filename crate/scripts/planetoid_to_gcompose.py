#!/usr/bin/env python3
"""Convert the raw Planetoid files (ind.<name>.x, .tx, .allx, .y, .ty, .ally,
.graph, .test.index) into a gcompose dataset directory.

    python3 scripts/planetoid_to_gcompose.py --raw planetoid/data --name cora --out data/cora

Needs numpy and scipy. The standard split is written as well: the first
20 * classes nodes train, the next 500 validate, and the listed test ids test.
"""

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load(raw: Path, name: str, part: str):
    with open(raw / f"ind.{name}.{part}", "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--raw", type=Path, required=True, help="directory with ind.<name>.* files")
    ap.add_argument("--name", required=True, help="cora, citeseer or pubmed")
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()

    x, y, tx, ty, allx, ally, graph = (load(args.raw, args.name, p) for p in ("x", "y", "tx", "ty", "allx", "ally", "graph"))
    test_idx = [int(l) for l in (args.raw / f"ind.{args.name}.test.index").read_text().split()]
    test_sorted = np.sort(test_idx)

    # Citeseer lists test ids with no features; pad them with empty rows.
    full = range(test_sorted.min(), test_sorted.max() + 1)
    if len(full) != len(test_sorted):
        missing = len(full) - len(test_sorted)
        print(f"warning: {missing} isolated test ids without features; they get class 0", file=sys.stderr)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[test_sorted - test_sorted.min(), :] = tx
        tx = tx_ext
        ty_ext = np.zeros((len(full), ty.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        ty = ty_ext

    features = sp.vstack((allx, tx)).tolil()
    features[test_idx, :] = features[test_sorted, :]
    labels = np.vstack((ally, ty))
    labels[test_idx, :] = labels[test_sorted, :]
    labels = labels.argmax(axis=1)

    n, d = features.shape
    m = int(labels.max()) + 1
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.txt").write_text(f"nodes {n}\nfeatures {d}\nclasses {m}\n")

    edges = set()
    for u, nbrs in graph.items():
        for v in nbrs:
            if u != v and u < n and v < n:
                edges.add((min(u, v), max(u, v)))
    with open(out / "graph.txt", "w") as fh:
        for u, v in sorted(edges):
            fh.write(f"{u} {v}\n")

    coo = sp.coo_matrix(features)
    order = np.lexsort((coo.col, coo.row))
    with open(out / "features.txt", "w") as fh:
        for k in order:
            fh.write(f"{coo.row[k]} {coo.col[k]} {coo.data[k]:g}\n")

    with open(out / "labels.txt", "w") as fh:
        for i, c in enumerate(labels):
            fh.write(f"{i} {c}\n")

    train = range(len(y))
    val = range(len(y), len(y) + 500)
    with open(out / "standard_split.txt", "w") as fh:
        for section, ids in (("train", train), ("val", val), ("test", sorted(test_idx))):
            fh.write(f"{section}:\n")
            ids = list(ids)
            for i in range(0, len(ids), 20):
                fh.write(" ".join(map(str, ids[i : i + 20])) + "\n")

    print(f"{args.name}: {n} nodes, {len(edges)} edges, {d} features, {m} classes -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
