"""Dataset ingestion and on-disk formats (edge lists, attribute CSVs, splits, embeddings)."""
from __future__ import annotations

import csv
import json
import logging
import os
from pathlib import Path

import numpy as np

from .graph import DiGraph, LinkSplit

log = logging.getLogger(__name__)

DATA_ENV = "DUPLEX_DATA_DIR"


class ParseError(ValueError):
    pass


def load_edge_list(path, num_nodes: int | None = None) -> DiGraph:
    """Read ``src dst`` integer pairs, one per line; ``#`` starts a comment line.

    With ``num_nodes`` the ids are used as-is and must be below it. Without it,
    the ids that occur are remapped to ``0..n-1`` in increasing order.
    """
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            tok = s.split()
            if len(tok) < 2:
                raise ParseError(f"{path}:{lineno}: expected 'src dst', got {s!r}")
            try:
                pairs.append((int(tok[0]), int(tok[1])))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer node id in {s!r}") from None
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    if num_nodes is not None:
        if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
            raise IndexError(f"{path}: node id {int(edges.max())} out of range for {num_nodes} nodes")
        n = num_nodes
    else:
        ids, edges = np.unique(edges, return_inverse=True)
        edges = edges.reshape(-1, 2)
        n = len(ids)
    return DiGraph.from_edges(n, edges)


def write_edge_list(path, edges):
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in np.asarray(edges).reshape(-1, 2):
            fh.write(f"{u}\t{v}\n")


def load_features_labels(path, graph: DiGraph) -> DiGraph:
    """Attach features and labels from CSV rows ``node_id,label,f_1,...,f_f``."""
    feats: dict[int, list[float]] = {}
    labels: dict[int, int] = {}
    width = None
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if lineno == 1 and not row[0].strip().lstrip("-").isdigit():
                continue  # header
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            try:
                node = int(row[0])
                labels[node] = int(row[1])
                feats[node] = [float(x) for x in row[2:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    missing = sorted(set(range(graph.num_nodes)) - set(feats))
    if missing:
        raise ParseError(f"{path}: no rows for nodes {missing[:20]}{' ...' if len(missing) > 20 else ''}")
    x = np.array([feats[i] for i in range(graph.num_nodes)], dtype=np.float64)
    y = np.array([labels[i] for i in range(graph.num_nodes)], dtype=np.int64)
    return graph.with_attributes(x.reshape(graph.num_nodes, -1), y)


def write_features_labels(path, graph: DiGraph):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        for i in range(graph.num_nodes):
            w.writerow([i, int(graph.labels[i]), *(repr(float(v)) for v in graph.features[i])])


def load_npz(path) -> DiGraph:
    """Load the sparse ``.npz`` layout used by the common Cora-ml/Citeseer releases.

    Keys: ``adj_data/adj_indices/adj_indptr/adj_shape``, optional
    ``attr_data/attr_indices/attr_indptr/attr_shape`` (or dense
    ``attr_matrix``) and ``labels``.
    """
    import scipy.sparse as sp

    with np.load(path, allow_pickle=True) as z:
        adj = sp.csr_matrix((z["adj_data"], z["adj_indices"], z["adj_indptr"]), shape=tuple(z["adj_shape"]))
        feats = None
        if "attr_data" in z:
            feats = sp.csr_matrix((z["attr_data"], z["attr_indices"], z["attr_indptr"]),
                                  shape=tuple(z["attr_shape"])).toarray()
        elif "attr_matrix" in z:
            feats = np.asarray(z["attr_matrix"], dtype=np.float64)
        labels = np.asarray(z["labels"], dtype=np.int64) if "labels" in z else None
    coo = adj.tocoo()
    edges = np.stack([coo.row, coo.col], axis=1)
    return DiGraph.from_edges(adj.shape[0], edges, feats, labels)


def load_linqs(content_path, cites_path) -> DiGraph:
    """Load the LINQS ``.content``/``.cites`` pair (Cora, Citeseer).

    ``.cites`` lines are ``cited citing``; edges point from the citing paper to
    the cited one. Citations that mention papers absent from ``.content`` are
    dropped.
    """
    ids, rows, names = [], [], []
    with open(content_path, encoding="utf-8") as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            ids.append(tok[0])
            rows.append([float(t) for t in tok[1:-1]])
            names.append(tok[-1])
    index = {k: i for i, k in enumerate(ids)}
    classes = {c: i for i, c in enumerate(sorted(set(names)))}
    edges, dropped = [], 0
    with open(cites_path, encoding="utf-8") as fh:
        for line in fh:
            tok = line.split()
            if len(tok) < 2:
                continue
            cited, citing = tok[0], tok[1]
            if cited in index and citing in index:
                edges.append((index[citing], index[cited]))
            else:
                dropped += 1
    if dropped:
        log.info("dropped %d citations to unknown papers", dropped)
    return DiGraph.from_edges(len(ids), edges, np.array(rows), np.array([classes[c] for c in names]))


def data_dir() -> Path:
    return Path(os.environ.get(DATA_ENV, "data"))


def resolve_dataset(name_or_path) -> tuple[str, list[Path]]:
    """Find the files backing a dataset, by path or by name under ``$DUPLEX_DATA_DIR``.

    A name ``foo`` is looked up as ``foo.npz``, ``foo/foo.content`` +
    ``foo/foo.cites``, or ``foo.edges`` (+ optional ``foo.csv`` attributes).
    Returns the format tag and the files.
    """
    p = Path(name_or_path)
    root = data_dir()
    stem = p.stem if p.suffix else p.name
    npz = ([p] if p.suffix == ".npz" else []) + [p / f"{p.name}.npz", root / f"{stem}.npz",
                                                  root / stem / f"{stem}.npz"]
    for c in npz:
        if c.is_file():
            return "npz", [c]
    for base in (p if p.is_dir() else root / stem, root):
        content, cites = base / f"{stem}.content", base / f"{stem}.cites"
        if content.is_file() and cites.is_file():
            return "linqs", [content, cites]
    plain = ([p] if p.suffix not in ("", ".npz") else []) + [root / f"{stem}.edges", root / f"{stem}.txt"]
    for c in plain:
        if c.is_file():
            attrs = c.with_suffix(".csv")
            return "edges", [c] + ([attrs] if attrs.is_file() and attrs != c else [])
    raise FileNotFoundError(f"dataset {str(name_or_path)!r} not found (looked under {root})")


def load_dataset(name_or_path) -> DiGraph:
    kind, files = resolve_dataset(name_or_path)
    if kind == "npz":
        return load_npz(files[0])
    if kind == "linqs":
        return load_linqs(*files)
    g = load_edge_list(files[0])
    return load_features_labels(files[1], g) if len(files) > 1 else g


# ------------------------------------------------------------------- splits

def save_split(split: LinkSplit, out_dir, force: bool = False):
    out = Path(out_dir)
    names = ["train.edges", "val.edges", "test.edges", "split.json"]
    if not force and any((out / n).exists() for n in names):
        raise FileExistsError(f"{out} already holds a split; pass force=True to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    write_edge_list(out / "train.edges", split.train_edges)
    write_edge_list(out / "val.edges", split.val_edges)
    write_edge_list(out / "test.edges", split.test_edges)
    manifest = {"seed": split.seed, "ratio": list(split.ratio), "counts": split.counts,
                "num_nodes": split.graph.num_nodes}
    (out / "split.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def load_split(out_dir, graph: DiGraph) -> LinkSplit:
    out = Path(out_dir)
    manifest = json.loads((out / "split.json").read_text())
    if manifest.get("num_nodes", graph.num_nodes) != graph.num_nodes:
        raise ValueError("split was made for a graph with a different node count")

    def read(name):
        return load_edge_list(out / name, num_nodes=graph.num_nodes).edges

    split = LinkSplit(read("train.edges"), read("val.edges"), read("test.edges"), graph,
                      manifest["seed"], tuple(manifest["ratio"]))
    if split.counts != manifest["counts"]:
        raise ValueError(f"split files disagree with manifest counts {manifest['counts']}")
    return split


# --------------------------------------------------------------- embeddings

def write_embeddings(path, amplitude: np.ndarray, phase: np.ndarray):
    n, d = amplitude.shape
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"a_{k + 1}" for k in range(d)] + [f"theta_{k + 1}" for k in range(d)])
        for i in range(n):
            w.writerow([i, *(repr(float(x)) for x in amplitude[i]), *(repr(float(x)) for x in phase[i])])


def read_embeddings(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        d = sum(h.startswith("a_") for h in header)
        if len(header) != 1 + 2 * d:
            raise ParseError(f"{path}: header does not describe a_1..a_d, theta_1..theta_d")
        rows = np.array([[float(x) for x in row[1:]] for row in r], dtype=np.float64).reshape(-1, 2 * d)
    return rows[:, :d], rows[:, d:]
