"""Link-prediction subtasks, ranking/classification metrics and node-classification protocols."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .encoder import ComplexEmbedding, EncoderConfig, encode, glorot, head_node_classifier, init_embeddings
from .graph import ConfigError, DiGraph, LinkSplit, Relation, classify_edges, sample_non_edges
from .objective import direction_probs, hermitian_score, supervised_ce_loss
from .trainer import NodeTask, TrainConfig, train

SUBTASKS = ("EP", "DP", "TP", "FP")
F, R, B, N = Relation.FORWARD, Relation.REVERSE, Relation.BIDIRECTIONAL, Relation.NO_EDGE
# prototype subsets used to decode each subtask, in output-column order
RESTRICT = {"EP": (F, R, B, N), "DP": (F, R), "TP": (F, R, N), "FP": (F, R, B, N)}


@dataclass
class SubtaskSpec:
    kind: str
    bidirectional_cap: int | None = None   # FP: at most this many bidirectional pairs

    def __post_init__(self):
        self.kind = self.kind.upper()
        if self.kind not in SUBTASKS:
            raise ConfigError(f"subtask must be one of {SUBTASKS}, got {self.kind!r}")


@dataclass
class LabeledPairs:
    """Ordered pairs with labels: 0/1 existence or direction for EP/DP, Relation codes for TP/FP."""
    kind: str
    pairs: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


def build_subtask_testset(split: LinkSplit, spec: SubtaskSpec | str, seed=0) -> LabeledPairs:
    spec = SubtaskSpec(spec) if isinstance(spec, str) else spec
    test = split.test_edges
    if not len(test):
        raise ValueError("no test edges")
    graph = split.graph
    rng = np.random.default_rng(seed)
    uni, bi = classify_edges(test, graph)
    kind = spec.kind
    if kind == "EP":
        n = len(test)
        n_rev = min(n // 2, len(uni))
        rev = uni[np.sort(rng.choice(len(uni), n_rev, replace=False))][:, ::-1] if n_rev else uni[:0]
        non = sample_non_edges(graph, n - n_rev, rng)
        pairs = np.concatenate([test, rev, non])
        return LabeledPairs(kind, pairs.astype(np.int64), np.r_[np.ones(n), np.zeros(n)].astype(np.int64))
    if not len(uni):
        raise ValueError(f"{kind} needs unidirectional test edges")
    n = len(uni)
    if kind == "DP":
        pairs = np.concatenate([uni, uni[:, ::-1]])
        return LabeledPairs(kind, pairs.astype(np.int64), np.r_[np.ones(n), np.zeros(n)].astype(np.int64))
    non = sample_non_edges(graph, n, rng)
    parts, labels = [uni, uni[:, ::-1], non], [F] * n + [R] * n + [N] * n
    if kind == "FP":
        cap = n if spec.bidirectional_cap is None else min(n, spec.bidirectional_cap)
        if len(bi) > cap:
            bi = bi[np.sort(rng.choice(len(bi), cap, replace=False))]
        parts.append(bi)
        labels += [B] * len(bi)
    return LabeledPairs(kind, np.concatenate(parts).astype(np.int64), np.array(labels, dtype=np.int64))


# ------------------------------------------------------------------ metrics

@dataclass
class MetricReport:
    kind: str
    n_samples: int
    acc: float | None = None
    auc: float | None = None
    macro_f1: float | None = None
    micro_f1: float | None = None
    confusion: list | None = None
    classes: list | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("acc", "auc", "macro_f1", "micro_f1"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def auc(scores, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney U statistic (ties count one half)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative samples")
    ranks = rankdata(scores, method="average")
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion_matrix(true, pred, num_classes: int) -> np.ndarray:
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (np.asarray(true, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return m


def per_class_f1(conf) -> np.ndarray:
    conf = np.asarray(conf, dtype=np.float64)
    tp = np.diag(conf)
    denom = conf.sum(0) + conf.sum(1)   # 2tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)


def f1_scores(conf) -> tuple[float, float]:
    """(macro, micro) F1 from a confusion matrix with true classes on rows."""
    conf = np.asarray(conf)
    if conf.ndim != 2 or conf.shape[0] != conf.shape[1]:
        raise ValueError("confusion matrix must be square")
    if np.any(conf < 0):
        raise ValueError("confusion counts must be nonnegative")
    total = conf.sum()
    micro = float(np.trace(conf) / total) if total else 0.0
    return float(per_class_f1(conf).mean()), micro


def _probs(emb: ComplexEmbedding, pairs: np.ndarray, restrict, distance: str) -> np.ndarray:
    emb = emb.detach()
    score = hermitian_score(emb, pairs[:, 0], pairs[:, 1])
    return direction_probs(score, distance, restrict).data


def subtask_scores(emb: ComplexEmbedding, testset: LabeledPairs, distance: str = "l1") -> np.ndarray:
    """EP: P(i) + P(1); DP: P(i) among {i, -i}; TP/FP: the restricted probability matrix."""
    p = _probs(emb, testset.pairs, RESTRICT[testset.kind], distance)
    if testset.kind == "EP":
        return p[:, 0] + p[:, 2]
    if testset.kind == "DP":
        return p[:, 0]
    return p


def score_subtask(emb: ComplexEmbedding, testset: LabeledPairs, distance: str = "l1") -> MetricReport:
    s = subtask_scores(emb, testset, distance)
    y = testset.labels
    if testset.kind in ("EP", "DP"):
        pred = (s > 0.5).astype(np.int64)
        conf = confusion_matrix(y, pred, 2)
        return MetricReport(testset.kind, len(y), acc=float(np.mean(pred == y)), auc=auc(s, y),
                            confusion=conf.tolist(), classes=["negative", "positive"])
    restrict = RESTRICT[testset.kind]
    pred = np.array(restrict)[s.argmax(1)]
    col = {int(r): i for i, r in enumerate(restrict)}
    conf = confusion_matrix([col[int(v)] for v in y], [col[int(v)] for v in pred], len(restrict))
    return MetricReport(testset.kind, len(y), acc=float(np.mean(pred == y)), confusion=conf.tolist(),
                        classes=[Relation(r).name for r in restrict])


def evaluate_link_prediction(emb: ComplexEmbedding, split: LinkSplit, kinds=SUBTASKS, seed=0,
                             distance: str = "l1") -> dict[str, MetricReport]:
    return {k: score_subtask(emb, build_subtask_testset(split, k, seed), distance) for k in kinds}


def degree_stratified_auc(emb: ComplexEmbedding, testset: LabeledPairs, graph: DiGraph, thresholds,
                          distance: str = "l1") -> list[dict]:
    """AUC over pairs whose source out-degree or target in-degree is at most ``t``.

    Degrees are taken from ``graph`` (the full graph). A stratum lacking either
    class is reported with ``empty=True`` and ``auc=None``.
    """
    if testset.kind != "EP":
        raise ValueError("degree stratification applies to EP test sets")
    s = subtask_scores(emb, testset, distance)
    u, v = testset.pairs[:, 0], testset.pairs[:, 1]
    out_deg, in_deg = graph.out_degree[u], graph.in_degree[v]
    rows = []
    for t in thresholds:
        keep = (out_deg <= t) | (in_deg <= t)
        y = testset.labels[keep]
        ok = 0 < y.sum() < len(y)
        rows.append({"threshold": t, "auc": auc(s[keep], y) if ok else None, "n": int(keep.sum()),
                     "empty": not ok})
    return rows


def write_strata_csv(path, rows: list[dict]):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "auc", "n"])
        for r in rows:
            w.writerow([r["threshold"], "" if r["auc"] is None else repr(r["auc"]), r["n"]])


# ------------------------------------------------------- node classification

@dataclass
class ProbeConfig:
    hidden: int = 128
    dropout: float = 0.5
    lr: float = 1e-2
    max_epochs: int = 1000
    patience: int = 50
    seed: int = 0
    standardize: bool = True


def _node_report(kind: str, true, pred, num_classes: int, extra=None) -> MetricReport:
    conf = confusion_matrix(true, pred, num_classes)
    macro, micro = f1_scores(conf)
    return MetricReport(kind, len(true), acc=micro, macro_f1=macro, micro_f1=micro,
                        confusion=conf.tolist(), extra=extra or {})


def transductive_probe(emb: ComplexEmbedding, labels, node_split, config: ProbeConfig | None = None) -> MetricReport:
    """Two-layer MLP on frozen ``[a; theta]`` features; early stopping on validation accuracy."""
    config = config or ProbeConfig()
    if labels is None:
        raise ConfigError("the probe needs node labels")
    labels = np.asarray(labels, dtype=np.int64)
    train, val, test = (np.asarray(x, dtype=np.int64) for x in node_split)
    a, t = emb.numpy()
    x = np.concatenate([a, t], axis=1)       # copy: the embedding is never touched
    if config.standardize:
        mu, sd = x[train].mean(0), x[train].std(0)
        x = (x - mu) / np.where(sd > 0, sd, 1.0)
    C = int(labels.max()) + 1
    rng = np.random.default_rng(config.seed)
    p = {"W1": Tensor(glorot(rng, x.shape[1], config.hidden), requires_grad=True),
         "b1": Tensor(np.zeros((1, config.hidden)), requires_grad=True),
         "W2": Tensor(glorot(rng, config.hidden, C), requires_grad=True),
         "b2": Tensor(np.zeros((1, C)), requires_grad=True)}
    opt = Adam(p, lr=config.lr)

    def logits(rows, training):
        h = ad.relu(Tensor(x[rows]) @ p["W1"] + p["b1"])
        h = ad.dropout(h, config.dropout, training, rng)
        return h @ p["W2"] + p["b2"]

    best, best_state, best_epoch = -1.0, None, 0
    for epoch in range(config.max_epochs):
        loss = supervised_ce_loss(logits(train, True), labels[train])
        loss.backward()
        opt.step()
        acc = float(np.mean(logits(val, False).data.argmax(1) == labels[val])) if len(val) else 0.0
        if acc > best or best_state is None:
            best, best_state, best_epoch = acc, {k: v.data.copy() for k, v in p.items()}, epoch
        elif epoch - best_epoch >= config.patience:
            break
    for k, arr in best_state.items():
        p[k].data[...] = arr
    pred = logits(test, False).data.argmax(1)
    return _node_report("nc-trans", labels[test], pred, C, {"best_epoch": best_epoch, "val_acc": best})


def train_inductive(graph: DiGraph, node_split, enc_config: EncoderConfig, train_config: TrainConfig):
    """Supervised training on the subgraph induced by train and validation nodes.

    Test nodes and every edge touching them are absent. Returns
    ``(params, log)``.
    """
    if graph.features is None:
        raise ConfigError("the inductive protocol needs node attributes")
    if graph.labels is None:
        raise ConfigError("the inductive protocol needs node labels")
    tr, va, _ = (np.asarray(x, dtype=np.int64) for x in node_split)
    sub, kept = graph.subgraph(np.concatenate([tr, va]))
    local = np.full(graph.num_nodes, -1, dtype=np.int64)
    local[kept] = np.arange(len(kept))
    task = NodeTask(sub, local[tr], local[va])
    params, _, trace = train(task, init_embeddings(sub, enc_config.dim, "features"), enc_config, train_config)
    return params, trace


def score_inductive(graph: DiGraph, test_nodes, enc_config: EncoderConfig, params) -> MetricReport:
    """Encode the full graph with trained parameters and score the test nodes."""
    te = np.asarray(test_nodes, dtype=np.int64)
    emb = encode(graph, init_embeddings(graph, enc_config.dim, "features"), enc_config, params).detach()
    pred = head_node_classifier(emb, params, te).data.argmax(1)
    return _node_report("nc-ind", graph.labels[te], pred, int(graph.labels.max()) + 1)


def inductive_protocol(graph: DiGraph, node_split, enc_config: EncoderConfig,
                       train_config: TrainConfig) -> MetricReport:
    """Supervised node classification where test nodes are unseen during training."""
    params, trace = train_inductive(graph, node_split, enc_config, train_config)
    report = score_inductive(graph, node_split[2], enc_config, params)
    report.extra["best_epoch"] = trace.best_epoch
    return report
