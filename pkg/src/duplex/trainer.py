"""Training loops, early stopping, telemetry and checkpoints."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .encoder import (ComplexEmbedding, EncoderConfig, Params, encode, head_edge_classifier,
                      head_node_classifier, init_edge_head, init_node_head, init_params)
from .graph import PROTOTYPES, ConfigError, DiGraph, LinkSplit, Relation, SampleBatch, heldout_batch, sample_batch
from .objective import LossSchedule, direction_loss, hermitian_score, lambda_at, supervised_ce_loss, total_loss

log = logging.getLogger(__name__)

MODES = ("self-supervised", "supervised-S", "supervised-nc")
HAM_MSE_CAP = 100_000
# Stream tags mixed into SeedSequence so different consumers never share draws.
_VAL_STREAM, _HAM_STREAM, _HEAD_STREAM = 1_000_003, 1_000_033, 1_000_037


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    max_epochs: int = 3000
    lr: float = 1e-3
    patience: int = 50
    eval_every: int = 5
    seed: int = 0
    mode: str = "self-supervised"
    schedule: LossSchedule = field(default_factory=LossSchedule)
    distance: str = "l1"
    batch: int | None = None          # None = full batch
    bidirectional_ratio: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.max_epochs < 0 or self.eval_every < 1:
            raise ConfigError("max_epochs must be >= 0 and eval_every >= 1")
        if not 0 <= self.patience <= max(self.max_epochs, 0):
            raise ConfigError(f"patience must lie in [0, max_epochs], got {self.patience}")
        if self.distance not in ("l1", "l2"):
            raise ConfigError(f"distance must be 'l1' or 'l2', got {self.distance!r}")
        if self.batch is not None and self.batch < 1:
            raise ConfigError("batch size must be positive")

    @property
    def higher_is_better(self) -> bool:
        return self.mode != "self-supervised"


def _seed(*parts) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(p) for p in parts]))


# ------------------------------------------------------------------ telemetry

LOG_FIELDS = ("epoch", "train_loss", "val_metric", "lambda", "ham_mse", "wall_ms")


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False

    def append(self, **rec):
        if self.records and rec["epoch"] <= self.records[-1]["epoch"]:
            raise ValueError("log epochs must be strictly increasing")
        self.records.append({k: rec[k] for k in LOG_FIELDS})

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=np.float64)

    def at(self, epoch: int) -> dict:
        for r in self.records:
            if r["epoch"] == epoch:
                return r
        raise KeyError(epoch)

    def deterministic_view(self) -> list[tuple]:
        """Records without wall-clock time, for reproducibility comparisons."""
        return [tuple(r[k] for k in LOG_FIELDS if k != "wall_ms") for r in self.records]

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_FIELDS)
            for r in self.records:
                w.writerow([r["epoch"], *(repr(float(r[k])) for k in LOG_FIELDS[1:])])


def ham_mse(emb: ComplexEmbedding, sample: SampleBatch) -> float:
    """Mean of ``|H_hat(u, v) - H(u, v)|^2`` over the sampled pairs."""
    if not len(sample):
        raise ValueError("empty sample")
    a, t = emb.numpy()
    u, v = sample.pairs[:, 0], sample.pairs[:, 1]
    mag = a[u] * a[v]
    ang = 0.5 * np.pi * (t[u] - t[v])
    score = (mag * np.cos(ang)).sum(1) + 1j * (mag * np.sin(ang)).sum(1)
    target = np.array([PROTOTYPES[Relation(r)] for r in range(4)])[sample.labels]
    return float(np.mean(np.abs(score - target) ** 2))


def _first_nonfinite_op(t: Tensor) -> str:
    seen, stack, bad = set(), [t], []
    while stack:
        x = stack.pop()
        if id(x) in seen:
            continue
        seen.add(id(x))
        if not np.all(np.isfinite(x.data)):
            bad.append(x)
        stack.extend(x._parents)
    return min(bad, key=lambda x: x._id).op if bad else "unknown"


# -------------------------------------------------------------- checkpoints

def config_hash(config: dict | None) -> str:
    return hashlib.sha256(json.dumps(config or {}, sort_keys=True).encode()).hexdigest()


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    base = p.with_suffix("") if p.suffix in (".json", ".bin") else p
    return base.with_suffix(".json"), base.with_suffix(".bin")


def save_checkpoint(params: Params, path, config: dict | None = None, seed: int | None = None) -> Path:
    """Write ``<path>.json`` (names, shapes, offsets, config hash, seed) and ``<path>.bin``."""
    manifest_path, blob_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(blob_path, "wb") as fh:
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name].data, dtype="<f8")
            fh.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
    manifest = {"format": "duplex-ckpt-1", "dtype": "float64-le", "tensors": entries,
                "config": config, "config_hash": config_hash(config), "seed": seed}
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path


def load_checkpoint(path, expected: Params | None = None, config: dict | None = None) -> Params:
    """Read a checkpoint. ``expected`` names/shapes must match exactly; a differing
    ``config`` only warns."""
    manifest_path, blob_path = _paths(path)
    manifest = json.loads(manifest_path.read_text())
    blob = np.fromfile(blob_path, dtype="<f8")
    out: Params = {}
    for e in manifest["tensors"]:
        size = int(np.prod(e["shape"]))
        if e["offset"] + size > blob.size:
            raise ValueError(f"checkpoint blob truncated at tensor {e['name']}")
        out[e["name"]] = Tensor(blob[e["offset"]:e["offset"] + size].reshape(e["shape"]).copy(),
                                requires_grad=True)
    if expected is not None:
        problems = [f"{k}: missing" for k in sorted(set(expected) - set(out))]
        problems += [f"{k}: unexpected" for k in sorted(set(out) - set(expected))]
        problems += [f"{k}: shape {out[k].shape} != {expected[k].shape}"
                     for k in sorted(set(out) & set(expected)) if out[k].shape != expected[k].shape]
        if problems:
            raise ValueError("checkpoint does not match model: " + "; ".join(problems))
    if config is not None and config_hash(config) != manifest.get("config_hash"):
        warnings.warn("checkpoint was written under a different config")
    return out


def manifest_of(path) -> dict:
    return json.loads(_paths(path)[0].read_text())


# ------------------------------------------------------------------ training

@dataclass
class NodeTask:
    """Labelled nodes for supervised node classification on ``graph``."""
    graph: DiGraph
    train: np.ndarray
    val: np.ndarray

    def __post_init__(self):
        if self.graph.labels is None:
            raise ConfigError("node classification needs labels")
        self.train = np.asarray(self.train, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=np.int64)
        if not len(self.train):
            raise ValueError("no training nodes")

    @property
    def num_classes(self) -> int:
        return int(self.graph.labels.max()) + 1


def _snapshot(params: Params) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in params.items()}


def _chunks(n: int, size: int | None, rng: np.random.Generator):
    if size is None or size >= n:
        yield np.arange(n)
        return
    order = rng.permutation(n)
    for s in range(0, n, size):
        yield np.sort(order[s:s + size])


def train(data, init: ComplexEmbedding, enc_config: EncoderConfig, config: TrainConfig):
    """Fit encoder (and head) parameters; returns ``(params, embedding, log)``.

    ``data`` is a :class:`LinkSplit` for the self-supervised and supervised-S
    modes and a :class:`NodeTask` for supervised-nc. Log entry ``k`` describes
    the parameters after ``k`` updates; the returned parameters are those of
    the best validation entry.
    """
    mode = config.mode
    if mode == "supervised-nc":
        if not isinstance(data, NodeTask):
            raise ConfigError("supervised-nc mode needs a NodeTask")
        graph = data.graph
    else:
        if not isinstance(data, LinkSplit):
            raise ConfigError(f"{mode} mode needs a LinkSplit")
        if not len(data.train_edges):
            raise ValueError("empty training edge set")
        graph = data.train_graph
    if init.num_nodes != graph.num_nodes:
        raise ConfigError(f"init has {init.num_nodes} rows for a {graph.num_nodes}-node graph")

    params = init_params(enc_config, config.seed)
    head_seed = np.random.SeedSequence([config.seed, _HEAD_STREAM]).generate_state(1)[0]
    if mode == "supervised-S":
        params.update(init_edge_head(enc_config.dim, head_seed))
    elif mode == "supervised-nc":
        params.update(init_node_head(enc_config.dim, data.num_classes, head_seed))
    opt = Adam(params, lr=config.lr)

    # fixed evaluation material
    if mode == "supervised-nc":
        val_nodes = data.val if len(data.val) else data.train
        probe = None
    else:
        val_edges = data.val_edges if len(data.val_edges) else data.train_edges
        val_graph = data.graph if len(data.val_edges) else graph
        val_batch = heldout_batch(val_edges, val_graph, _seed(config.seed, _VAL_STREAM))
        probe = sample_batch(data, 1.0, _seed(config.seed, _HAM_STREAM))
        if len(probe) > HAM_MSE_CAP:
            keep = np.sort(_seed(config.seed, _HAM_STREAM, 1).choice(len(probe), HAM_MSE_CAP, replace=False))
            probe = probe.subset(keep)

    def forward(training: bool, rng=None) -> ComplexEmbedding:
        return encode(graph, init, enc_config, params, training=training, rng=rng)

    def objective(emb: ComplexEmbedding, epoch: int, rows, batch: SampleBatch | None) -> Tensor:
        if mode == "self-supervised":
            return total_loss(emb, batch.subset(rows), config.schedule, epoch, config.distance)[0]
        if mode == "supervised-S":
            sub = batch.subset(rows)
            return supervised_ce_loss(head_edge_classifier(emb, sub.pairs, params), sub.labels)
        nodes = data.train[rows]
        return supervised_ce_loss(head_node_classifier(emb, params, nodes), data.graph.labels[nodes])

    def validate(emb: ComplexEmbedding) -> float:
        if mode == "self-supervised":
            return direction_loss(emb, val_batch, config.distance).item()
        if mode == "supervised-S":
            pred = head_edge_classifier(emb, val_batch.pairs, params).data.argmax(1)
            return float(np.mean(pred == val_batch.labels))
        pred = head_node_classifier(emb, params, val_nodes).data.argmax(1)
        return float(np.mean(pred == data.graph.labels[val_nodes]))

    better = (lambda a, b: a > b) if config.higher_is_better else (lambda a, b: a < b)
    trace = TrainLog()
    best_val, best_state = None, _snapshot(params)
    t0 = time.perf_counter()

    for epoch in range(config.max_epochs + 1):
        rng = _seed(config.seed, epoch)
        batch = sample_batch(data, config.bidirectional_ratio, rng) if mode != "supervised-nc" else None
        n_rows = len(batch) if batch is not None else len(data.train)
        chunks = list(_chunks(n_rows, config.batch, rng))
        evaluating = epoch % config.eval_every == 0 or epoch == config.max_epochs

        if evaluating:
            emb = forward(False)
            val = validate(emb)
            with np.errstate(all="ignore"):
                full = objective(emb, epoch, np.arange(n_rows), batch)
            train_loss = full.item()
            if not np.isfinite(train_loss):
                raise TrainingError(f"epoch {epoch}: loss is {train_loss} (first non-finite op: "
                                    f"{_first_nonfinite_op(full)})")
            trace.append(epoch=epoch, train_loss=train_loss, val_metric=val,
                         **{"lambda": lambda_at(config.schedule, epoch) if mode == "self-supervised" else 0.0},
                         ham_mse=ham_mse(emb, probe) if probe is not None else float("nan"),
                         wall_ms=(time.perf_counter() - t0) * 1e3)
            if not np.isfinite(val):
                raise TrainingError(f"epoch {epoch}: non-finite validation metric")
            if best_val is None or better(val, best_val):
                best_val, best_state, trace.best_epoch = val, _snapshot(params), epoch
            elif epoch - trace.best_epoch >= config.patience:
                trace.stopped_early = True
                break
        if epoch == config.max_epochs:
            break

        for rows in chunks:
            with np.errstate(all="ignore"):
                loss = objective(forward(True, rng), epoch, rows, batch)
            if not np.isfinite(loss.item()):
                raise TrainingError(f"epoch {epoch}: loss is {loss.item()} (first non-finite op: "
                                    f"{_first_nonfinite_op(loss)})")
            loss.backward()
            opt.step()

    for k, arr in best_state.items():
        params[k].data[...] = arr
    log.info("best epoch %s (val %.6g) of %d", trace.best_epoch, best_val, trace.records[-1]["epoch"])
    return params, forward(False).detach(), trace
