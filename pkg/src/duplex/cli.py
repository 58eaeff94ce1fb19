"""``duplex`` command line: split, train, eval, export, gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .encoder import EncoderConfig, encode, init_embeddings, init_node_head, init_params
from .evaluation import (SUBTASKS, ProbeConfig, build_subtask_testset, degree_stratified_auc,
                         score_inductive, score_subtask, train_inductive, transductive_probe,
                         write_strata_csv)
from .graph import ConfigError, LinkSplit, split_edges, split_nodes
from .objective import LossSchedule
from .oracles import run_gradcheck
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

log = logging.getLogger("duplex")

TASKS = ("lp", "nc-trans", "nc-ind")

DEFAULTS: dict = {
    "data.dataset": None,
    "data.split_dir": None,
    "task": "lp",
    "seeds": [0],
    "out": "runs/duplex",
    "split.ratio": [16, 1, 3],
    "node_split.ratio": [3, 1, 1],
    "encoder.layers": 3,
    "encoder.dim": 128,
    "encoder.backbone": "gat",
    "encoder.fusion": "mid",
    "encoder.dropout": 0.5,
    "encoder.slope": 0.2,
    "encoder.phase_norm": "union",
    "encoder.init": "random",
    "train.max_epochs": 3000,
    "train.lr": 1e-3,
    "train.patience": 50,
    "train.eval_every": 5,
    "train.distance": "l1",
    "train.batch": None,
    "train.bidirectional_ratio": 1.0,
    "schedule.lambda0": 0.1,
    "schedule.q": 1e-2,
    "schedule.mode": "complement",
    "probe.hidden": 128,
    "probe.dropout": 0.5,
    "probe.lr": 1e-2,
    "probe.max_epochs": 1000,
    "probe.patience": 50,
    "eval.subtasks": list(SUBTASKS),
    "eval.degree_thresholds": [],
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULTS)))

    @classmethod
    def from_sources(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        cfg = cls()
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except FileNotFoundError:
                raise ConfigError(f"config file {path} not found") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
            if not isinstance(data, dict):
                raise ConfigError("config file must hold a JSON object of dotted keys")
            cfg.update(data)
        cfg.update({k: v for k, v in (overrides or {}).items() if v is not None})
        cfg.validate()
        return cfg

    def update(self, data: dict):
        unknown = sorted(set(data) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        self.values.update(data)

    def __getitem__(self, key):
        return self.values[key]

    def validate(self):
        if self["task"] not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self['task']!r}")
        bad = [s for s in self["eval.subtasks"] if s not in SUBTASKS]
        if bad:
            raise ConfigError(f"unknown subtasks {bad}; choose from {SUBTASKS}")
        if not self["seeds"]:
            raise ConfigError("at least one seed is needed")
        self.encoder_config()
        self.train_config(0)

    def encoder_config(self, in_dim: int | None = None) -> EncoderConfig:
        v = self.values
        return EncoderConfig(layers=v["encoder.layers"], dim=v["encoder.dim"], in_dim=in_dim,
                             backbone=v["encoder.backbone"], fusion=v["encoder.fusion"],
                             dropout=v["encoder.dropout"], slope=v["encoder.slope"],
                             phase_norm=v["encoder.phase_norm"])

    def schedule(self) -> LossSchedule:
        return LossSchedule(self["schedule.lambda0"], self["schedule.q"], self["schedule.mode"])

    def train_config(self, seed: int, mode: str = "self-supervised") -> TrainConfig:
        v = self.values
        return TrainConfig(max_epochs=v["train.max_epochs"], lr=v["train.lr"],
                           patience=min(v["train.patience"], v["train.max_epochs"]),
                           eval_every=v["train.eval_every"], seed=seed, mode=mode, schedule=self.schedule(),
                           distance=v["train.distance"], batch=v["train.batch"],
                           bidirectional_ratio=v["train.bidirectional_ratio"])

    def model_keys(self) -> dict:
        """The keys a checkpoint depends on; eval-time overrides leave these alone."""
        return {k: v for k, v in self.values.items() if k.split(".")[0] in ("encoder", "train", "schedule")
                or k == "task"}

    def probe_config(self, seed: int) -> ProbeConfig:
        v = self.values
        return ProbeConfig(hidden=v["probe.hidden"], dropout=v["probe.dropout"], lr=v["probe.lr"],
                           max_epochs=v["probe.max_epochs"], patience=v["probe.patience"], seed=seed)


def git_blob_hash(path) -> str:
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_manifest(out: Path, cfg: RunConfig, seeds, inputs, **extra) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config": cfg.values, "seeds": list(seeds),
                "inputs": {str(p): git_blob_hash(p) for p in inputs}, **extra}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


# ---------------------------------------------------------------- parsing

def parse_seeds(text: str) -> list[int]:
    """``3``, ``0,2,5`` or an inclusive range ``0..9``."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _csv(cast):
    def parse(text: str):
        try:
            return [cast(s.strip()) for s in text.split(",") if s.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _model_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file of dotted config keys")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--fusion", choices=("none", "early", "mid", "late", "all", "ews"))
    p.add_argument("--backbone", choices=("gat", "gcn"))
    p.add_argument("--distance", choices=("l1", "l2"))
    p.add_argument("--lambda0", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--decay-mode", choices=("complement", "power"))
    p.add_argument("--epochs", type=int, help="maximum training epochs")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="duplex", description="Complex-embedding directed graph learning.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="write a train/val/test edge split")
    p.add_argument("dataset", help="edge list path or dataset name under $DUPLEX_DATA_DIR")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratio", type=_csv(int), default=[16, 1, 3])
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("train", help="train and write checkpoint, embeddings and log")
    p.add_argument("dataset", nargs="?")
    _model_flags(p)
    seeds = p.add_mutually_exclusive_group()
    seeds.add_argument("--seed", type=int)
    seeds.add_argument("--seeds", type=parse_seeds)
    p.add_argument("--split", help="directory written by 'duplex split'")
    p.add_argument("--subtask", type=_csv(str.upper))
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("eval", help="evaluate a trained run")
    p.add_argument("run", help="run directory written by 'duplex train'")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--subtask", type=_csv(str.upper))
    p.add_argument("--degree-thresholds", type=_csv(int))
    p.add_argument("--distance", choices=("l1", "l2"))
    p.add_argument("--out")

    p = sub.add_parser("export", help="write per-node embeddings of a trained run")
    p.add_argument("run")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--ops", type=_csv(str), help="comma-separated subset of checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--list", action="store_true", help="list available checks")
    return ap


def _overrides(args) -> dict:
    get = lambda k: getattr(args, k, None)  # noqa: E731
    seeds = [get("seed")] if get("seed") is not None else get("seeds")
    return {"data.dataset": get("dataset"), "data.split_dir": get("split"), "task": get("task"),
            "seeds": seeds, "out": get("out"), "encoder.fusion": get("fusion"),
            "encoder.backbone": get("backbone"), "train.distance": get("distance"),
            "schedule.lambda0": get("lambda0"), "schedule.q": get("q"), "schedule.mode": get("decay_mode"),
            "train.max_epochs": get("epochs"), "eval.subtasks": get("subtask"),
            "eval.degree_thresholds": get("degree_thresholds")}


# --------------------------------------------------------------- commands

def cmd_split(args) -> int:
    _, files = io.resolve_dataset(args.dataset)
    graph = io.load_dataset(args.dataset)
    split = split_edges(graph, tuple(args.ratio), args.seed)
    out = Path(args.out)
    io.save_split(split, out, force=args.force)
    cfg = RunConfig.from_sources(None, {"data.dataset": str(args.dataset), "split.ratio": list(args.ratio),
                                        "seeds": [args.seed], "out": str(out)})
    write_manifest(out, cfg, [args.seed], files, command="split")
    print(f"split {graph.num_edges} edges -> train {len(split.train_edges)} / val {len(split.val_edges)} "
          f"/ test {len(split.test_edges)} in {out}")
    return 0


def _load_graph(cfg: RunConfig):
    if cfg["data.dataset"] is None:
        raise ConfigError("no dataset given (positional argument or data.dataset)")
    _, files = io.resolve_dataset(cfg["data.dataset"])
    return io.load_dataset(cfg["data.dataset"]), files


def _encoder_input(cfg: RunConfig, graph, seed: int):
    if cfg["encoder.init"] == "features" or cfg["task"] == "nc-ind":
        if graph.features is None:
            raise ConfigError("feature inputs requested but the dataset has no node attributes")
        return init_embeddings(graph, cfg["encoder.dim"], "features"), graph.features.shape[1]
    return init_embeddings(graph, cfg["encoder.dim"], "random", seed), None


def _link_split(cfg: RunConfig, graph, seed: int) -> LinkSplit:
    if cfg["data.split_dir"]:
        return io.load_split(cfg["data.split_dir"], graph)
    return split_edges(graph, tuple(cfg["split.ratio"]), seed)


def _check_task(cfg: RunConfig, graph):
    if cfg["task"] != "lp" and graph.labels is None:
        raise ConfigError(f"task {cfg['task']} needs node labels; the dataset has none")
    if cfg["task"] == "nc-ind" and graph.features is None:
        raise ConfigError("task nc-ind needs node attributes; the dataset has none")


def run_one(cfg: RunConfig, graph, seed: int, out: Path) -> dict:
    """Train one seed, write its artifacts and return its headline metrics."""
    task = cfg["task"]
    out.mkdir(parents=True, exist_ok=True)
    init, in_dim = _encoder_input(cfg, graph, seed)
    enc = cfg.encoder_config(in_dim)
    metrics: dict = {}
    if task == "nc-ind":
        nodes = split_nodes(graph, tuple(cfg["node_split.ratio"]), seed)
        params, trace = train_inductive(graph, nodes, enc, cfg.train_config(seed, "supervised-nc"))
        report = score_inductive(graph, nodes[2], enc, params)
        metrics = {"macro_f1": report.macro_f1, "micro_f1": report.micro_f1}
        reports = {"nc-ind": report.to_dict()}
    else:
        split = _link_split(cfg, graph, seed) if task == "lp" else LinkSplit.full(graph)
        params, emb, trace = train(split, init, enc, cfg.train_config(seed))
        if task == "lp":
            reports = {}
            for k in cfg["eval.subtasks"]:
                r = score_subtask(emb, build_subtask_testset(split, k, seed), cfg["train.distance"])
                reports[k] = r.to_dict()
                metrics[f"{k}_acc"] = r.acc
                if r.auc is not None:
                    metrics[f"{k}_auc"] = r.auc
            io.save_split(split, out / "split", force=True)
        else:
            nodes = split_nodes(graph, tuple(cfg["node_split.ratio"]), seed)
            report = transductive_probe(emb, graph.labels, nodes, cfg.probe_config(seed))
            metrics = {"macro_f1": report.macro_f1, "micro_f1": report.micro_f1}
            reports = {"nc-trans": report.to_dict()}
    if task == "nc-ind":
        emb = encode(graph, init, enc, params).detach()
    save_checkpoint(params, out / "checkpoint", cfg.model_keys(), seed)
    io.write_embeddings(out / "embeddings.csv", *emb.numpy())
    trace.to_csv(out / "trainlog.csv")
    (out / "report.json").write_text(json.dumps(reports, indent=2, sort_keys=True))
    return metrics


def cmd_train(args) -> int:
    cfg = RunConfig.from_sources(args.config, _overrides(args))
    graph, files = _load_graph(cfg)
    _check_task(cfg, graph)
    out = Path(cfg["out"])
    if (out / "manifest.json").exists() and not args.force:
        raise FileExistsError(f"{out} already holds a run; pass --force to overwrite")
    inputs = list(files)
    if cfg["data.split_dir"]:
        inputs += [Path(cfg["data.split_dir"]) / n for n in ("train.edges", "val.edges", "test.edges")]
    write_manifest(out, cfg, cfg["seeds"], inputs)
    rows = {}
    for seed in cfg["seeds"]:
        rows[seed] = run_one(cfg, graph, seed, out / f"seed{seed}")
        print(f"seed {seed}: " + " ".join(f"{k}={v:.4f}" for k, v in rows[seed].items()))
    if len(rows) > 1:
        keys = list(next(iter(rows.values())))
        print("metric            mean(std) over", len(rows), "seeds")
        summary = {}
        for k in keys:
            vals = np.array([r[k] for r in rows.values()]) * 100
            summary[k] = {"mean": float(vals.mean()), "std": float(vals.std())}
            print(f"{k:<17} {vals.mean():.1f}({vals.std():.1f})")
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _load_run(run_dir):
    run = Path(run_dir)
    if (run / "checkpoint.json").is_file():
        seed_dir, top = run, run.parent
    else:
        seeds = sorted(run.glob("seed*/checkpoint.json"))
        if not seeds:
            raise FileNotFoundError(f"no checkpoint under {run}")
        seed_dir, top = seeds[0].parent, run
    manifest = json.loads((top / "manifest.json").read_text())
    cfg = RunConfig.from_sources(None, manifest["config"])
    ckpt = json.loads((seed_dir / "checkpoint.json").read_text())
    return cfg, seed_dir, int(ckpt["seed"])


def _restore(cfg: RunConfig, graph, seed: int, seed_dir: Path, mode: str, on=None):
    """Load a checkpoint and encode ``on`` (default ``graph``); inputs are rebuilt from ``graph``."""
    init, in_dim = _encoder_input(cfg, graph, seed)
    enc = cfg.encoder_config(in_dim)
    expected = init_params(enc, 0)
    if mode == "supervised-nc":
        expected.update(init_node_head(enc.dim, int(graph.labels.max()) + 1))
    try:
        params = load_checkpoint(seed_dir / "checkpoint", expected, cfg.model_keys())
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return encode(on or graph, init, enc, params).detach(), enc, params


def _run_split(cfg: RunConfig, graph, seed: int, seed_dir: Path) -> LinkSplit:
    if (seed_dir / "split").is_dir():
        return io.load_split(seed_dir / "split", graph)
    return _link_split(cfg, graph, seed)


def cmd_eval(args) -> int:
    cfg, seed_dir, seed = _load_run(args.run)
    over = {"task": args.task, "eval.subtasks": args.subtask, "train.distance": args.distance,
            "eval.degree_thresholds": args.degree_thresholds}
    cfg.update({k: v for k, v in over.items() if v is not None})
    cfg.validate()
    graph, _ = _load_graph(cfg)
    _check_task(cfg, graph)
    task = cfg["task"]
    out = Path(args.out) if args.out else seed_dir
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    if task == "nc-ind":
        emb, enc, params = _restore(cfg, graph, seed, seed_dir, "supervised-nc")
        nodes = split_nodes(graph, tuple(cfg["node_split.ratio"]), seed)
        reports["nc-ind"] = score_inductive(graph, nodes[2], enc, params).to_dict()
    else:
        if task == "nc-trans":
            emb, _, _ = _restore(cfg, graph, seed, seed_dir, "self-supervised")
            nodes = split_nodes(graph, tuple(cfg["node_split.ratio"]), seed)
            reports["nc-trans"] = transductive_probe(emb, graph.labels, nodes, cfg.probe_config(seed)).to_dict()
        else:
            split = _run_split(cfg, graph, seed, seed_dir)
            emb, _, _ = _restore(cfg, graph, seed, seed_dir, "self-supervised", split.train_graph)
            for k in cfg["eval.subtasks"]:
                reports[k] = score_subtask(emb, build_subtask_testset(split, k, seed), cfg["train.distance"]).to_dict()
            if cfg["eval.degree_thresholds"]:
                ep = build_subtask_testset(split, "EP", seed)
                rows = degree_stratified_auc(emb, ep, graph, cfg["eval.degree_thresholds"], cfg["train.distance"])
                write_strata_csv(out / "degree_strata.csv", rows)
    (out / "eval_report.json").write_text(json.dumps(reports, indent=2, sort_keys=True))
    for k, r in reports.items():
        shown = {m: r[m] for m in ("auc", "acc", "macro_f1", "micro_f1") if r.get(m) is not None}
        print(f"{k}: " + " ".join(f"{m}={v:.4f}" for m, v in shown.items()))
    return 0


def cmd_export(args) -> int:
    cfg, seed_dir, seed = _load_run(args.run)
    out = Path(args.out)
    if out.exists() and not args.force:
        raise FileExistsError(f"{out} exists; pass --force to overwrite")
    graph, _ = _load_graph(cfg)
    mode = "supervised-nc" if cfg["task"] == "nc-ind" else "self-supervised"
    on = _run_split(cfg, graph, seed, seed_dir).train_graph if cfg["task"] == "lp" else None
    emb, _, _ = _restore(cfg, graph, seed, seed_dir, mode, on)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_embeddings(out, *emb.numpy())
    print(f"wrote {emb.num_nodes} x {emb.dim} embeddings to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .oracles import GRADCHECKS

    if args.list:
        print("\n".join(GRADCHECKS))
        return 0
    try:
        reports = run_gradcheck(args.ops, seed=args.seed)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    failed = [name for name, r in reports.items() if not r.ok(args.tol)]
    for name, r in reports.items():
        status = "PASS" if r.ok(args.tol) else "FAIL"
        print(f"{status} {name:<24} max_rel_err={r.max_rel_error:.2e} checked={r.checked} skipped={r.skipped}")
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}")
        return 1
    print(f"all {len(reports)} checks passed at tol {args.tol:g}")
    return 0


COMMANDS = {"split": cmd_split, "train": cmd_train, "eval": cmd_eval, "export": cmd_export,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError, FileExistsError, io.ParseError) as exc:
        print(f"duplex {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level reporter
        log.debug("failure", exc_info=True)
        print(f"duplex {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
