"""Self-supervised link prediction on the LINQS Cora release.

Expects ``cora/cora.content`` and ``cora/cora.cites`` under $DUPLEX_DATA_DIR.

    python demos/cora_link_prediction.py --epochs 400
"""
import argparse
import time

from duplex import io
from duplex.encoder import EncoderConfig, init_embeddings
from duplex.evaluation import build_subtask_testset, score_subtask
from duplex.graph import split_edges
from duplex.trainer import TrainConfig, train

ap = argparse.ArgumentParser()
ap.add_argument("--epochs", type=int, default=400)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--fusion", default="mid")
args = ap.parse_args()

g = io.load_dataset("cora")
split = split_edges(g, seed=args.seed)
print(g, split.counts)

t0 = time.perf_counter()
_, emb, log = train(split, init_embeddings(g, 128, seed=args.seed), EncoderConfig(fusion=args.fusion),
                    TrainConfig(max_epochs=args.epochs, patience=min(50, args.epochs), seed=args.seed))
print(f"trained {log.records[-1]['epoch']} epochs in {time.perf_counter() - t0:.0f}s, best {log.best_epoch}")

for kind in ("EP", "DP", "TP", "FP"):
    rep = score_subtask(emb, build_subtask_testset(split, kind, args.seed))
    auc = f" auc={rep.auc:.3f}" if rep.auc is not None else ""
    print(f"{kind}: acc={rep.acc:.3f}{auc}")
