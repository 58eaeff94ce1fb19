"""Train on the 4-node chain 0 -> 1 -> 2 -> 3 and inspect the decoded relations.

    python demos/toy_chain.py
"""
import numpy as np

from duplex.encoder import EncoderConfig, init_embeddings
from duplex.graph import DiGraph, LinkSplit
from duplex.objective import ALL_RELATIONS, direction_probs, hermitian_score
from duplex.trainer import TrainConfig, train

g = DiGraph(4, [(0, 1), (1, 2), (2, 3)])
_, emb, log = train(LinkSplit.full(g), init_embeddings(g, 8, seed=100),
                    EncoderConfig(layers=1, dim=8, dropout=0.0),
                    TrainConfig(max_epochs=200, patience=200, lr=1e-2, distance="l2", seed=100))

first, best = log.records[0], log.at(log.best_epoch)
print(f"best epoch {log.best_epoch}: L_d {first['val_metric']:.3f} -> {best['val_metric']:.3f}, "
      f"ham_mse {first['ham_mse']:.3f} -> {best['ham_mse']:.3f}")

names = [r.name for r in ALL_RELATIONS]
pairs = [(u, v) for u in range(4) for v in range(4) if u != v]
probs = direction_probs(hermitian_score(emb, *np.array(pairs).T), "l2").data
for (u, v), p in zip(pairs, probs):
    truth = g.relations([u], [v])[0]
    print(f"({u},{v}) true={names[truth]:<13} predicted={names[p.argmax()]:<13} p={p.max():.2f}")
