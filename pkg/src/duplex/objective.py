"""Parameter-free decoders and training losses.

The score of an ordered pair is the Hermitian product of the source
embedding of ``u`` with the target (conjugate) embedding of ``v``:

    re = sum_k a_u a_v cos(pi/2 (theta_u - theta_v))
    im = sum_k a_u a_v sin(pi/2 (theta_u - theta_v))

The direction-aware decoder turns distances from that score to the four
prototypes into a softmax; the connection-aware decoder is a sigmoid of the
amplitude inner product.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import ComplexEmbedding
from .graph import PROTOTYPES, ConfigError, Relation, SampleBatch

ALL_RELATIONS = (Relation.FORWARD, Relation.REVERSE, Relation.BIDIRECTIONAL, Relation.NO_EDGE)
DISTANCES = ("l1", "l2")


@dataclass
class ComplexScore:
    re: Tensor   # (k, 1)
    im: Tensor   # (k, 1)

    def numpy(self) -> np.ndarray:
        return self.re.data[:, 0] + 1j * self.im.data[:, 0]


def hermitian_score(emb: ComplexEmbedding, u, v) -> ComplexScore:
    u = np.atleast_1d(np.asarray(u, dtype=np.int64))
    v = np.atleast_1d(np.asarray(v, dtype=np.int64))
    a, t = emb.amplitude, emb.phase
    mag = ad.row_gather(a, u) * ad.row_gather(a, v)
    ang = ad.scalar_mul(ad.row_gather(t, u) - ad.row_gather(t, v), np.pi / 2)
    return ComplexScore(ad.sum_cols(mag * ad.cos(ang)), ad.sum_cols(mag * ad.sin(ang)))


def prototype_distance(score: ComplexScore, r: Relation, distance: str = "l1") -> Tensor:
    p = PROTOTYPES[Relation(r)]
    dre = score.re - p.real if p.real else score.re
    dim = score.im - p.imag if p.imag else score.im
    if distance == "l1":
        return ad.abs(dre) + ad.abs(dim)
    if distance == "l2":
        return ad.sqrt(dre * dre + dim * dim)
    raise ConfigError(f"distance must be one of {DISTANCES}, got {distance!r}")


def direction_logits(score: ComplexScore, distance: str = "l1",
                     restrict: Sequence[Relation] = ALL_RELATIONS) -> Tensor:
    if not len(restrict):
        raise ValueError("restrict must name at least one relation")
    return ad.concat_cols([-prototype_distance(score, r, distance) for r in restrict])


def direction_probs(score: ComplexScore, distance: str = "l1",
                    restrict: Sequence[Relation] = ALL_RELATIONS) -> Tensor:
    """``P(r) = exp(-dist(score, r)) / sum_r' exp(-dist(score, r'))`` over ``restrict``."""
    return ad.softmax_rows(direction_logits(score, distance, restrict))


def _pick(logp: Tensor, cols: np.ndarray) -> Tensor:
    onehot = np.zeros(logp.shape)
    onehot[np.arange(len(cols)), cols] = 1.0
    return ad.sum_cols(logp * Tensor(onehot))


def direction_loss(emb: ComplexEmbedding, batch: SampleBatch, distance: str = "l1") -> Tensor:
    """Mean negative log-likelihood of each pair's relation under the direction-aware decoder."""
    if not len(batch):
        raise ValueError("empty batch")
    score = hermitian_score(emb, batch.pairs[:, 0], batch.pairs[:, 1])
    logp = ad.log_softmax_rows(direction_logits(score, distance))
    return -ad.mean(_pick(logp, batch.labels))


def connection_logits(emb: ComplexEmbedding, u, v) -> Tensor:
    a = emb.amplitude
    return ad.sum_cols(ad.row_gather(a, u) * ad.row_gather(a, v))


def connection_loss(emb: ComplexEmbedding, batch: SampleBatch) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(a_u . a_v)`` against undirected adjacency."""
    s = connection_logits(emb, batch.pairs[:, 0], batch.pairs[:, 1])
    y = (batch.labels != Relation.NO_EDGE).astype(np.float64).reshape(-1, 1)
    # -[y log sig(s) + (1-y) log(1 - sig(s))] = softplus(s) - y*s
    return ad.mean(ad.softplus(s) - s * Tensor(y))


@dataclass
class LossSchedule:
    lambda0: float = 0.1
    q: float = 1e-2
    mode: str = "complement"   # or "power"

    def __post_init__(self):
        if self.mode not in ("complement", "power"):
            raise ConfigError(f"decay mode must be 'complement' or 'power', got {self.mode!r}")
        if self.lambda0 < 0:
            raise ConfigError("lambda0 must be non-negative")
        if self.mode == "complement" and not 0.0 <= self.q < 1.0:
            raise ConfigError(f"complement decay needs q in [0, 1), got {self.q}")
        if self.mode == "power" and not 0.0 <= self.q <= 1.0:
            raise ConfigError(f"power decay needs q in [0, 1], got {self.q}")


def lambda_at(schedule: LossSchedule, epoch: int) -> float:
    """Connection-loss weight at ``epoch``.

    ``power``: lambda0 * q**k; ``complement``: lambda0 * (1-q)**k. Both give
    lambda0 at k = 0, including q = 0 in power mode.
    """
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if epoch == 0:
        return float(schedule.lambda0)
    base = schedule.q if schedule.mode == "power" else 1.0 - schedule.q
    return float(schedule.lambda0 * base ** epoch)


def total_loss(emb: ComplexEmbedding, batch: SampleBatch, schedule: LossSchedule, epoch: int,
               distance: str = "l1") -> tuple[Tensor, dict]:
    """``L_d + lambda(epoch) * L_c``, plus the parts as floats."""
    ld = direction_loss(emb, batch, distance)
    lam = lambda_at(schedule, epoch)
    parts = {"direction": ld.item(), "lambda": lam}
    if lam == 0.0:
        parts["connection"] = float("nan")
        return ld, parts
    lc = connection_loss(emb, batch)
    parts["connection"] = lc.item()
    return ld + ad.scalar_mul(lc, lam), parts


def supervised_ce_loss(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    C = logits.shape[1]
    if labels.shape != (logits.shape[0],):
        raise ValueError(f"{labels.shape[0] if labels.ndim else 0} labels for {logits.shape[0]} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in 0..{C - 1}")
    return -ad.mean(_pick(ad.log_softmax_rows(logits), labels))
