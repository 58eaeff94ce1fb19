"""Directed graph embeddings with complex amplitude/phase vectors.

Each node gets ``x_u = a_u * exp(i*pi/2*theta_u)``. A dual GAT encoder
produces amplitudes (direction-agnostic) and phases (direction-aware); two
parameter-free decoders reconstruct the Hermitian adjacency of the graph.
"""
from .autodiff import Adam, Tensor
from .encoder import ComplexEmbedding, EncoderConfig, count_params, encode, init_embeddings, init_params
from .evaluation import (MetricReport, SubtaskSpec, auc, build_subtask_testset, degree_stratified_auc,
                         f1_scores, inductive_protocol, score_subtask, transductive_probe)
from .graph import (ConfigError, DiGraph, LinkSplit, Relation, SampleBatch, ham_lookup, sample_batch,
                    split_edges, split_nodes)
from .io import load_dataset, load_edge_list
from .objective import (LossSchedule, connection_loss, direction_loss, direction_probs, hermitian_score,
                        lambda_at, supervised_ce_loss, total_loss)
from .trainer import TrainConfig, TrainLog, ham_mse, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
