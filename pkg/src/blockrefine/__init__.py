"""Desk-scale masked-pretraining diagnostics and nearest-neighbor refinement.

Plain numpy throughout, with numba kernels for the hot loops
(set ``MRF_DISABLE_NUMBA=1`` to use the numpy fallbacks).
"""
from ._kernels import USE_NUMBA
from .cluster import (KmeansConfig, ami, ari, block_cluster_similarity, cluster_accuracy,
                      cluster_report, davies_bouldin, minibatch_kmeans, nmi, silhouette)
from .config import ExperimentConfig, load_config
from .data import BlobDatasetConfig, ViewConfig, generate_blobs, make_views
from .encoder import EncoderConfig, MimConfig, encode, mim_pretrain, relative_improvement
from .errors import BlockRefineError, ConfigError, NumericalError, StageError
from .heads import EnsembleConfig, HeadConfig, ScheduleSpec, head_forward, init_head, schedule_weight
from .io import export_embeddings, import_embeddings, load_checkpoint, save_checkpoint
from .nna import ContrastiveBatch, build_batch_nna, nna_loss
from .numerics import RngStream, cosine_similarity, l2_normalize_rows, log_sum_exp
from .pipeline import run_experiment
from .probe import KnnConfig, knn_probe, linear_probe, per_block_knn
from .queue import QueueConfig, SupportQueue
from .refine import RefineConfig, build_state, init_heads_phase, refine

__version__ = "0.1.0"
