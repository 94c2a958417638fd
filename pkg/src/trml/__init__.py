"""Robust multimodal learning with missing modalities on precomputed embeddings.

Text and video-frame embeddings are fused after a recurrent temporal
encoder; missing modalities are replaced by virtual embeddings generated
from the present one, and a temperature-scaled contrastive matching loss
aligns virtual embeddings with the originals.
"""
from .dataset import (
    Batch,
    EmbeddingDataset,
    MissingnessPlan,
    SampleRecord,
    SyntheticConfig,
    build_missingness_plan,
    generate_synthetic,
    iterate_batches,
    load_dataset,
    save_dataset,
)
from .errors import ConfigError, DataError, DivergenceError, NonFiniteError, TrmlError
from .evaluation import (
    MetricsReport,
    TTestResult,
    evaluate,
    export_projection_2d,
    export_similarity_heatmap,
    paired_ttest,
)
from .model import Hyper, ModalityBundle, ModelParams, forward_batch, fuse, init_params
from .numkernel import ParamStore, Rng, adam_step, evaluate_with_gradients, grad_check, seeded_gaussian
from .objective import (
    LossBreakdown,
    combine_sml,
    cosine_similarity_matrix,
    normalize_similarity,
    semantic_matching_loss_pair,
    task_loss,
    total_objective,
)
from .trainer import TrainConfig, TrainLog, apply_ablation, load_checkpoint, save_checkpoint, sweep_tau, train

__version__ = "0.1.0"
