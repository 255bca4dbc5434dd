"""Memory-augmented variational sequence model for disease-stage discovery.

Per-visit patient representations come from an LSTM encoder coupled with an
external memory bank and a variational latent; k-means over those
representations yields disease stages.  See the README for the CLI and the
file formats.
"""

__version__ = "0.1.0"

from ._kernels import USING_NUMBA
from .clustering import ClusterResult, MetricsReport, ari, kmeans, nmi, pca_project, purity
from .data import (
    Cohort,
    PatientSequence,
    SyntheticConfig,
    generate_synthetic,
    impute,
    load_long_csv,
    normalization_stats,
    normalize,
    prepare_splits,
    split,
    write_long_csv,
)
from .memory import GateParams, MemoryBank, ReadResult, calibrate, memory_read, memory_write
from .model import (
    ForwardTrace,
    ModelConfig,
    ModelParams,
    backward_sequence,
    forward_sequence,
    gaussian_kl,
    load_checkpoint,
    posterior_params,
    reparameterize,
    representation_for_clustering,
    save_checkpoint,
)
from .nn import LstmCellParams, ParamTensor, gradcheck, linear_forward, lstm_cell, softmax
from .training import (
    LossBreakdown,
    OptimizerState,
    TrainConfig,
    adam_step,
    anneal_weight,
    cross_entropy,
    reconstruction_mse,
    train,
)
