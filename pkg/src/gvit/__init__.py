"""Gas mixture identification and concentration estimation from
variable-length sensor-array time series, via a chain-graph GCN combined
with a transformer encoder."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    GvitError,
    ParseError,
    TrainingDiverged,
)
from .tensor import Tensor, backward, no_grad
from .graph import (
    ChainAdjacency,
    SensorGraph,
    build_chain_adjacency,
    gcn_layer,
    gcn_stack,
    normalize_adjacency,
)
from .model import GViTConfig, GViTModel, predict_composition, uniform_pool
from .ingest import (
    DatasetSplit,
    RawStream,
    Segment,
    baseline_correct,
    downsample,
    kfold,
    normalize_targets,
    parse_stream,
    segment,
    stratified_split,
)
from .synth import make_schedule, synth_stream
from .train import TrainConfig, TrainHistory, rmse_loss, train_cv, train_fold
from .evaluate import MetricsReport, evaluate, emit_report, knn_baseline, r_squared
