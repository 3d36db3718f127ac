"""blockfsq: partition-preserving residual finite scalar quantization.

A library and CLI for tokenizing feature matrices with a block-diagonal
residual FSQ quantizer, serializing the token streams, accounting bitrate
exactly, and running the companion analyses (linear leakage probe,
rate-distortion sweep with knee detection).
"""

from .analysis import (
    ParetoPoint,
    ProbeReport,
    QuantizerMetrics,
    RdCell,
    TrainConfig,
    annotate_cells,
    extract_probe_features,
    find_knee,
    marginal_efficiency,
    ols_r2,
    pareto_front,
    quantizer_metrics,
    rd_search,
    select_operating_point,
    train_quantizer,
)
from .bitstream import BitrateReport, TokenStream, bitrate, read_tokens, write_tokens
from .conditioning import (
    AttnPoolWeights,
    CemParams,
    FilmWeights,
    attention_weights,
    attentive_pool,
    film_modulate,
)
from .dropout import (
    DropoutConfig,
    marginal_probabilities,
    sample_active_stages,
    supervision_points,
)
from .errors import (
    BadMagicError,
    BadVersionError,
    BlockFSQError,
    FormatError,
    MisalignedScheduleError,
    MissingTermError,
    NonFiniteDataError,
    PayloadShapeError,
    ProbeError,
    ShapeMismatchError,
    TokenRangeError,
    TrainingDivergedError,
    TruncatedPayloadError,
    ValidationError,
)
from .estimator import BlockDiagonalResidualQuantizer
from .features import (
    FeatureMatrix,
    as_features,
    gaussian_features,
    read_feature_file,
    write_feature_file,
)
from .grid import (
    LevelSpec,
    codes_to_values,
    pack_index,
    quantize_dim,
    quantize_vector,
    split_index,
    unpack_index,
)
from .losses import (
    LossWeights,
    MultiRateSchedule,
    combine_reconstruction,
    cycle_loss,
    emotion_feature_loss,
    mean_pool,
    multirate_loss,
    total_loss,
)
from .params_io import ParamsDocument, read_params_file, write_params_file
from .quantizer import (
    DenseStageParams,
    EncodeResult,
    QuantizerConfig,
    QuantizerGrads,
    QuantizerParams,
    StageParams,
    apply_post,
    commitment_loss,
    decode_indices,
    encode,
    init_params,
    stage_forward,
    ste_backward,
)
from .rng import Rng

__version__ = "0.1.0"

__all__ = [
    "AttnPoolWeights", "BadMagicError", "BadVersionError", "BitrateReport",
    "BlockDiagonalResidualQuantizer", "BlockFSQError", "CemParams",
    "DenseStageParams", "DropoutConfig", "EncodeResult", "FeatureMatrix",
    "FilmWeights", "FormatError", "LevelSpec", "LossWeights",
    "MisalignedScheduleError", "MissingTermError", "MultiRateSchedule",
    "NonFiniteDataError", "ParamsDocument", "ParetoPoint", "PayloadShapeError",
    "ProbeError", "ProbeReport", "QuantizerConfig", "QuantizerGrads",
    "QuantizerMetrics", "QuantizerParams", "RdCell", "Rng",
    "ShapeMismatchError", "StageParams", "TokenRangeError", "TokenStream",
    "TrainConfig", "TrainingDivergedError", "TruncatedPayloadError",
    "ValidationError", "annotate_cells", "apply_post", "as_features",
    "attention_weights", "attentive_pool", "bitrate", "codes_to_values", "combine_reconstruction",
    "commitment_loss", "cycle_loss", "decode_indices", "emotion_feature_loss",
    "encode", "extract_probe_features", "film_modulate", "find_knee",
    "gaussian_features", "init_params", "marginal_efficiency",
    "marginal_probabilities", "mean_pool", "multirate_loss", "ols_r2",
    "pack_index", "pareto_front", "quantize_dim", "quantize_vector",
    "quantizer_metrics", "rd_search", "read_feature_file", "read_params_file",
    "read_tokens", "sample_active_stages", "select_operating_point",
    "split_index", "stage_forward", "ste_backward", "supervision_points",
    "total_loss", "train_quantizer", "unpack_index", "write_feature_file",
    "write_params_file", "write_tokens",
]
