"""Discrete speech token toolkit.

Converts continuous speech-embedding matrices into discrete token
streams with trainable quantizers (k-means, grouped VQ, residual VQ),
applies a discretized-input augmentation policy, fuses and resamples
token embeddings, and measures token quality (bandwidth, PNMI, codebook
utilization, reconstruction error).
"""

from .augment import (
    AugmentationConfig,
    AugmentResult,
    MaskRegion,
    augment_sample,
    duplicate_frames,
    embedding_mask,
    gaussian_noise,
    mask_budget,
    sample_rng,
    time_mask,
    time_warp,
)
from .embio import (
    EmbeddingMatrix,
    Manifest,
    ManifestEntry,
    collect_frames,
    iterate_frames,
    read_embedding,
    read_manifest,
    sample_subset,
    write_embedding,
    write_manifest,
)
from .errors import (
    CapacityError,
    ConfigurationError,
    CorruptionError,
    DegenerateCodebookWarning,
    DisctokError,
    FormatError,
    SchemaError,
    TokenRangeError,
    UndefinedMetricError,
    ValidationError,
)
from .frontend import (
    EmbeddingTable,
    FeatureSequence,
    embed_tokens,
    fuse_groups,
    load_table,
    random_fusion_projection,
    resample_nearest,
    save_table,
)
from .metrics import (
    CodebookStats,
    ContingencyTable,
    ReconstructionError,
    build_contingency,
    build_joint_contingency,
    codebook_stats,
    merge_tables,
    pnmi,
    reconstruction_error,
)
from .quantize import (
    Codebook,
    GroupedCodebook,
    KMeansConfig,
    ResidualCodebookStack,
    assign,
    assign_grouped,
    load_codebook,
    reconstruct,
    rvq_decode,
    rvq_encode,
    save_codebook,
    train_grouped,
    train_kmeans,
    train_rvq,
)
from .tokens import (
    RunLengthSequence,
    TokenSequence,
    bandwidth_kbps,
    continuous_bandwidth_kbps,
    deduplicate,
    format_kbps,
    inflate,
    read_tokens,
    read_tokens_jsonl,
    token_byte_width,
    write_tokens,
    write_tokens_jsonl,
)

__version__ = "0.1.0"
