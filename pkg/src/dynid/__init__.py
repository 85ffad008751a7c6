"""Person identification from facial-dynamics parameter sequences.

The pipeline consumes per-frame expression and jaw parameters (103 channels),
encodes them with temporal models, and trains speaker-discriminative
embeddings. Shape parameters never enter the features; their per-session
statistics only feed the drift-to-noise leakage diagnostic.
"""

__version__ = "0.1.0"

from .seqdata import (
    EXPRESSION_DIM,
    FEATURE_DIM,
    JAW_DIM,
    Batch,
    CropPadPolicy,
    DynSequence,
    UtteranceRecord,
    build_label_map,
    load_manifest,
    make_batches,
    pad_or_crop,
    read_sequence,
    validate_manifest,
    write_manifest,
    write_sequence,
)

__all__ = [
    "EXPRESSION_DIM",
    "JAW_DIM",
    "FEATURE_DIM",
    "DynSequence",
    "UtteranceRecord",
    "CropPadPolicy",
    "Batch",
    "read_sequence",
    "write_sequence",
    "pad_or_crop",
    "load_manifest",
    "write_manifest",
    "validate_manifest",
    "build_label_map",
    "make_batches",
    "__version__",
]
