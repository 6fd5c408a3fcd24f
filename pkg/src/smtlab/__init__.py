"""smtlab: desk-scale sheet-music transcription lab.

Parse and validate Humdrum **kern, synthesize degraded score-image corpora,
train an image-to-sequence transformer over them, and score transcriptions
with edit-distance error rates.
"""

from .kern import KernDocument, Violation, parse_kern, validate_structure
from .tokens import (
    CELL_SEP,
    CONTROL_TOKENS,
    EOT,
    PAD,
    RECORD_SEP,
    RESERVED_TOKENS,
    SOT,
    Granularity,
    TokenSequence,
    Vocabulary,
    detokenize,
    tokenize,
    tokenize_text,
)
from .grammar import GrammarConfig, generate_piece
from .render import ImageSample, pseudo_render
from .degrade import DegradationConfig, degrade
from .corpus import (
    CorpusConfig,
    ManifestRow,
    make_corpus,
    read_manifest,
    split_by_piece,
    write_manifest,
)
from .backbones import FeatureMap, build_backbone
from .positional import add_2d_pe, flatten_feature_map, positional_encoding_2d
from .model import (
    SMT,
    DecoderConfig,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from .trainer import TrainConfig, fit, training_step
from .metrics import MetricReport, PairScores, edit_distance, score_pair
from .evaluate import evaluate_set, transcribe_array

__version__ = "0.1.0"

__all__ = [
    "KernDocument", "Violation", "parse_kern", "validate_structure",
    "SOT", "EOT", "PAD", "CELL_SEP", "RECORD_SEP", "RESERVED_TOKENS", "CONTROL_TOKENS",
    "Granularity", "TokenSequence", "Vocabulary", "tokenize", "tokenize_text", "detokenize",
    "GrammarConfig", "generate_piece",
    "ImageSample", "pseudo_render", "DegradationConfig", "degrade",
    "CorpusConfig", "ManifestRow", "make_corpus", "read_manifest", "split_by_piece",
    "write_manifest",
    "FeatureMap", "build_backbone", "add_2d_pe", "flatten_feature_map",
    "positional_encoding_2d",
    "SMT", "DecoderConfig", "save_checkpoint", "load_checkpoint", "model_from_checkpoint",
    "TrainConfig", "fit", "training_step",
    "MetricReport", "PairScores", "edit_distance", "score_pair",
    "evaluate_set", "transcribe_array",
    "__version__",
]
