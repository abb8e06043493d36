"""byteveil: byte-level convolutional malware detector, padding-byte
evasion attack, synthetic PE corpus, and evaluation harness."""

from .attack import (
    AttackConfig,
    AttackResult,
    NoBudget,
    attack,
    build_adversarial_binary,
    compute_budget,
    random_attack,
    select_byte,
)
from .checkpoint import load_checkpoint, params_equal, save_checkpoint
from .corpus import CorpusSpec, generate_corpus
from .encoding import InputVector, to_bytes, to_input_vector
from .model import (
    Hyper,
    ModelParams,
    classify,
    decov_penalty,
    embed,
    forward,
    grad_wrt_embedding,
    init_params,
)
from .pe import (
    PeMetadata,
    RawBinary,
    SectionEntry,
    append_overlay,
    informative_length,
    parse_pe,
)
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackResult",
    "CorpusSpec",
    "Hyper",
    "InputVector",
    "ModelParams",
    "NoBudget",
    "PeMetadata",
    "RawBinary",
    "SectionEntry",
    "TrainConfig",
    "append_overlay",
    "attack",
    "build_adversarial_binary",
    "classify",
    "compute_budget",
    "decov_penalty",
    "embed",
    "forward",
    "generate_corpus",
    "grad_wrt_embedding",
    "informative_length",
    "init_params",
    "load_checkpoint",
    "params_equal",
    "parse_pe",
    "random_attack",
    "save_checkpoint",
    "select_byte",
    "to_bytes",
    "to_input_vector",
    "train",
    "__version__",
]
