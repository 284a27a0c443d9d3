"""Neural quantum state ansatz built on a small reverse-mode layer library."""

from .encodings import ENCODINGS, encode, make_encoding, occupations_of, plusminus_matrix
from .network import (
    Network,
    NetworkConfig,
    TapeGradient,
    full_state_vector,
    grad_log_psi,
    load_checkpoint,
    normalized_from_log,
    parameter_count,
    save_checkpoint,
)

__all__ = [
    "ENCODINGS",
    "Network",
    "NetworkConfig",
    "TapeGradient",
    "encode",
    "full_state_vector",
    "grad_log_psi",
    "load_checkpoint",
    "make_encoding",
    "normalized_from_log",
    "occupations_of",
    "parameter_count",
    "plusminus_matrix",
    "save_checkpoint",
]
