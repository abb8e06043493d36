"""Fixed-length byte encoding of binaries for the detector.

A file of k bytes becomes a length-d vector: the first min(k, d) positions
carry the file's bytes, the rest are zero padding. Files longer than d are
truncated to their first d bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pe import RawBinary


class BudgetExceeded(ValueError):
    """Requested more injected bytes than the vector has padding room for."""


@dataclass(frozen=True, eq=False)
class InputVector:
    """Length-d byte vector plus the count of informative (file) positions."""

    values: np.ndarray  # uint8, shape (d,)
    informative_len: int

    @property
    def d(self) -> int:
        return int(self.values.shape[0])


def to_input_vector(binary: RawBinary, d: int) -> InputVector:
    """Zero-pad (or truncate) a file's bytes into a length-d vector."""
    if d <= 0:
        raise ValueError(f"d must be positive, got {d}")
    raw = np.frombuffer(binary.data, dtype=np.uint8)
    k = min(raw.size, d)
    values = np.zeros(d, dtype=np.uint8)
    values[:k] = raw[:k]
    return InputVector(values=values, informative_len=k)


def to_bytes(vec: InputVector, q_used: int) -> bytes:
    """Extract the q_used bytes that sit in the padding region [k, k+q_used)."""
    k = vec.informative_len
    if q_used < 0:
        raise ValueError(f"q_used must be non-negative, got {q_used}")
    if q_used > vec.d - k:
        raise BudgetExceeded(
            f"q_used={q_used} exceeds padding room d-k={vec.d - k}"
        )
    return vec.values[k : k + q_used].tobytes()
