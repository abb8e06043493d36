"""Gradient-guided padding-byte evasion attack, plus a random baseline.

Only the zero-padding region of the input vector is ever modified; the
file's own bytes are untouched, so the rewritten binary keeps its exact
functionality (the new bytes land in the overlay). The attack first fills
the q-byte budget with random values, then repeatedly replaces each
padding byte with the byte value whose embedding lies closest to the
descent line through that position's current embedding, keeping the best
iterate seen (the original included).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .encoding import InputVector
from .model import ModelParams, forward, grad_wrt_embedding
from .pe import RawBinary, append_overlay

log = logging.getLogger(__name__)

EVASION_THRESHOLD = 0.5  # strict: f < 0.5 counts as evaded

GRADIENT, RANDOM = "gradient", "random"
PER_ITERATION, PER_BYTE = "per-iteration", "per-byte"


class NoBudget(ValueError):
    """No padding byte can be injected (k >= d or zero budget)."""


@dataclass(frozen=True)
class AttackConfig:
    q_max: int
    iterations: int = 20
    seed: int = 0
    refresh: str = PER_ITERATION

    def __post_init__(self):
        if self.q_max < 0:
            raise ValueError("q_max must be non-negative")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.refresh not in (PER_ITERATION, PER_BYTE):
            raise ValueError(f"unknown refresh mode {self.refresh!r}")


@dataclass(eq=False)
class AttackResult:
    evaded: bool
    f_initial: float
    f_final: float
    f_trace: list[float] = field(default_factory=list)
    q: int = 0                 # bytes actually injected (0 if the original won)
    injected_bytes: bytes = b""
    iterations_used: int = 0


def compute_budget(k: int, q_max: int, d: int) -> int:
    """Number of modifiable padding positions: min(k + q_max, d) - k.

    Raises NoBudget when that is <= 0 (the sample must be skipped).
    """
    q = min(k + q_max, d) - k
    if q <= 0:
        raise NoBudget(f"no padding room: k={k}, q_max={q_max}, d={d}")
    return q


def select_byte(z: np.ndarray, w: np.ndarray, embedding: np.ndarray,
                current: int) -> int:
    """Replacement byte for one padding position.

    Projects every candidate embedding onto the line z + eta*n (n the
    normalized direction w) and returns the candidate closest to the line
    among those strictly ahead (s_i > 0), lowest byte value on ties.
    Keeps `current` when w is zero or no candidate is ahead.
    """
    out = kernels.select_bytes_batch(
        np.asarray(z, dtype=np.float64).reshape(1, -1),
        np.asarray(w, dtype=np.float64).reshape(1, -1),
        np.asarray(embedding, dtype=np.float64),
        np.asarray([current], dtype=np.int64),
    )
    return int(out[0])


def _sweep(params: ModelParams, values: np.ndarray, k: int, q: int) -> None:
    """One pass over all padding positions using the current gradient."""
    _, trace = forward(params, InputVector(values=values, informative_len=k))
    G = grad_wrt_embedding(params, trace)
    cur = values[k : k + q].astype(np.int64)
    chosen = kernels.select_bytes_batch(
        params.embedding[cur], -G[k : k + q], params.embedding, cur
    )
    values[k : k + q] = chosen.astype(np.uint8)


def _sweep_per_byte(params: ModelParams, values: np.ndarray, k: int, q: int) -> None:
    """Like _sweep but recomputes the gradient after every byte change."""
    _, trace = forward(params, InputVector(values=values, informative_len=k))
    G = grad_wrt_embedding(params, trace)
    for p in range(q):
        j = k + p
        new = select_byte(
            params.embedding[values[j]], -G[j], params.embedding, int(values[j])
        )
        if new != int(values[j]):
            values[j] = new
            _, trace = forward(params, InputVector(values=values, informative_len=k))
            G = grad_wrt_embedding(params, trace)


def attack(params: ModelParams, x0: InputVector, config: AttackConfig) -> AttackResult:
    """Gradient attack. Returns the best iterate seen, original included,
    so f_final <= f_initial always holds."""
    k, d = x0.informative_len, x0.d
    q = compute_budget(k, config.q_max, d)
    f_initial, _ = forward(params, x0)
    rng = np.random.default_rng(config.seed)

    values = x0.values.copy()
    values[k : k + q] = rng.integers(0, 256, size=q, dtype=np.uint8)

    best_f = f_initial
    best_values = None  # None means the original is still the best iterate
    f_trace: list[float] = []
    for _ in range(config.iterations):
        if config.refresh == PER_BYTE:
            _sweep_per_byte(params, values, k, q)
        else:
            _sweep(params, values, k, q)
        f_cur, _ = forward(params, InputVector(values=values, informative_len=k))
        f_trace.append(f_cur)
        if f_cur < best_f:
            best_f = f_cur
            best_values = values.copy()
        if f_cur < EVASION_THRESHOLD:
            break

    if best_values is None:
        q_used, injected = 0, b""
    else:
        q_used, injected = q, best_values[k : k + q].tobytes()
    return AttackResult(
        evaded=best_f < EVASION_THRESHOLD,
        f_initial=f_initial,
        f_final=best_f,
        f_trace=f_trace,
        q=q_used,
        injected_bytes=injected,
        iterations_used=len(f_trace),
    )


def random_attack(params: ModelParams, x0: InputVector,
                  config: AttackConfig) -> AttackResult:
    """Baseline: fill the budget with uniform random bytes, one shot.

    The best-so-far contract still applies: if the random fill makes f
    worse, the result is the unmodified original (q = 0)."""
    k, d = x0.informative_len, x0.d
    q = compute_budget(k, config.q_max, d)
    f_initial, _ = forward(params, x0)
    rng = np.random.default_rng(config.seed)

    values = x0.values.copy()
    values[k : k + q] = rng.integers(0, 256, size=q, dtype=np.uint8)
    f_rand, _ = forward(params, InputVector(values=values, informative_len=k))

    if f_rand < f_initial:
        best_f, q_used, injected = f_rand, q, values[k : k + q].tobytes()
    else:
        best_f, q_used, injected = f_initial, 0, b""
    return AttackResult(
        evaded=best_f < EVASION_THRESHOLD,
        f_initial=f_initial,
        f_final=best_f,
        f_trace=[f_rand],
        q=q_used,
        injected_bytes=injected,
        iterations_used=1,
    )


def build_adversarial_binary(original: RawBinary, result: AttackResult) -> RawBinary:
    """Append the injected bytes as an overlay; q = 0 returns the original
    bytes unchanged. Headers and section data are never rewritten."""
    return append_overlay(original, result.injected_bytes)
