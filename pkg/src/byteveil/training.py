"""Plain-SGD training of the detector with the cross-covariance penalty.

Loss per batch: mean binary cross-entropy + decov_weight * decov penalty
on the fully-connected activations. Fixed learning rate, seeded shuffling,
fixed accumulation order, so a (corpus, config) pair trains to bit-identical
parameters every run. Parameters stay on the float32 grid after each update.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .encoding import InputVector, to_input_vector
from .model import (
    Hyper,
    ModelParams,
    decov_backward,
    decov_penalty,
    f32_representable,
    forward,
    head_backward,
    init_params,
)
from .pe import RawBinary

log = logging.getLogger(__name__)

MALWARE, BENIGN = 1, 0


class EmptyClass(ValueError):
    """Training set lacks one of the two classes."""


class DivergedLoss(RuntimeError):
    """Loss became non-finite; aborting instead of training on garbage."""


@dataclass(frozen=True)
class TrainConfig:
    hyper: Hyper
    learning_rate: float = 0.05
    epochs: int = 45
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("learning_rate, epochs and batch_size must be positive")


def _bce(f: float, y: int) -> float:
    # f is bounded away from 0/1 by the logit clamp, so the logs are finite.
    return -math.log(f) if y == MALWARE else -math.log(1.0 - f)


def _zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.tensors()}


def batch_loss_and_grads(params: ModelParams, vecs: Sequence[InputVector],
                         ys: Sequence[int]):
    """Loss and parameter gradients over one batch, accumulated in a fixed
    order. Returns (loss, grads dict keyed by tensor name)."""
    hy = params.hyper
    n = len(vecs)
    traces = []
    fs = np.empty(n)
    acts = np.empty((n, hy.h))
    for i, vec in enumerate(vecs):
        f, trace = forward(params, vec)
        traces.append(trace)
        fs[i] = f
        acts[i] = trace.fc_act

    bce = sum(_bce(float(fs[i]), ys[i]) for i in range(n)) / n
    penalty = decov_penalty(acts)
    loss = bce + hy.decov_weight * penalty
    if not math.isfinite(loss):
        raise DivergedLoss(f"non-finite batch loss {loss}")

    d_acts = hy.decov_weight * decov_backward(acts)
    grads = _zero_grads(params)
    win_offsets = np.arange(hy.window)
    for i, trace in enumerate(traces):
        # d(mean BCE)/d logit; the overflow clamp is treated as identity here
        # so saturated samples keep a training signal.
        dlogit = (float(fs[i]) - ys[i]) / n
        dur, dus, dfc_pre = head_backward(params, trace, dlogit, d_acts[i])
        grads["out_w"] += dlogit * trace.fc_act
        grads["out_b"][0] += dlogit
        grads["fc_w"] += np.outer(dfc_pre, trace.pooled)
        grads["fc_b"] += dfc_pre
        # Each filter's gradient reaches exactly its argmax window.
        starts = trace.argmax * hy.stride
        rows = starts[:, None] + win_offsets[None, :]  # (C, w)
        z_wins = trace.Z[rows]                         # (C, w, e)
        grads["conv_relu_w"] += dur[:, None, None] * z_wins
        grads["conv_relu_b"] += dur
        grads["conv_sigm_w"] += dus[:, None, None] * z_wins
        grads["conv_sigm_b"] += dus
        dZ_wins = (
            dur[:, None, None] * params.conv_relu_w
            + dus[:, None, None] * params.conv_sigm_w
        )  # (C, w, e)
        # Scatter into the embedding by byte value; duplicate rows (repeated
        # or overlapping argmax windows) must each contribute.
        np.add.at(
            grads["embedding"],
            vecs[i].values[rows.ravel()],
            dZ_wins.reshape(-1, hy.e),
        )
    return loss, grads


def dataset_loss(params: ModelParams, vecs: Sequence[InputVector],
                 ys: Sequence[int]) -> float:
    """Mean BCE plus the decov penalty of the whole set taken as one batch."""
    hy = params.hyper
    acts = np.empty((len(vecs), hy.h))
    bce = 0.0
    for i, vec in enumerate(vecs):
        f, trace = forward(params, vec)
        acts[i] = trace.fc_act
        bce += _bce(f, ys[i])
    bce /= len(vecs)
    return bce + hy.decov_weight * decov_penalty(acts)


def train(
    corpus: Sequence[tuple[RawBinary, int]],
    config: TrainConfig,
    on_epoch: Callable[[int, float], None] | None = None,
) -> ModelParams:
    """Train from scratch on labeled binaries (label 1 = malware).

    Deterministic for a fixed (corpus, config): init, shuffling and batch
    accumulation all derive from config.seed. Per-epoch mean batch loss is
    logged and passed to on_epoch when given.
    """
    ys = [y for _, y in corpus]
    if MALWARE not in ys or BENIGN not in ys:
        raise EmptyClass("training corpus must contain both classes")
    hy = config.hyper
    vecs = [to_input_vector(b, hy.d) for b, _ in corpus]
    rng = np.random.default_rng(config.seed)
    params = init_params(hy, rng)

    n = len(vecs)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            loss, grads = batch_loss_and_grads(
                params, [vecs[i] for i in idx], [ys[i] for i in idx]
            )
            batch_losses.append(loss)
            for name, arr in params.tensors():
                arr[...] = f32_representable(arr - config.learning_rate * grads[name])
        epoch_loss = float(np.mean(batch_losses))
        if not math.isfinite(epoch_loss):
            raise DivergedLoss(f"non-finite loss at epoch {epoch}")
        log.info("epoch %d/%d loss %.6f", epoch + 1, config.epochs, epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
    return params
