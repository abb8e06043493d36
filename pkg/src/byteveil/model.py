"""Byte-level detector: trainable embedding, two gated 1-D convolution
branches, per-filter temporal max pooling, fully-connected head.

Forward and backward passes are hand-rolled on top of the kernels module.
Parameters are held as float64 arrays whose values are always exactly
float32-representable (enforced after init, every update, and load), so
checkpoints round-trip bit-for-bit. All heavy math runs in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import kernels
from .encoding import InputVector, to_input_vector
from .pe import RawBinary, parse_pe

N_BYTE_VALUES = 256
LOGIT_CLAMP = 30.0  # keeps the sigmoid away from exact 0/1


class ShapeMismatch(ValueError):
    """Input vector length disagrees with the model's d."""


class StaleTrace(ValueError):
    """Forward trace shapes disagree with the supplied parameters."""


@dataclass(frozen=True)
class Hyper:
    d: int
    e: int = 8
    window: int = 512
    stride: int = 512
    n_filters: int = 64
    h: int = 128
    decov_weight: float = 0.1

    def __post_init__(self):
        if min(self.d, self.e, self.window, self.stride, self.n_filters, self.h) <= 0:
            raise ValueError("all size fields must be positive")
        if self.window < self.stride:
            raise ValueError("stride must not exceed window")
        if self.d < self.window:
            raise ValueError(f"d={self.d} shorter than one window ({self.window})")
        if self.decov_weight < 0:
            raise ValueError("decov_weight must be non-negative")

    @property
    def n_windows(self) -> int:
        return (self.d - self.window) // self.stride + 1


@dataclass(eq=False)
class ModelParams:
    hyper: Hyper
    embedding: np.ndarray    # (256, e)
    conv_relu_w: np.ndarray  # (C, w, e)
    conv_relu_b: np.ndarray  # (C,)
    conv_sigm_w: np.ndarray  # (C, w, e)
    conv_sigm_b: np.ndarray  # (C,)
    fc_w: np.ndarray         # (h, C)
    fc_b: np.ndarray         # (h,)
    out_w: np.ndarray        # (h,)
    out_b: np.ndarray        # (1,)

    TENSOR_NAMES = (
        "embedding",
        "conv_relu_w",
        "conv_relu_b",
        "conv_sigm_w",
        "conv_sigm_b",
        "fc_w",
        "fc_b",
        "out_w",
        "out_b",
    )

    def tensors(self):
        """(name, array) pairs in the fixed serialization order."""
        return [(name, getattr(self, name)) for name in self.TENSOR_NAMES]


@dataclass(eq=False)
class ForwardTrace:
    """Everything the backward passes need from one forward evaluation."""

    Z: np.ndarray          # (d, e) embedded input
    u_relu: np.ndarray     # (L, C) pre-activations, ReLU branch
    u_sigm: np.ndarray     # (L, C) pre-activations, sigmoid branch
    relu_act: np.ndarray   # (L, C)
    sigm_act: np.ndarray   # (L, C)
    gated: np.ndarray      # (L, C) elementwise product
    argmax: np.ndarray     # (C,) pooled window per filter (lowest index on ties)
    pooled: np.ndarray     # (C,)
    fc_pre: np.ndarray     # (h,)
    fc_act: np.ndarray     # (h,)
    logit: float
    f: float


def f32_representable(a: np.ndarray) -> np.ndarray:
    """Round a float64 array to the nearest float32 grid, staying float64."""
    return a.astype(np.float32).astype(np.float64)


def init_params(hyper: Hyper, rng: np.random.Generator) -> ModelParams:
    """Draw fresh parameters. Scales keep pre-activations O(1) at start."""
    e, w, C, h = hyper.e, hyper.window, hyper.n_filters, hyper.h
    emb_scale = 1.0 / math.sqrt(e)
    conv_scale = math.sqrt(2.0 / (w * e))
    fc_scale = math.sqrt(2.0 / C)
    out_scale = 1.0 / math.sqrt(h)
    return ModelParams(
        hyper=hyper,
        embedding=f32_representable(rng.normal(0.0, emb_scale, (N_BYTE_VALUES, e))),
        conv_relu_w=f32_representable(rng.normal(0.0, conv_scale, (C, w, e))),
        conv_relu_b=np.zeros(C, dtype=np.float64),
        conv_sigm_w=f32_representable(rng.normal(0.0, conv_scale, (C, w, e))),
        conv_sigm_b=np.zeros(C, dtype=np.float64),
        fc_w=f32_representable(rng.normal(0.0, fc_scale, (h, C))),
        fc_b=np.zeros(h, dtype=np.float64),
        out_w=f32_representable(rng.normal(0.0, out_scale, h)),
        out_b=np.zeros(1, dtype=np.float64),
    )


def embed(params: ModelParams, x: InputVector) -> np.ndarray:
    """Row j of the result is the embedding of byte x_j. Shape (d, e)."""
    if x.d != params.hyper.d:
        raise ShapeMismatch(f"vector d={x.d}, model d={params.hyper.d}")
    return params.embedding[x.values]


def _content_rows(values: np.ndarray) -> int:
    """1 + index of the last nonzero byte; rows beyond embed to the same
    padding-byte vector, so whole windows there are constant."""
    mask = values != 0
    if not mask.any():
        return 0
    return int(values.size - mask[::-1].argmax())


def forward_embedded(params: ModelParams, Z: np.ndarray, n_active: int | None = None):
    """Forward pass from an already-embedded (d, e) input.

    n_active, when given, is the number of windows that touch a non-padding
    row; all later windows are identical, so their pre-activations are
    computed once and broadcast. Bitwise equal to the full computation.
    """
    hy = params.hyper
    if Z.shape != (hy.d, hy.e):
        raise ShapeMismatch(f"Z shape {Z.shape}, expected {(hy.d, hy.e)}")
    L = hy.n_windows
    if n_active is None:
        n_active = L
    n_active = min(n_active, L)

    u_relu = np.empty((L, hy.n_filters), dtype=np.float64)
    u_sigm = np.empty((L, hy.n_filters), dtype=np.float64)
    u_relu[:n_active] = kernels.conv1d(
        Z, params.conv_relu_w, params.conv_relu_b, hy.stride, n_active
    )
    u_sigm[:n_active] = kernels.conv1d(
        Z, params.conv_sigm_w, params.conv_sigm_b, hy.stride, n_active
    )
    if n_active < L:
        # One representative all-padding window, evaluated by the same kernel.
        pad_win = np.ascontiguousarray(np.broadcast_to(Z[-1], (hy.window, hy.e)))
        u_relu[n_active:] = kernels.conv1d(
            pad_win, params.conv_relu_w, params.conv_relu_b, 1, 1
        )[0]
        u_sigm[n_active:] = kernels.conv1d(
            pad_win, params.conv_sigm_w, params.conv_sigm_b, 1, 1
        )[0]

    relu_act = np.maximum(u_relu, 0.0)
    sigm_act = expit(u_sigm)
    gated = relu_act * sigm_act
    argmax = np.argmax(gated, axis=0)  # lowest index on ties
    cols = np.arange(hy.n_filters)
    pooled = gated[argmax, cols]
    fc_pre = params.fc_w @ pooled + params.fc_b
    fc_act = np.maximum(fc_pre, 0.0)
    logit = float(params.out_w @ fc_act + params.out_b[0])
    f = float(expit(np.clip(logit, -LOGIT_CLAMP, LOGIT_CLAMP)))
    trace = ForwardTrace(
        Z=Z,
        u_relu=u_relu,
        u_sigm=u_sigm,
        relu_act=relu_act,
        sigm_act=sigm_act,
        gated=gated,
        argmax=argmax,
        pooled=pooled,
        fc_pre=fc_pre,
        fc_act=fc_act,
        logit=logit,
        f=f,
    )
    return f, trace


def forward(params: ModelParams, x: InputVector):
    """Detection score f in [0, 1] plus the trace for backward passes."""
    Z = embed(params, x)
    n_content = _content_rows(x.values)
    hy = params.hyper
    if n_content == 0:
        n_active = 0
    else:
        n_active = min(hy.n_windows, (n_content + hy.stride - 1) // hy.stride)
    return forward_embedded(params, Z, n_active)


def _check_trace(params: ModelParams, trace: ForwardTrace) -> None:
    hy = params.hyper
    if trace.Z.shape != (hy.d, hy.e) or trace.u_relu.shape != (
        hy.n_windows,
        hy.n_filters,
    ):
        raise StaleTrace(
            f"trace shapes {trace.Z.shape}/{trace.u_relu.shape} do not match "
            f"model d={hy.d}, e={hy.e}, L={hy.n_windows}, C={hy.n_filters}"
        )
    if trace.fc_pre.shape != (hy.h,):
        raise StaleTrace("trace head width does not match model h")


def head_backward(params: ModelParams, trace: ForwardTrace, dlogit: float,
                  dfc_act: np.ndarray | None = None):
    """Backward from the logit (and optionally extra head-activation
    gradient) down to the two conv branches' pooled pre-activations.

    Returns (dur, dus, dfc_pre): per-filter gradients at each filter's
    argmax window, and the fully-connected pre-activation gradient.
    """
    dh = dlogit * params.out_w
    if dfc_act is not None:
        dh = dh + dfc_act
    dfc_pre = dh * (trace.fc_pre > 0.0)
    dpool = params.fc_w.T @ dfc_pre
    cols = np.arange(params.hyper.n_filters)
    a_sel = trace.relu_act[trace.argmax, cols]
    b_sel = trace.sigm_act[trace.argmax, cols]
    u_sel = trace.u_relu[trace.argmax, cols]
    d_relu = dpool * b_sel
    d_sigm = dpool * a_sel
    dur = d_relu * (u_sel > 0.0)
    dus = d_sigm * b_sel * (1.0 - b_sel)
    return dur, dus, dfc_pre


def grad_wrt_embedding(params: ModelParams, trace: ForwardTrace) -> np.ndarray:
    """d f / d Z, shape (d, e). Zero outside the pooled argmax windows.

    The clamp on the logit is honoured: a clamped logit has zero gradient.
    """
    _check_trace(params, trace)
    hy = params.hyper
    if abs(trace.logit) >= LOGIT_CLAMP:
        return np.zeros((hy.d, hy.e), dtype=np.float64)
    dlogit = trace.f * (1.0 - trace.f)
    dur, dus, _ = head_backward(params, trace, dlogit)
    return kernels.pool_backward_to_z(
        trace.argmax.astype(np.int64),
        dur,
        dus,
        params.conv_relu_w,
        params.conv_sigm_w,
        hy.stride,
        hy.d,
    )


def decov_penalty(activations: np.ndarray) -> float:
    """Half the squared Frobenius norm of the off-diagonal batch covariance.

    activations: (batch, h). Zero for a single sample or identical rows;
    never negative.
    """
    X = np.asarray(activations, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a (batch, h) matrix, got shape {X.shape}")
    n = X.shape[0]
    if n < 2:
        return 0.0
    # Covariance is shift-invariant; subtracting the first row before
    # centering makes identical rows cancel exactly, so such batches give
    # a penalty of exactly zero rather than rounding dust.
    Y = X - X[0]
    Xc = Y - Y.mean(axis=0)
    cov = (Xc.T @ Xc) / n
    off = cov.copy()
    np.fill_diagonal(off, 0.0)
    return float(0.5 * (off * off).sum())


def decov_backward(activations: np.ndarray) -> np.ndarray:
    """Gradient of decov_penalty with respect to the activations."""
    X = np.asarray(activations, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        return np.zeros_like(X)
    Y = X - X[0]  # same shift as decov_penalty
    Xc = Y - Y.mean(axis=0)
    cov = (Xc.T @ Xc) / n
    np.fill_diagonal(cov, 0.0)
    return (2.0 / n) * (Xc @ cov)


def classify(params: ModelParams, binary: RawBinary):
    """(label, f) for a parseable PE; the 0.5 boundary counts as malware."""
    parse_pe(binary)
    vec = to_input_vector(binary, params.hyper.d)
    f, _ = forward(params, vec)
    label = "malware" if f >= 0.5 else "benign"
    return label, f
