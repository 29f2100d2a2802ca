"""Dense numeric kernel: 2-D convolution / transposed convolution with exact
backward passes, leaky-ReLU, and an Adam optimizer step.

All operations accept feature maps as (C, H, W) or batched (N, C, H, W)
arrays and are pure functions of their inputs. Compute dtype follows the
input dtype (float32 in production, float64 for gradient checking).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, TrainingError


@dataclass
class ConvLayer:
    """Parameters of one (transposed) convolution layer.

    Weights are stored as (out_channels, in_channels, k, k); for a transposed
    convolution ``in_channels`` is the layer's input channel count.
    ``output_padding`` applies to transposed convolutions only and adds extra
    rows/columns at the bottom/right so odd spatial sizes can be mirrored
    exactly; it must be smaller than the stride.
    """

    out_channels: int
    in_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    output_padding: int = 0
    weight: np.ndarray = field(default=None)  # type: ignore[assignment]
    bias: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.stride < 1 or self.kernel_size < 1 or self.padding < 0:
            raise DimensionError(
                f"invalid layer geometry: k={self.kernel_size} "
                f"s={self.stride} p={self.padding}"
            )
        if not 0 <= self.output_padding < self.stride:
            raise DimensionError(
                f"output_padding {self.output_padding} must be in [0, stride)"
            )
        k = self.kernel_size
        wshape = (self.out_channels, self.in_channels, k, k)
        if self.weight is None:
            self.weight = np.zeros(wshape, dtype=np.float32)
        if self.bias is None:
            self.bias = np.zeros(self.out_channels, dtype=np.float32)
        if self.weight.shape != wshape:
            raise DimensionError(
                f"weight shape {self.weight.shape} != declared {wshape}"
            )
        if self.bias.shape != (self.out_channels,):
            raise DimensionError(
                f"bias shape {self.bias.shape} != ({self.out_channels},)"
            )

    @property
    def param_count(self) -> int:
        return self.weight.size + self.bias.size


@dataclass
class GradientBundle:
    """Gradients of a scalar loss w.r.t. one layer's weight, bias and input."""

    d_weight: np.ndarray
    d_bias: np.ndarray
    d_input: np.ndarray


def _as_batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"feature map must be 3-D or 4-D, got shape {x.shape}")


def _unbatch(y: np.ndarray, squeeze: bool) -> np.ndarray:
    return y[0] if squeeze else y


def _check_in_channels(x: np.ndarray, layer: ConvLayer):
    if x.shape[1] != layer.in_channels:
        raise DimensionError(
            f"input has {x.shape[1]} channels (shape {x.shape}) but layer "
            f"expects {layer.in_channels}"
        )


def conv_out_hw(h: int, w: int, layer: ConvLayer) -> tuple[int, int]:
    """Spatial output size of a forward convolution."""
    k, s, p = layer.kernel_size, layer.stride, layer.padding
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    if oh < 1 or ow < 1:
        raise DimensionError(
            f"conv output {oh}x{ow} < 1 for input {h}x{w}, k={k} s={s} p={p}"
        )
    return oh, ow


def tconv_out_hw(h: int, w: int, layer: ConvLayer) -> tuple[int, int]:
    """Spatial output size of a transposed convolution."""
    k, s, p, op = layer.kernel_size, layer.stride, layer.padding, layer.output_padding
    return (h - 1) * s - 2 * p + k + op, (w - 1) * s - 2 * p + k + op


def _pad_hw(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _windows(xp: np.ndarray, k: int, s: int) -> np.ndarray:
    # (N, C, Ho, Wo, k, k) view over the padded input
    return sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]


def _corr(x: np.ndarray, w: np.ndarray, s: int, p: int) -> np.ndarray:
    k = w.shape[2]
    win = _windows(_pad_hw(x, p), k, s)  # (N, C, Ho, Wo, k, k)
    return np.einsum("nchwij,ocij->nohw", win, w, optimize=True)


def _corr_weight_grad(x: np.ndarray, g: np.ndarray, s: int, p: int, k: int) -> np.ndarray:
    win = _windows(_pad_hw(x, p), k, s)
    return np.einsum("nchwij,nohw->ocij", win, g, optimize=True)


def _corr_input_grad(
    g: np.ndarray, w: np.ndarray, s: int, p: int, in_hw: tuple[int, int]
) -> np.ndarray:
    # Scatter each upstream position's k x k contribution back onto the
    # (padded) input canvas; one GEMM plus a strided slice-add per kernel tap.
    n, co, ho, wo = g.shape
    k = w.shape[2]
    ci = w.shape[1]
    h, ww = in_hw
    gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, co)
    dxp = np.zeros((n, ci, h + 2 * p, ww + 2 * p), dtype=g.dtype)
    for ki in range(k):
        for kj in range(k):
            tap = (gt @ w[:, :, ki, kj]).reshape(n, ho, wo, ci).transpose(0, 3, 1, 2)
            dxp[:, :, ki : ki + s * ho : s, kj : kj + s * wo : s] += tap
    return dxp[:, :, p : p + h, p : p + ww]


def conv_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Cross-correlation with bias."""
    xb, squeeze = _as_batched(x)
    _check_in_channels(xb, layer)
    conv_out_hw(xb.shape[2], xb.shape[3], layer)
    y = _corr(xb, layer.weight, layer.stride, layer.padding)
    y += layer.bias[None, :, None, None]
    return _unbatch(y, squeeze)


def conv_backward(x: np.ndarray, layer: ConvLayer, upstream: np.ndarray) -> GradientBundle:
    """Gradients of a scalar loss through :func:`conv_forward`."""
    xb, squeeze = _as_batched(x)
    gb, _ = _as_batched(upstream)
    _check_in_channels(xb, layer)
    oh, ow = conv_out_hw(xb.shape[2], xb.shape[3], layer)
    expect = (xb.shape[0], layer.out_channels, oh, ow)
    if gb.shape != expect:
        raise DimensionError(f"upstream shape {gb.shape} != forward output {expect}")
    dw = _corr_weight_grad(xb, gb, layer.stride, layer.padding, layer.kernel_size)
    db = gb.sum(axis=(0, 2, 3))
    dx = _corr_input_grad(gb, layer.weight, layer.stride, layer.padding, xb.shape[2:])
    return GradientBundle(dw, db, _unbatch(dx, squeeze))


def tconv_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Transposed convolution (gradient-of-conv semantics) with bias."""
    xb, squeeze = _as_batched(x)
    _check_in_channels(xb, layer)
    out_hw = tconv_out_hw(xb.shape[2], xb.shape[3], layer)
    w_conv = layer.weight.transpose(1, 0, 2, 3)  # (in, out, k, k)
    y = _corr_input_grad(xb, w_conv, layer.stride, layer.padding, out_hw)
    y += layer.bias[None, :, None, None]
    return _unbatch(y, squeeze)


def tconv_backward(x: np.ndarray, layer: ConvLayer, upstream: np.ndarray) -> GradientBundle:
    """Gradients of a scalar loss through :func:`tconv_forward`."""
    xb, squeeze = _as_batched(x)
    gb, _ = _as_batched(upstream)
    _check_in_channels(xb, layer)
    oh, ow = tconv_out_hw(xb.shape[2], xb.shape[3], layer)
    expect = (xb.shape[0], layer.out_channels, oh, ow)
    if gb.shape != expect:
        raise DimensionError(f"upstream shape {gb.shape} != forward output {expect}")
    w_conv = layer.weight.transpose(1, 0, 2, 3)
    dx = _corr(gb, w_conv, layer.stride, layer.padding)
    # dW[c_in, c_out, ki, kj] = sum_n,h,w x[n,c_in,h,w] * g_padded[n,c_out,h*s+ki,w*s+kj]
    dw = _corr_weight_grad(gb, xb, layer.stride, layer.padding, layer.kernel_size)
    db = gb.sum(axis=(0, 2, 3))
    return GradientBundle(dw.transpose(1, 0, 2, 3), db, _unbatch(dx, squeeze))


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    """y = x for x >= 0, slope * x otherwise. Requires slope in (0, 1)."""
    if not 0.0 < slope < 1.0:
        raise DimensionError(f"leaky-ReLU slope must be in (0, 1), got {slope}")
    return np.where(x >= 0, x, slope * x)


def leaky_relu_backward(x: np.ndarray, upstream: np.ndarray, slope: float) -> np.ndarray:
    """Input gradient of :func:`leaky_relu` given the forward input."""
    if x.shape != upstream.shape:
        raise DimensionError(f"upstream shape {upstream.shape} != input {x.shape}")
    return np.where(x >= 0, upstream, slope * upstream)


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p, dtype=np.float64) for p in params],
            v=[np.zeros_like(p, dtype=np.float64) for p in params],
        )


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One Adam update with bias correction, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise TrainingError(
            f"param/grad/state count mismatch: {len(params)}/{len(grads)}/{len(state.m)}"
        )
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise TrainingError(f"layer {i}: grad shape {g.shape} != param {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"layer {i}: non-finite gradient")
    state.step += 1
    t = state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g64 = g.astype(np.float64)
        m *= beta1
        m += (1 - beta1) * g64
        v *= beta2
        v += (1 - beta2) * g64 * g64
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
    return state
