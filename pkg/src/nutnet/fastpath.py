"""Inference fast path for batched block reconstruction.

The generic kernel keeps exact forward/backward pairs for training; this
module specializes the forward pass for throughput: channels-last layout,
numba-compiled gather/scatter with contiguous per-row copies, one BLAS GEMM
per layer, and fused bias + activation passes. Results match the generic
path to float32 round-off.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .model import AEParams


@njit(cache=True, fastmath=True)
def _im2col(xp, s, k, ho, wo, cols):
    # xp (N, Hp, Wp, C) padded input -> cols (N*ho*wo, k*k*C)
    n, _, _, c = xp.shape
    for ni in range(n):
        row0 = ni * ho * wo
        for i in range(ho):
            for j in range(wo):
                r = row0 + i * wo + j
                q = 0
                for ki in range(k):
                    ii = i * s + ki
                    for kj in range(k):
                        jj = j * s + kj
                        for ci in range(c):
                            cols[r, q] = xp[ni, ii, jj, ci]
                            q += 1
    return cols


@njit(cache=True, fastmath=True)
def _bias_act(h, bias, slope, apply_act):
    # h (M, O) GEMM output; adds bias and (optionally) leaky-ReLU in place.
    m, o = h.shape
    for r in range(m):
        for c in range(o):
            v = h[r, c] + bias[c]
            if apply_act and v < 0.0:
                v *= slope
            h[r, c] = v
    return h


@njit(cache=True, fastmath=True)
def _col2im_bias_act(cols, s, k, size, out_size, p, c_out, bias, slope, apply_act, out):
    # cols (N*size*size, k*k*O) tap contributions of a transposed conv ->
    # out (N, out_size, out_size, O), overlap-added on a padded canvas and
    # then cropped with bias and activation fused into the final pass.
    n = out.shape[0]
    pad = out_size + 2 * p
    canvas = np.empty((pad, pad, c_out), dtype=cols.dtype)
    for ni in range(n):
        canvas[:, :, :] = 0.0
        row0 = ni * size * size
        for i in range(size):
            for j in range(size):
                r = row0 + i * size + j
                q = 0
                for ki in range(k):
                    ii = i * s + ki
                    for kj in range(k):
                        jj = j * s + kj
                        for c in range(c_out):
                            canvas[ii, jj, c] += cols[r, q]
                            q += 1
        for i in range(out_size):
            for j in range(out_size):
                for c in range(c_out):
                    v = canvas[i + p, j + p, c] + bias[c]
                    if apply_act and v < 0.0:
                        v *= slope
                    out[ni, i, j, c] = v
    return out


@njit(cache=True, fastmath=True)
def _dualmask_apply(img, recon_blocks, rows, cols, b, hot, k2, fill, m1, m2, m, out):
    """Fused DualMask: fills m1/m2/m and the masked image in one pass.

    ``recon_blocks`` is the (rows*cols, B, B, 3) reconstruction; pixels
    outside the tiled region keep the original value and are never masked.
    """
    h, w = img.shape[0], img.shape[1]
    for i in range(h):
        bi = i // b
        for j in range(w):
            bj = j // b
            inside = bi < rows and bj < cols
            v1 = inside and hot[bi, bj]
            v2 = False
            if inside:
                t = bi * cols + bj
                ti = i - bi * b
                tj = j - bj * b
                peak = 0.0
                for c in range(3):
                    d = img[i, j, c] - recon_blocks[t, ti, tj, c]
                    if d < 0.0:
                        d = -d
                    if d > peak:
                        peak = d
                v2 = peak > k2
            m1[i, j] = v1
            m2[i, j] = v2
            hit = v1 and v2
            m[i, j] = hit
            for c in range(3):
                out[i, j, c] = fill if hit else img[i, j, c]
    return out


# Reusable intermediate buffers, keyed by (tag, shape). Only scratch arrays
# live here; anything returned to the caller is freshly allocated. The
# library is single-threaded, matching the rest of the numeric kernel.
_SCRATCH: dict[tuple, np.ndarray] = {}


def _scratch(tag: str, shape: tuple, zero: bool = False) -> np.ndarray:
    key = (tag, shape)
    buf = _SCRATCH.get(key)
    if buf is None:
        buf = np.zeros(shape, dtype=np.float32)
        if len(_SCRATCH) > 64:
            _SCRATCH.clear()
        _SCRATCH[key] = buf
    elif zero:
        buf[...] = 0.0
    return buf


class FastReconstructor:
    """Packed weights and layer plan for one set of autoencoder parameters."""

    def __init__(self, params: AEParams):
        self.block_size = params.block_size
        self.slope = np.float32(params.slope)
        self.enc = []
        size = params.block_size
        for layer in params.encoder:
            k, s, p = layer.kernel_size, layer.stride, layer.padding
            out_size = (size + 2 * p - k) // s + 1
            # (O, C, k, k) -> (k*k*C, O) matching im2col column order
            wm = np.ascontiguousarray(
                layer.weight.transpose(2, 3, 1, 0).reshape(-1, layer.out_channels)
            ).astype(np.float32)
            self.enc.append((wm, layer.bias.astype(np.float32), k, s, p,
                             layer.in_channels, size, out_size))
            size = out_size
        self.dec = []
        for layer in params.decoder:
            k, s, p, op = (layer.kernel_size, layer.stride, layer.padding,
                           layer.output_padding)
            out_size = (size - 1) * s - 2 * p + k + op
            # (O, C, k, k) with C = tconv input channels -> (C, k*k*O)
            wm = np.ascontiguousarray(
                layer.weight.transpose(1, 2, 3, 0).reshape(layer.in_channels, -1)
            ).astype(np.float32)
            self.dec.append((wm, layer.bias.astype(np.float32), k, s, p,
                             layer.out_channels, size, out_size))
            size = out_size

    def run(self, blocks: np.ndarray) -> np.ndarray:
        """(N, B, B, 3) blocks in, (N, B, B, 3) reconstructions out."""
        n = blocks.shape[0]
        h = np.ascontiguousarray(blocks, dtype=np.float32)
        n_layers = len(self.enc) + len(self.dec)
        li = 0
        for wm, bias, k, s, p, c_in, size, out_size in self.enc:
            # padding ring is zeroed once at buffer creation and only the
            # interior is rewritten, so it stays zero across reuses
            hp = _scratch(f"pad{li}", (n, size + 2 * p, size + 2 * p, c_in))
            hp[:, p : p + size, p : p + size, :] = h
            cols = _scratch(f"cols{li}", (n * out_size * out_size, k * k * c_in))
            _im2col(hp, s, k, out_size, out_size, cols)
            y = _scratch(f"y{li}", (n * out_size * out_size, wm.shape[1]))
            np.dot(cols, wm, out=y)
            li += 1
            _bias_act(y, bias, self.slope, li < n_layers)
            h = y.reshape(n, out_size, out_size, -1)
        for wm, bias, k, s, p, c_out, size, out_size in self.dec:
            cols = _scratch(f"cols{li}", (n * size * size, wm.shape[1]))
            np.dot(h.reshape(n * size * size, -1), wm, out=cols)
            li += 1
            last = li == n_layers
            if last:
                out = np.empty((n, out_size, out_size, c_out), dtype=np.float32)
            else:
                out = _scratch(f"out{li}", (n, out_size, out_size, c_out))
            _col2im_bias_act(
                cols, s, k, size, out_size, p, c_out, bias, self.slope, not last, out
            )
            h = out
        return h


def reconstructor_for(params: AEParams) -> FastReconstructor:
    """Fast-path runner for the given parameters. Packing the weights costs
    microseconds, so a fresh runner per call is cheaper than cache
    invalidation when parameters change during training."""
    return FastReconstructor(params)
