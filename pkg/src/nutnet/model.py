"""The block autoencoder: a 3-layer convolutional encoder and a 3-layer
transposed-convolutional decoder (~5k parameters for the default 13-pixel
block size), plus deterministic initialization and a checksummed binary
checkpoint format.

Blocks at the API surface are (B, B, 3) arrays in [0, 1]; batched entry
points take (N, B, B, 3). The final decoder layer is linear so outputs may
leave [0, 1] (the training objective drives out-of-distribution inputs to
zero-mean unit-variance noise).
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import splitting
from .errors import ConfigError, DimensionError, IntegrityError, InputError, VersionError
from .kernel import (
    ConvLayer,
    GradientBundle,
    conv_backward,
    conv_forward,
    conv_out_hw,
    leaky_relu,
    leaky_relu_backward,
    tconv_backward,
    tconv_forward,
)

ARCH_ID = "ae6-6.12.16-v1"
DEFAULT_SLOPE = 0.1
_WIDTHS = (6, 12, 16)

CHECKPOINT_MAGIC = b"NNAE"
CHECKPOINT_VERSION = 1


@dataclass
class AEParams:
    """All weights of the autoencoder plus its architecture descriptor."""

    block_size: int
    encoder: list[ConvLayer]
    decoder: list[ConvLayer]
    slope: float = DEFAULT_SLOPE
    arch_id: str = ARCH_ID

    def param_arrays(self) -> list[np.ndarray]:
        """Weights and biases in a fixed order (encoder first)."""
        out: list[np.ndarray] = []
        for layer in [*self.encoder, *self.decoder]:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    @property
    def param_count(self) -> int:
        return sum(layer.param_count for layer in [*self.encoder, *self.decoder])

    def copy(self) -> "AEParams":
        enc = [
            ConvLayer(
                l.out_channels, l.in_channels, l.kernel_size, l.stride, l.padding,
                l.output_padding, l.weight.copy(), l.bias.copy(),
            )
            for l in self.encoder
        ]
        dec = [
            ConvLayer(
                l.out_channels, l.in_channels, l.kernel_size, l.stride, l.padding,
                l.output_padding, l.weight.copy(), l.bias.copy(),
            )
            for l in self.decoder
        ]
        return AEParams(self.block_size, enc, dec, self.slope, self.arch_id)


def _plan_architecture(block_size: int) -> tuple[list[dict], list[dict]]:
    """Layer geometry for a given block size.

    Encoder: three stride-2 k3 p1 convolutions widening 3 -> 6 -> 12 -> 16.
    Decoder mirrors them with transposed convolutions; output_padding per
    layer is chosen so the spatial sizes retrace the encoder's exactly.
    """
    if block_size < 8:
        raise ConfigError(f"block size {block_size} < 8 not supported")
    sizes = [block_size]
    for _ in range(3):
        s = (sizes[-1] + 2 - 3) // 2 + 1
        if s < 1:
            raise ConfigError(f"block size {block_size} incompatible with layer strides")
        sizes.append(s)
    chans = (3, *_WIDTHS)
    encoder = [
        dict(out_channels=chans[i + 1], in_channels=chans[i], kernel_size=3,
             stride=2, padding=1, output_padding=0)
        for i in range(3)
    ]
    decoder = []
    for i in range(3):
        cur, target = sizes[3 - i], sizes[2 - i]
        op = target - ((cur - 1) * 2 - 2 + 3)
        if op not in (0, 1):
            raise ConfigError(f"block size {block_size} incompatible with layer strides")
        decoder.append(
            dict(out_channels=chans[2 - i], in_channels=chans[3 - i], kernel_size=3,
                 stride=2, padding=1, output_padding=op)
        )
    return encoder, decoder


def init_params(seed: int, block_size: int = 13) -> AEParams:
    """Deterministic fan-in-scaled uniform initialization."""
    enc_spec, dec_spec = _plan_architecture(block_size)
    rng = np.random.default_rng(seed)

    def make(spec: dict) -> ConvLayer:
        fan_in = spec["in_channels"] * spec["kernel_size"] ** 2
        limit = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(
            -limit, limit,
            size=(spec["out_channels"], spec["in_channels"],
                  spec["kernel_size"], spec["kernel_size"]),
        ).astype(np.float32)
        b = rng.uniform(-limit, limit, size=spec["out_channels"]).astype(np.float32)
        return ConvLayer(weight=w, bias=b, **spec)

    return AEParams(
        block_size=block_size,
        encoder=[make(s) for s in enc_spec],
        decoder=[make(s) for s in dec_spec],
    )


def _to_chw(blocks: np.ndarray, block_size: int) -> tuple[np.ndarray, bool]:
    if blocks.ndim == 3:
        blocks = blocks[None]
        single = True
    elif blocks.ndim == 4:
        single = False
    else:
        raise DimensionError(f"expected (B, B, 3) or (N, B, B, 3), got {blocks.shape}")
    b = block_size
    if blocks.shape[1:] != (b, b, 3):
        raise DimensionError(f"block shape {blocks.shape[1:]} != ({b}, {b}, 3)")
    return np.ascontiguousarray(blocks.transpose(0, 3, 1, 2)), single


def forward_with_cache(params: AEParams, x_chw: np.ndarray) -> tuple[np.ndarray, list]:
    """Run the full network on (N, 3, B, B) input, keeping pre-activation
    inputs of every layer for the backward pass."""
    cache = []
    h = x_chw
    layers = [*params.encoder, *params.decoder]
    n_layers = len(layers)
    for i, layer in enumerate(layers):
        is_tconv = i >= len(params.encoder)
        pre = h
        h = tconv_forward(h, layer) if is_tconv else conv_forward(h, layer)
        act_in = None
        if i < n_layers - 1:  # leaky ReLU on all hidden layers, linear output
            act_in = h
            h = leaky_relu(h, params.slope)
        cache.append((pre, act_in))
    return h, cache


def backward(
    params: AEParams, cache: list, d_out: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients w.r.t. every parameter array (order of ``param_arrays``)
    and the network input, given d(loss)/d(output)."""
    layers = [*params.encoder, *params.decoder]
    grads: list[np.ndarray | None] = [None] * (2 * len(layers))
    g = d_out
    for i in range(len(layers) - 1, -1, -1):
        pre, act_in = cache[i]
        if act_in is not None:
            g = leaky_relu_backward(act_in, g, params.slope)
        is_tconv = i >= len(params.encoder)
        bundle: GradientBundle = (
            tconv_backward(pre, layers[i], g) if is_tconv
            else conv_backward(pre, layers[i], g)
        )
        grads[2 * i] = bundle.d_weight
        grads[2 * i + 1] = bundle.d_bias
        g = bundle.d_input
    return grads, g  # type: ignore[return-value]


def reconstruct_blocks(params: AEParams, blocks: np.ndarray) -> np.ndarray:
    """Batched reconstruction: (N, B, B, 3) in -> (N, B, B, 3) out.

    Uses the channels-last inference fast path; training and gradient code
    go through :func:`forward_with_cache` instead.
    """
    from . import fastpath

    blocks = np.asarray(blocks, dtype=np.float32)
    single = blocks.ndim == 3
    if single:
        blocks = blocks[None]
    b = params.block_size
    if blocks.ndim != 4 or blocks.shape[1:] != (b, b, 3):
        raise DimensionError(f"block shape {blocks.shape} != (N, {b}, {b}, 3)")
    out = fastpath.reconstructor_for(params).run(blocks)
    return out[0] if single else out


def reconstruct_block(params: AEParams, block: np.ndarray) -> np.ndarray:
    """Reconstruct a single (B, B, 3) block."""
    return reconstruct_blocks(params, block)


def reconstruct_image(params: AEParams, image: np.ndarray, block_size: int | None = None):
    """Split ``image`` into blocks, reconstruct each, and reassemble.

    Returns (reconstructed image, original grid, reconstructed grid).
    """
    b = block_size if block_size is not None else params.block_size
    if b != params.block_size:
        raise InputError(f"block size {b} != model block size {params.block_size}")
    grid = splitting.split(image, b)
    recon_blocks = reconstruct_blocks(params, grid.blocks.astype(np.float32))
    recon_grid = splitting.replace_blocks(grid, recon_blocks)
    return splitting.reassemble(recon_grid), grid, recon_grid


def _arch_descriptor(params: AEParams) -> dict:
    def layer_desc(l: ConvLayer) -> dict:
        return dict(out=l.out_channels, inp=l.in_channels, k=l.kernel_size,
                    s=l.stride, p=l.padding, op=l.output_padding)

    return dict(
        arch_id=params.arch_id,
        block_size=params.block_size,
        slope=params.slope,
        encoder=[layer_desc(l) for l in params.encoder],
        decoder=[layer_desc(l) for l in params.decoder],
    )


def save_checkpoint(
    params: AEParams,
    path,
    seed: int | None = None,
    train_config: dict | None = None,
) -> None:
    """Write a versioned, CRC-checksummed binary checkpoint.

    Layout: magic "NNAE" | u16 version | u32 header length | header JSON
    (arch descriptor, seed, training-config echo) | parameter payload
    (little-endian float32, fixed order) | u32 CRC32 of everything before.
    """
    header = dict(
        arch=_arch_descriptor(params),
        seed=seed,
        train_config=train_config or {},
    )
    header_bytes = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<H", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(header_bytes)))
    buf.write(header_bytes)
    for arr in params.param_arrays():
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    payload = buf.getvalue()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(payload)
        f.write(struct.pack("<I", crc))


def load_checkpoint(path) -> AEParams:
    """Read a checkpoint written by :func:`save_checkpoint`; bit-exact."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 14 or raw[:4] != CHECKPOINT_MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint file")
    stored_crc = struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored_crc:
        raise IntegrityError(f"{path}: checksum mismatch")
    version = struct.unpack("<H", raw[4:6])[0]
    if version > CHECKPOINT_VERSION:
        raise VersionError(
            f"{path}: format version {version} > supported {CHECKPOINT_VERSION}"
        )
    hlen = struct.unpack("<I", raw[6:10])[0]
    header = json.loads(raw[10 : 10 + hlen].decode())
    arch = header["arch"]

    def build(desc: dict) -> ConvLayer:
        return ConvLayer(
            out_channels=desc["out"], in_channels=desc["inp"], kernel_size=desc["k"],
            stride=desc["s"], padding=desc["p"], output_padding=desc["op"],
        )

    params = AEParams(
        block_size=arch["block_size"],
        encoder=[build(d) for d in arch["encoder"]],
        decoder=[build(d) for d in arch["decoder"]],
        slope=arch["slope"],
        arch_id=arch["arch_id"],
    )
    offset = 10 + hlen
    for arr in params.param_arrays():
        n = arr.size * 4
        arr[...] = np.frombuffer(raw[offset : offset + n], dtype="<f4").reshape(arr.shape)
        offset += n
    if offset != len(raw) - 4:
        raise IntegrityError(f"{path}: payload length mismatch")
    return params


def checkpoint_metadata(path) -> dict:
    """Header of a checkpoint (arch descriptor, seed, training config)."""
    with open(path, "rb") as f:
        head = f.read(10)
    if head[:4] != CHECKPOINT_MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint file")
    hlen = struct.unpack("<I", head[6:10])[0]
    with open(path, "rb") as f:
        f.seek(10)
        return json.loads(f.read(hlen).decode())
