"""Binary checkpoint format for the small CNN stack.

Layout (all little-endian):

    magic b"MKCV" | u32 version | u32 layer count | layer records...

Layer records start with a u8 tag (1 conv, 2 relu, 3 avgpool, 4 flatten,
5 dense).  Conv records carry the layer spec, primary filters as float32,
biases, bit-packed masks, and optionally the real latent behind learnable
masks.  Dense records carry the weight matrix and bias vector.  Loading a
saved model reproduces its forward outputs bit-exactly at 32-bit, and a
second save of the loaded model is byte-identical.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from maskconv.layers import LayerSpec
from maskconv.masks import MaskSet
from maskconv.network import AvgPool2, Dense, Flatten, MaskedConv, Network, ReLU

MAGIC = b"MKCV"
VERSION = 1

_VARIANT_CODE = {"standard": 0, "spatial": 1, "channel": 2, "learnable": 3}
_STRATEGY_CODE = {None: 0, "shared": 1, "separate": 2, "random-fixed": 3}
_VARIANT_NAME = {v: k for k, v in _VARIANT_CODE.items()}
_STRATEGY_NAME = {v: k for k, v in _STRATEGY_CODE.items()}


class CheckpointError(ValueError):
    """Raised on malformed checkpoint files."""


def _f32(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _conv_record(layer: MaskedConv) -> bytes:
    spec = layer.spec
    parts = [
        struct.pack(
            "<BB8If",
            _VARIANT_CODE[spec.variant],
            _STRATEGY_CODE[spec.strategy],
            spec.d,
            spec.c,
            spec.k,
            spec.s,
            spec.c_hat or 0,
            spec.g or 0,
            spec.stride,
            spec.padding,
            spec.lam,
        ),
        struct.pack(
            "<BBB",
            layer.biases is not None,
            layer.masks is not None and spec.variant == "learnable",
            layer.latent is not None,
        ),
        _f32(layer.filters),
    ]
    if layer.biases is not None:
        parts.append(_f32(layer.biases))
    if layer.masks is not None and spec.variant == "learnable":
        parts.append(struct.pack("<II", *layer.masks.words.shape))
        parts.append(np.ascontiguousarray(layer.masks.words, dtype="<u4").tobytes())
    if layer.latent is not None:
        parts.append(_f32(layer.latent))
    return b"".join(parts)


def save_checkpoint(model: Network, path: str | Path) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(model.layers))]
    for layer in model.layers:
        if isinstance(layer, MaskedConv):
            parts.append(struct.pack("<B", 1))
            parts.append(_conv_record(layer))
        elif isinstance(layer, ReLU):
            parts.append(struct.pack("<B", 2))
        elif isinstance(layer, AvgPool2):
            parts.append(struct.pack("<B", 3))
        elif isinstance(layer, Flatten):
            parts.append(struct.pack("<B", 4))
        elif isinstance(layer, Dense):
            parts.append(struct.pack("<B", 5))
            parts.append(struct.pack("<II", *layer.w.shape))
            parts.append(_f32(layer.w))
            parts.append(_f32(layer.b))
        else:
            raise CheckpointError(f"cannot serialize layer {type(layer).__name__}")
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: wanted {size} bytes at offset {self.offset}, "
                f"file has {len(self.data)}"
            )
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def f32(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        raw = np.frombuffer(self.take(4 * count), dtype="<f4")
        return raw.reshape(shape).astype(np.float32)


def _read_conv(r: _Reader) -> MaskedConv:
    variant_code, strategy_code, d, c, k, s, c_hat, g, stride, padding, lam = r.unpack("<BB8If")
    variant = _VARIANT_NAME.get(variant_code)
    strategy = _STRATEGY_NAME.get(strategy_code)
    if variant is None:
        raise CheckpointError(f"unknown variant code {variant_code} at offset {r.offset}")
    spec = LayerSpec(
        variant,
        d=d,
        c=c,
        k=k,
        strategy=strategy,
        s=s if variant == "learnable" else None,
        c_hat=c_hat if variant == "channel" else None,
        g=g if variant == "channel" else None,
        stride=stride,
        padding=padding,
        lam=float(lam),
    )
    has_biases, has_masks, has_latent = r.unpack("<BBB")
    layer = MaskedConv(spec, seed=0, dtype=np.float32)
    layer.filters = r.f32((k, d, d, c))
    layer.biases = r.f32((spec.n_secondary,)) if has_biases else None
    if has_masks:
        n_masks, n_words = r.unpack("<II")
        words = np.frombuffer(r.take(4 * n_masks * n_words), dtype="<u4")
        words = words.reshape(n_masks, n_words).astype(np.uint32)
        groups = k if spec.strategy in ("separate", "random-fixed") else 1
        kind = {
            "shared": "learned-shared",
            "separate": "learned-separate",
            "random-fixed": "random-fixed",
        }[spec.strategy]
        layer.masks = MaskSet(kind, words, d, c, s, groups)
    elif spec.variant != "learnable":
        layer.masks = spec.structural_masks()
    else:
        layer.masks = None
    layer.latent = (
        r.f32((d * d * c, layer.masks.n_masks)).astype(np.float64) if has_latent else None
    )
    return layer


def load_checkpoint(path: str | Path) -> Network:
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"bad magic in {path}: not a checkpoint file")
    version, n_layers = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (want {VERSION})")
    layers = []
    for _ in range(n_layers):
        (tag,) = r.unpack("<B")
        if tag == 1:
            layers.append(_read_conv(r))
        elif tag == 2:
            layers.append(ReLU())
        elif tag == 3:
            layers.append(AvgPool2())
        elif tag == 4:
            layers.append(Flatten())
        elif tag == 5:
            n_in, n_out = r.unpack("<II")
            dense = Dense(n_in, n_out, seed=0)
            dense.w = r.f32((n_in, n_out))
            dense.b = r.f32((n_out,))
            layers.append(dense)
        else:
            raise CheckpointError(f"unknown layer tag {tag} at offset {r.offset - 1}")
    if r.offset != len(data):
        raise CheckpointError(
            f"trailing bytes: parsed {r.offset} of {len(data)}"
        )
    return Network(layers)
