"""Small sequential CNN with manual backprop, batched over images.

Layers operate on ``(B, H, W, c)`` arrays.  The convolution layer wraps
the filter-bank machinery of :mod:`maskconv.layers`; its batched columns
run through the same fixed-order reductions, so per-sample outputs equal
the single-image path bit for bit.  The dense layers use ``einsum`` with
its default sequential contraction for the same reason: identical runs
must produce identical bytes.
"""

from __future__ import annotations

import numpy as np

from maskconv.convref import ShapeError, column_sums, conv_output_size
from maskconv.layers import (
    FilterBank,
    LayerSpec,
    grads_from_secondary,
    secondary_matrix,
    _secondary_grads,
)
from maskconv.masks import (
    MaskSet,
    agent_update,
    init_learnable,
    ortho_grad,
    ortho_loss,
    random_masks,
    sign_binarize,
)


def _batched_cols(xb: np.ndarray, d: int, stride: int, padding: int) -> np.ndarray:
    """im2col over a batch: (V, B * l) columns, batch-major."""
    b, h, w, c = xb.shape
    if padding:
        xb = np.pad(xb, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(xb, (d, d), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    patches = windows.transpose(0, 1, 2, 4, 5, 3).reshape(-1, d * d * c)
    return np.ascontiguousarray(patches.T)


class MaskedConv:
    """Convolution layer deriving its outputs from masked primary filters."""

    def __init__(self, spec: LayerSpec, seed: int, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        fan_in = spec.d * spec.d * spec.c
        self.filters = (
            rng.normal(size=(spec.k, spec.d, spec.d, spec.c)) * np.sqrt(2.0 / fan_in)
        ).astype(self.dtype)
        self.biases = (
            np.zeros(spec.n_secondary, dtype=self.dtype) if spec.has_biases else None
        )
        self.latent: np.ndarray | None = None
        if spec.variant == "learnable":
            if spec.strategy == "random-fixed":
                self.masks: MaskSet | None = random_masks(
                    spec.k, spec.s, spec.d, spec.c, seed
                )
            else:
                self.latent, self.masks = init_learnable(
                    spec.k, spec.s, spec.d, spec.c, spec.strategy, seed
                )
        else:
            self.masks = spec.structural_masks()
        self._cols = None
        self._in_shape = None
        self.grad_filters = None
        self.grad_biases = None
        self.grad_masks = None

    @property
    def trainable_masks(self) -> bool:
        return self.latent is not None

    def bank(self) -> FilterBank:
        return FilterBank(self.filters, self.biases)

    def binarize(self) -> tuple[int, int]:
        """Refresh masks from the latent; returns (flipped bits, total bits)."""
        if not self.trainable_masks:
            return 0, 0
        ms = self.masks
        new = sign_binarize(self.latent, ms.kind, ms.d, ms.c, ms.s, ms.k)
        flipped = int(round(new.flip_fraction(ms) * ms.n_masks * ms.bits_per_mask))
        self.masks = new
        return flipped, ms.n_masks * ms.bits_per_mask

    def forward(self, xb: np.ndarray) -> np.ndarray:
        spec = self.spec
        if xb.shape[3] != spec.c:
            raise ShapeError(f"layer {spec.name}: expected {spec.c} channels, got {xb.shape}")
        cols = _batched_cols(xb.astype(self.dtype, copy=False), spec.d, spec.stride, spec.padding)
        b = xb.shape[0]
        h_out = conv_output_size(xb.shape[1], spec.d, spec.stride, spec.padding)
        w_out = conv_output_size(xb.shape[2], spec.d, spec.stride, spec.padding)
        fhat = secondary_matrix(self.bank(), self.masks, spec).astype(self.dtype, copy=False)
        out = np.empty((b, h_out, w_out, spec.n_secondary), dtype=self.dtype)
        flat = out.reshape(b * h_out * w_out, spec.n_secondary)
        for j in range(spec.n_secondary):
            col = column_sums(cols * fhat[:, j][:, None])
            if self.biases is not None:
                col = col + self.biases[j]
            flat[:, j] = col
        self._cols = cols
        self._in_shape = xb.shape
        self._out_hw = (h_out, w_out)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        spec = self.spec
        b, h, w, c = self._in_shape
        h_out, w_out = self._out_hw
        grad_flat = grad_out.reshape(b * h_out * w_out, spec.n_secondary)
        ghat = _secondary_grads(self._cols, grad_flat)
        grad_f, grad_m = grads_from_secondary(ghat, self.bank(), self.masks, spec)
        self.grad_filters = grad_f
        self.grad_masks = grad_m
        if self.biases is not None:
            self.grad_biases = np.add.reduce(grad_flat, axis=0)

        fhat = secondary_matrix(self.bank(), self.masks, spec).astype(self.dtype, copy=False)
        grad_cols = np.zeros_like(self._cols)
        for j in range(spec.n_secondary):
            grad_cols += fhat[:, j][:, None] * grad_flat[:, j][None, :]
        blocks = grad_cols.T.reshape(b, h_out, w_out, spec.d, spec.d, spec.c)
        pad = spec.padding
        grad_pad = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=grad_cols.dtype)
        st = spec.stride
        for a_ in range(spec.d):
            for b_ in range(spec.d):
                grad_pad[
                    :, a_ : a_ + st * h_out : st, b_ : b_ + st * w_out : st, :
                ] += blocks[:, :, :, a_, b_, :]
        grad_x = grad_pad[:, pad : pad + h, pad : pad + w, :] if pad else grad_pad
        if spec.variant == "spatial":
            grad_x = grad_x / spec.s
        return grad_x

    def ortho_loss(self) -> float:
        return ortho_loss(self.masks) if self.trainable_masks else 0.0

    def update_masks(self, lr: float, lam: float) -> None:
        if not self.trainable_masks:
            return
        grad = self.grad_masks + lam * ortho_grad(self.masks)
        self.latent = agent_update(self.latent, self.masks, grad, lr)

    def sgd(self, lr: float) -> None:
        self.filters = self.filters - (lr * self.grad_filters).astype(self.dtype)
        if self.biases is not None:
            self.biases = self.biases - (lr * self.grad_biases).astype(self.dtype)


class ReLU:
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad):
        return grad * self._mask


class AvgPool2:
    """2x2 average pooling, stride 2; spatial dims must be even."""

    def forward(self, x):
        b, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"AvgPool2 needs even spatial dims, got {x.shape}")
        self._in_shape = x.shape
        return x.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def backward(self, grad):
        b, h, w, c = self._in_shape
        up = np.repeat(np.repeat(grad, 2, axis=1), 2, axis=2)
        return (up / 4.0).astype(grad.dtype)


class Flatten:
    def forward(self, x):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._in_shape)


class Dense:
    def __init__(self, n_in: int, n_out: int, seed: int, dtype=np.float32, init_scale: float = 1.0):
        rng = np.random.default_rng(seed)
        self.w = (rng.normal(size=(n_in, n_out)) * np.sqrt(2.0 / n_in) * init_scale).astype(dtype)
        self.b = np.zeros(n_out, dtype=dtype)

    def forward(self, x):
        self._x = x
        return np.einsum("bi,io->bo", x, self.w) + self.b

    def backward(self, grad):
        self.grad_w = np.einsum("bi,bo->io", self._x, grad)
        self.grad_b = np.add.reduce(grad, axis=0)
        return np.einsum("bo,io->bi", grad, self.w)

    def sgd(self, lr: float) -> None:
        self.w = self.w - (lr * self.grad_w).astype(self.w.dtype)
        self.b = self.b - (lr * self.grad_b).astype(self.b.dtype)


class Network:
    """A plain layer stack: forward, backward, and parameter updates."""

    def __init__(self, layers: list):
        self.layers = layers

    def conv_layers(self) -> list[MaskedConv]:
        return [l for l in self.layers if isinstance(l, MaskedConv)]

    def binarize_masks(self) -> float:
        """Refresh all learnable masks; returns the overall bit flip rate."""
        flipped = total = 0
        for layer in self.conv_layers():
            f, t = layer.binarize()
            flipped += f
            total += t
        return flipped / total if total else 0.0

    def forward(self, xb: np.ndarray) -> np.ndarray:
        out = xb
        for layer in self.layers:
            out = layer.forward(out)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def sgd(self, lr: float) -> None:
        for layer in self.layers:
            if hasattr(layer, "sgd"):
                layer.sgd(lr)

    def update_masks(self, lr: float, lam: float) -> None:
        for layer in self.conv_layers():
            layer.update_masks(lr, lam)

    def ortho_loss(self) -> float:
        return sum(layer.ortho_loss() for layer in self.conv_layers())

    def mask_sets(self) -> list[MaskSet]:
        return [l.masks for l in self.conv_layers() if l.masks is not None]

    def conv_param_counts(self):
        """(fp32 values, mask bits) across conv layers, as stored."""
        values = bits = 0
        for layer in self.conv_layers():
            values += layer.filters.size
            if layer.spec.variant == "learnable" and layer.masks is not None:
                bits += layer.masks.n_masks * layer.masks.bits_per_mask
        return values, bits


def build_small_cnn(
    variant: str = "standard",
    strategy: str | None = None,
    s: int = 1,
    conv1_maps: int = 8,
    conv2_maps: int = 16,
    hidden: int = 64,
    n_classes: int = 10,
    input_hw: int = 28,
    input_c: int = 1,
    lam: float = 0.0,
    seed: int = 0,
    dtype=np.float32,
    c_hat: int | None = None,
    g: int | None = None,
) -> Network:
    """Two conv layers (5x5 then 3x3), two pools, and a two-layer head.

    ``conv*_maps`` fixes the feature-map count; the stored primary-filter
    count k shrinks by the variant's mask multiplicity.  Sized so a run on
    a 10k-image 28x28 dataset takes minutes on a laptop CPU.
    """
    rng = np.random.default_rng(seed)
    seeds = [int(x) for x in rng.integers(0, 2**31 - 1, size=4)]

    def conv_spec(d, c, maps, name):
        if variant == "standard":
            return LayerSpec("standard", d=d, c=c, k=maps, name=name)
        if variant == "spatial":
            mult = (d + 1) // 2
            if maps % mult:
                raise ShapeError(f"{maps} maps not divisible by {mult} scales")
            return LayerSpec("spatial", d=d, c=c, k=maps // mult, name=name)
        if variant == "channel":
            windows = (c - c_hat) // g + 1
            if maps % windows:
                raise ShapeError(f"{maps} maps not divisible by {windows} windows")
            return LayerSpec("channel", d=d, c=c, k=maps // windows, c_hat=c_hat, g=g, name=name)
        if maps % s:
            raise ShapeError(f"{maps} maps not divisible by s={s}")
        return LayerSpec(
            "learnable", d=d, c=c, k=maps // s, s=s, strategy=strategy, lam=lam, name=name
        )

    if variant == "channel":
        # channel windows need enough input channels; the first layer keeps
        # standard convolution, as is conventional for channel striding
        spec1 = LayerSpec("standard", d=5, c=input_c, k=conv1_maps, name="conv1")
    else:
        spec1 = conv_spec(5, input_c, conv1_maps, "conv1")
    spec2 = conv_spec(3, conv1_maps, conv2_maps, "conv2")
    hw1 = conv_output_size(input_hw, 5) // 2
    hw2 = conv_output_size(hw1, 3) // 2
    return Network(
        [
            MaskedConv(spec1, seeds[0], dtype),
            ReLU(),
            AvgPool2(),
            MaskedConv(spec2, seeds[1], dtype),
            ReLU(),
            AvgPool2(),
            Flatten(),
            Dense(hw2 * hw2 * conv2_maps, hidden, seeds[2], dtype),
            ReLU(),
            # near-zero classifier logits at init keep early steps gentle
            Dense(hidden, n_classes, seeds[3], dtype, init_scale=0.02),
        ]
    )
