"""Reference convolution: patch extraction and exact, fixed-order kernels.

Everything else in the package is checked against this module, so the two
conventions below are load-bearing and must never drift:

Canonical vectorization order.
    A ``d x d x c`` block (filter, mask, or input patch) is flattened
    row-major with the channel index innermost::

        vec index v = (p * d + q) * c + ch

    for spatial position ``(p, q)`` and channel ``ch``.  This is exactly
    ``block.reshape(-1)`` on an array of shape ``(d, d, c)``.  Patch-matrix
    columns, stacked filter matrices, and bit-packed masks all share this
    order; mixing orders would silently misalign mask bits with filter
    entries.

Fixed reduction order.
    All dot products are computed as an elementwise product followed by
    ``column_sums`` (a sequential reduction over the leading axis).  The
    order never depends on thread count or on which entries happen to be
    zero, so a masked summation over cached products reproduces the
    reference convolution bit for bit.

Inputs are ``H x W x c`` arrays, filters ``d x d x c``, outputs
``H' x W'`` with ``H' = (H + 2*padding - d) // stride + 1``.  Padding reads
as zero.  Only square kernels are supported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes cannot be convolved."""


def conv_output_size(size: int, d: int, stride: int = 1, padding: int = 0) -> int:
    """Output extent of a convolution along one spatial axis."""
    if d < 1 or stride < 1 or padding < 0:
        raise ShapeError(f"invalid geometry d={d} stride={stride} padding={padding}")
    if size + 2 * padding < d:
        raise ShapeError(
            f"kernel d={d} exceeds padded input extent {size} + 2*{padding}"
        )
    return (size + 2 * padding - d) // stride + 1


def column_sums(products: np.ndarray) -> np.ndarray:
    """Sum a 2-d array over axis 0 in a fixed sequential order.

    ``np.add.reduce`` over the leading axis of a C-contiguous array
    accumulates row by row, which makes the result independent of any
    interleaved exact zeros.  Every convolution path in the package funnels
    its reduction through here.
    """
    return np.add.reduce(products, axis=0)


def vec(block: np.ndarray) -> np.ndarray:
    """Flatten a (d, d, c) block in the canonical order."""
    return np.ascontiguousarray(block).reshape(-1)


@dataclass(frozen=True)
class PatchMatrix:
    """im2col result: one column per output position, canonical vec order.

    ``cols`` has shape ``(d*d*c, h_out*w_out)``; column ``p*w_out + q`` is
    the vectorized receptive field of output pixel ``(p, q)``.
    """

    cols: np.ndarray
    d: int
    stride: int
    padding: int
    h: int
    w: int
    c: int
    h_out: int
    w_out: int

    @property
    def n_patches(self) -> int:
        return self.h_out * self.w_out


def _check_input(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise ShapeError(f"expected H x W x c input, got shape {x.shape}")
    return x


def im2col(x: np.ndarray, d: int, stride: int = 1, padding: int = 0) -> PatchMatrix:
    """Extract overlapping patches of ``x`` as columns.

    Padded cells read as zero.  Raises :class:`ShapeError` when the kernel
    exceeds the padded input.
    """
    x = _check_input(x)
    h, w, c = x.shape
    h_out = conv_output_size(h, d, stride, padding)
    w_out = conv_output_size(w, d, stride, padding)
    if padding:
        x = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    # windows: (h_p - d + 1, w_p - d + 1, c, d, d) -> stride slice -> reorder
    windows = np.lib.stride_tricks.sliding_window_view(x, (d, d), axis=(0, 1))
    windows = windows[::stride, ::stride]
    # (h_out, w_out, c, d, d) -> (h_out, w_out, d, d, c) -> (l, d*d*c)
    patches = windows.transpose(0, 1, 3, 4, 2).reshape(h_out * w_out, d * d * c)
    cols = np.ascontiguousarray(patches.T)
    return PatchMatrix(cols, d, stride, padding, h, w, c, h_out, w_out)


def col2im(grad_cols: np.ndarray, pm: PatchMatrix) -> np.ndarray:
    """Scatter-add patch-column gradients back onto the input grid.

    Adjoint of :func:`im2col`: overlapping positions accumulate.
    """
    d, c = pm.d, pm.c
    if grad_cols.shape != (d * d * c, pm.n_patches):
        raise ShapeError(
            f"grad_cols shape {grad_cols.shape} does not match patch matrix"
        )
    h_p, w_p = pm.h + 2 * pm.padding, pm.w + 2 * pm.padding
    grad_pad = np.zeros((h_p, w_p, c), dtype=grad_cols.dtype)
    blocks = grad_cols.T.reshape(pm.h_out, pm.w_out, d, d, c)
    rows = pm.stride * np.arange(pm.h_out)
    colposns = pm.stride * np.arange(pm.w_out)
    for a in range(d):
        for b in range(d):
            grad_pad[np.ix_(rows + a, colposns + b)] += blocks[:, :, a, b, :]
    if pm.padding:
        p = pm.padding
        return grad_pad[p : p + pm.h, p : p + pm.w, :]
    return grad_pad


def conv_reference(
    x: np.ndarray,
    f: np.ndarray,
    stride: int = 1,
    padding: int = 0,
    bias: float = 0.0,
) -> np.ndarray:
    """Ground-truth single-filter convolution.

    ``y[p, q]`` is the sum over the receptive field of elementwise
    products, plus ``bias``.  Bit-identical to a matmul over im2col
    columns because both run the same fixed-order reduction.
    """
    x = _check_input(x)
    f = np.asarray(f)
    if f.ndim == 2:
        f = f[:, :, None]
    if f.ndim != 3 or f.shape[0] != f.shape[1]:
        raise ShapeError(f"expected square d x d x c filter, got shape {f.shape}")
    if f.shape[2] != x.shape[2]:
        raise ShapeError(
            f"filter has {f.shape[2]} channels but input has {x.shape[2]}"
        )
    pm = im2col(x, f.shape[0], stride, padding)
    y = column_sums(pm.cols * vec(f)[:, None]) + bias
    return y.reshape(pm.h_out, pm.w_out)


def matmul_conv(patches: PatchMatrix | np.ndarray, filters: np.ndarray) -> np.ndarray:
    """Convolution in matrix form: ``Y = X^T F``.

    ``filters`` is ``(d*d*c, n)`` (or a single ``(d*d*c,)`` column); the
    returned ``(l, n)`` matrix holds the full feature map of filter ``i``
    in column ``i``.  Computed one filter at a time through
    :func:`column_sums` so the result matches :func:`conv_reference`
    exactly.
    """
    cols = patches.cols if isinstance(patches, PatchMatrix) else np.asarray(patches)
    filters = np.asarray(filters)
    single = filters.ndim == 1
    if single:
        filters = filters[:, None]
    if filters.shape[0] != cols.shape[0]:
        raise ShapeError(
            f"filter rows {filters.shape[0]} != patch rows {cols.shape[0]}"
        )
    out = np.empty((cols.shape[1], filters.shape[1]), dtype=np.result_type(cols, filters))
    for i in range(filters.shape[1]):
        out[:, i] = column_sums(cols * filters[:, i][:, None])
    return out[:, 0] if single else out
