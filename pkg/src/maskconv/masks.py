"""Binary mask sets that derive secondary filters from primary filters.

A mask is a bit vector of length ``d*d*c`` in the canonical vec order of
:mod:`maskconv.convref`, stored bit-packed 32 bits per word (vec index
``32*w + b`` lives in bit ``b`` of word ``w``).  Four families:

* ``spatial``          nested centered squares, ``s = ceil(d/2)`` scales;
* ``channel-window``   a ``c_hat``-channel window slid with stride ``g``;
* ``learned-*``        bits behind a real latent matrix, trained with a
                       straight-through estimator;
* ``random-fixed``     fair-coin bits, frozen.

Shared-style kinds hold one group of ``s`` masks applied to every primary
filter; the separate kind holds ``k`` groups of ``s``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SHARED_KINDS = ("spatial", "channel-window", "learned-shared")
SEPARATE_KINDS = ("learned-separate", "random-fixed")
KINDS = SHARED_KINDS + SEPARATE_KINDS


class MaskError(ValueError):
    """Raised on invalid mask construction parameters."""


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack rows of 0/1 values into little-endian 32-bit words."""
    bits = np.atleast_2d(np.asarray(bits)).astype(np.uint8)
    n, nbits = bits.shape
    n_words = (nbits + 31) // 32
    padded = np.zeros((n, n_words * 32), dtype=np.uint8)
    padded[:, :nbits] = bits
    packed = np.packbits(padded, axis=1, bitorder="little")
    return packed.view("<u4").reshape(n, n_words).astype(np.uint32)


def unpack_bits(words: np.ndarray, nbits: int) -> np.ndarray:
    """Inverse of :func:`pack_bits`; returns uint8 rows of length nbits."""
    words = np.atleast_2d(np.asarray(words, dtype="<u4"))
    as_bytes = words.view(np.uint8).reshape(words.shape[0], -1)
    bits = np.unpackbits(as_bytes, axis=1, bitorder="little")
    return bits[:, :nbits]


@dataclass
class MaskSet:
    """A collection of bit-packed masks over a d x d x c filter shape.

    ``words`` is ``(n_masks, ceil(d*d*c/32))`` uint32.  ``s`` is the
    per-primary-filter mask count (scales, windows, or learned masks);
    ``k`` is the number of per-primary groups (1 for shared-style kinds).
    """

    kind: str
    words: np.ndarray
    d: int
    c: int
    s: int
    k: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MaskError(f"unknown mask kind {self.kind!r}")
        expected = self.s * (self.k if self.per_primary else 1)
        if self.words.shape[0] != expected:
            raise MaskError(
                f"{self.kind} mask set expects {expected} masks, "
                f"got {self.words.shape[0]}"
            )

    @property
    def per_primary(self) -> bool:
        return self.kind in SEPARATE_KINDS

    @property
    def bits_per_mask(self) -> int:
        return self.d * self.d * self.c

    @property
    def n_masks(self) -> int:
        return self.words.shape[0]

    def dense(self, dtype=np.float64) -> np.ndarray:
        """Unpacked masks as a (d*d*c, n_masks) 0/1 matrix."""
        return unpack_bits(self.words, self.bits_per_mask).T.astype(dtype)

    def column_index(self, i: int, j: int) -> int:
        """Mask index serving secondary filter (primary i, mask j)."""
        return i * self.s + j if self.per_primary else j

    def ones_counts(self) -> np.ndarray:
        return unpack_bits(self.words, self.bits_per_mask).sum(axis=1)

    def flip_fraction(self, other: "MaskSet") -> float:
        """Fraction of bits that differ from ``other`` (same dims)."""
        a = unpack_bits(self.words, self.bits_per_mask)
        b = unpack_bits(other.words, other.bits_per_mask)
        return float(np.mean(a != b))


def from_dense(bits: np.ndarray, kind: str, d: int, c: int, s: int, k: int = 1) -> MaskSet:
    """Build a MaskSet from a (d*d*c, n_masks) 0/1 matrix."""
    return MaskSet(kind, pack_bits(np.asarray(bits).T), d, c, s, k)


def spatial_masks(d: int, c: int) -> MaskSet:
    """Nested centered-square masks, one per scale.

    Scale ``i`` (1-based) keeps the centered ``(d + 2 - 2i)`` square at
    every channel; scale 1 is all ones and, for odd ``d``, the last scale
    is the single center position.
    """
    if d < 1 or c < 1:
        raise MaskError(f"d and c must be positive, got d={d} c={c}")
    s = (d + 1) // 2
    bits = np.zeros((s, d * d * c), dtype=np.uint8)
    for i in range(1, s + 1):
        grid = np.zeros((d, d), dtype=np.uint8)
        grid[i - 1 : d + 1 - i, i - 1 : d + 1 - i] = 1
        bits[i - 1] = np.repeat(grid.reshape(-1), c)
    return MaskSet("spatial", pack_bits(bits), d, c, s, 1)


def channel_windows(d: int, c: int, c_hat: int, g: int) -> MaskSet:
    """Window masks selecting ``c_hat`` consecutive channels with stride g.

    Window ``i`` (0-based) covers channels ``[i*g, i*g + c_hat)`` at all
    ``d*d`` spatial positions; there are ``(c - c_hat) / g + 1`` windows.
    """
    if not 1 <= c_hat <= c:
        raise MaskError(f"need 1 <= c_hat <= c, got c_hat={c_hat} c={c}")
    if g < 1:
        raise MaskError(f"channel stride g must be >= 1, got {g}")
    if (c - c_hat) % g != 0:
        raise MaskError(f"(c - c_hat) = {c - c_hat} not divisible by g = {g}")
    n = (c - c_hat) // g + 1
    bits = np.zeros((n, d * d * c), dtype=np.uint8)
    for i in range(n):
        chans = np.zeros(c, dtype=np.uint8)
        chans[i * g : i * g + c_hat] = 1
        bits[i] = np.tile(chans, d * d)
    return MaskSet("channel-window", pack_bits(bits), d, c, n, 1)


def random_masks(k: int, s: int, d: int, c: int, seed: int) -> MaskSet:
    """Fair-coin fixed masks, one group of s per primary filter."""
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(k * s, d * d * c), dtype=np.uint8)
    return MaskSet("random-fixed", pack_bits(bits), d, c, s, k)


def sign_binarize(latent: np.ndarray, kind: str, d: int, c: int, s: int, k: int = 1) -> MaskSet:
    """Threshold the latent matrix: bit = 1 iff the entry is > 0.

    Exactly zero binarizes to 0, so a latent pinned at the lower clip
    bound yields an off bit.
    """
    bits = (np.asarray(latent) > 0).astype(np.uint8).T
    return MaskSet(kind, pack_bits(bits), d, c, s, k)


def init_learnable(
    k: int, s: int, d: int, c: int, strategy: str, seed: int
) -> tuple[np.ndarray, MaskSet]:
    """Fresh latent matrix and its binarization.

    Latent entries are i.i.d. uniform on [0, 1] so the initial state is a
    fixed point of the clip; note every initial bit is therefore 1 (the
    threshold sits at zero), and diversity appears only once training
    flips bits.  ``strategy`` is ``"shared"`` (s masks total) or
    ``"separate"`` (s masks per primary filter).
    """
    if k < 1 or s < 1:
        raise MaskError(f"k and s must be >= 1, got k={k} s={s}")
    if strategy not in ("shared", "separate"):
        raise MaskError(f"unknown strategy {strategy!r}")
    rng = np.random.default_rng(seed)
    n_cols = s if strategy == "shared" else k * s
    latent = rng.random((d * d * c, n_cols))
    kind = "learned-shared" if strategy == "shared" else "learned-separate"
    return latent, sign_binarize(latent, kind, d, c, s, k if strategy == "separate" else 1)


def _as_blocks(masks: MaskSet | np.ndarray) -> tuple[np.ndarray, int]:
    """Dense matrix plus per-primary block width for the regularizer."""
    if isinstance(masks, MaskSet):
        return masks.dense(np.float64), masks.s
    m = np.asarray(masks, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    return m, m.shape[1]


def ortho_loss(masks: MaskSet | np.ndarray) -> float:
    """Orthogonality penalty ``0.5 * ||M^T M / (d*d*c) - I||_F^2``.

    Treats mask bits as reals.  Under the separate strategy the penalty is
    evaluated per primary filter's block of ``s`` columns and summed.
    """
    m, block = _as_blocks(masks)
    v = m.shape[0]
    total = 0.0
    for start in range(0, m.shape[1], block):
        mb = m[:, start : start + block]
        gram = mb.T @ mb / v
        diff = gram - np.eye(mb.shape[1])
        total += 0.5 * float(np.sum(diff * diff))
    return total


def ortho_grad(masks: MaskSet | np.ndarray) -> np.ndarray:
    """Gradient of :func:`ortho_loss` w.r.t. the real-relaxed mask matrix.

    Per block: ``(2 / (d*d*c)^2) * M M^T M - (2 / (d*d*c)) * M``.
    """
    m, block = _as_blocks(masks)
    v = m.shape[0]
    out = np.zeros_like(m)
    for start in range(0, m.shape[1], block):
        mb = m[:, start : start + block]
        out[:, start : start + block] = (2.0 / v**2) * (mb @ (mb.T @ mb)) - (2.0 / v) * mb
    return out


def gram_offdiagonal(masks: MaskSet | np.ndarray) -> float:
    """Mean |off-diagonal| of the normalized mask Gram matrix.

    The Gram is ``M^T M / (d*d*c)`` per primary-filter block; its
    off-diagonal magnitudes measure how correlated the masks are (0 for
    orthogonal columns, 1 for identical all-ones masks).
    """
    m, block = _as_blocks(masks)
    v = m.shape[0]
    total = 0.0
    count = 0
    for start in range(0, m.shape[1], block):
        mb = m[:, start : start + block]
        gram = mb.T @ mb / v
        off = ~np.eye(gram.shape[0], dtype=bool)
        total += float(np.sum(np.abs(gram[off])))
        count += int(off.sum())
    return total / count if count else 0.0


def agent_update(
    latent: np.ndarray, masks: MaskSet, grad_m: np.ndarray, lr: float
) -> np.ndarray:
    """Straight-through update of the latent behind the binary masks.

    The latent is first reset to the current bits, then stepped against
    the mask gradient (passed through unchanged) and clipped to [0, 1]::

        H <- clip(M - lr * grad_m, 0, 1)

    Consequences asserted in tests: a set bit flips off only when
    ``lr * grad >= 1`` in a single step, while a cleared bit flips on for
    any negative gradient.
    """
    m = masks.dense(np.float64)
    if grad_m.shape != m.shape:
        raise MaskError(f"grad shape {grad_m.shape} != mask shape {m.shape}")
    del latent  # replaced wholesale by the reset-and-step rule
    return np.clip(m - lr * grad_m, 0.0, 1.0)


def write_mask_records(masks: MaskSet, fileobj) -> None:
    """Serialize masks: per mask a (d, c) header then the packed words.

    Layout per record: two little-endian uint32 (d, c) followed by
    ``ceil(d*d*c/32)`` little-endian uint32 words; bit ``b`` of word ``w``
    holds vec index ``32*w + b``.
    """
    header = np.array([masks.d, masks.c], dtype="<u4").tobytes()
    for row in masks.words:
        fileobj.write(header)
        fileobj.write(np.ascontiguousarray(row, dtype="<u4").tobytes())


def read_mask_records(fileobj) -> list[tuple[int, int, np.ndarray]]:
    """Read records written by :func:`write_mask_records` until EOF.

    Returns (d, c, bits) tuples with bits unpacked to uint8 vectors.
    """
    records = []
    while True:
        header = fileobj.read(8)
        if not header:
            return records
        if len(header) != 8:
            raise MaskError("truncated mask record header")
        d, c = np.frombuffer(header, dtype="<u4")
        n_words = (int(d) * int(d) * int(c) + 31) // 32
        payload = fileobj.read(4 * n_words)
        if len(payload) != 4 * n_words:
            raise MaskError("truncated mask record payload")
        words = np.frombuffer(payload, dtype="<u4")
        records.append((int(d), int(c), unpack_bits(words, int(d) * int(d) * int(c))[0]))
