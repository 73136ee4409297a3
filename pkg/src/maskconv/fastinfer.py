"""Cached-product inference kernel and exact operation accounting.

The kernel exploits that every secondary filter of primary ``f_i`` reads
the same elementwise products: per patch it computes
``cache_i = vec(patch) * vec(f_i)`` once (``d*d*c`` fp32 multiplications
per primary), then reduces the cache under each binary mask with no
further multiplication.  Cost model per patch:

* fp32 MUL:  ``d*d*c * k``  (cache construction only);
* fp32 ADD:  one per mask-selected cache entry;
* MASK:      one 1-bit select per cache entry per mask, charged only for
  learned or random bit masks.  Spatial pyramids and channel windows are
  compile-time index ranges, so they cost no mask ops (and need no stored
  mask bits).

A MASK op is priced at 1/32 of an fp32 MUL in the combined total:
``combined_mul = mul_fp32 + mask_ops / 32``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from maskconv.convref import ShapeError, column_sums, conv_output_size, im2col
from maskconv.layers import FilterBank, LayerSpec, random_bank
from maskconv.masks import MaskSet, from_dense, random_masks

# kinds whose bits are arbitrary and therefore cost mask ops / storage
BITMASK_KINDS = ("learned-shared", "learned-separate", "random-fixed")


class CountMismatchError(AssertionError):
    """Measured operation counts disagree with the closed forms."""


@dataclass
class OpCounts:
    """Operation and storage tallies for a layer or network."""

    mul_fp32: int = 0
    add_fp32: int = 0
    mask_ops: int = 0
    param_values_fp32: int = 0
    mask_bits: int = 0

    @property
    def combined_mul(self) -> float:
        return self.mul_fp32 + self.mask_ops / 32.0

    @property
    def param_equiv32(self) -> float:
        """Parameter storage in 32-bit value equivalents (masks at 1/32)."""
        return self.param_values_fp32 + self.mask_bits / 32.0

    @property
    def memory_bytes(self) -> int:
        return 4 * self.param_values_fp32 + (self.mask_bits + 7) // 8

    def __add__(self, other: "OpCounts") -> "OpCounts":
        return OpCounts(
            self.mul_fp32 + other.mul_fp32,
            self.add_fp32 + other.add_fp32,
            self.mask_ops + other.mask_ops,
            self.param_values_fp32 + other.param_values_fp32,
            self.mask_bits + other.mask_bits,
        )

    def record(self, layer: str = "total") -> str:
        """Machine-readable line: space-separated key=value fields."""
        return (
            f"layer={layer} params={self.param_equiv32:.2f}"
            f" mul_fp32={self.mul_fp32} mask_ops={self.mask_ops}"
            f" combined_mul={self.combined_mul:.2f} add_fp32={self.add_fp32}"
            f" memory_bytes={self.memory_bytes}"
        )


def _counts_masks(masks: MaskSet | None, spec: LayerSpec) -> bool:
    if spec.variant == "standard":
        return False
    return masks is not None and masks.kind in BITMASK_KINDS


def cached_forward(
    x: np.ndarray,
    bank: FilterBank,
    masks: MaskSet | None,
    spec: LayerSpec,
) -> tuple[np.ndarray, OpCounts]:
    """Masked-reduction forward over per-primary cached products.

    Output matches :func:`maskconv.layers.bank_forward` with zero
    difference at 64-bit: the cached entries are the very products the
    reference kernel sums, and skipped entries contribute exact zeros
    under the same fixed reduction order.  Returns the measured
    :class:`OpCounts` alongside the output.
    """
    pm = im2col(x, spec.d, spec.stride, spec.padding)
    v, l = pm.cols.shape
    biases = bank.biases if spec.has_biases else None
    if biases is not None and len(biases) != spec.n_secondary:
        raise ShapeError(f"expected {spec.n_secondary} biases, got {len(biases)}")

    counts = OpCounts(param_values_fp32=v * spec.k)
    charge_masks = _counts_masks(masks, spec)
    if charge_masks:
        counts.mask_bits = v * masks.n_masks

    fmat = bank.filter_matrix()
    dense = None if masks is None else masks.dense(np.bool_)
    y = np.empty((pm.h_out, pm.w_out, spec.n_secondary), dtype=np.result_type(pm.cols, fmat))
    for i in range(spec.k):
        cache = pm.cols * fmat[:, i][:, None]  # one product pass per primary
        counts.mul_fp32 += v * l
        for j in range(spec.s):
            out_idx = i * spec.s + j
            if dense is None:
                selected = cache
                ones = v
            else:
                bits = dense[:, masks.column_index(i, j)]
                selected = np.where(bits[:, None], cache, 0.0)
                ones = int(np.count_nonzero(bits))
                if charge_masks:
                    counts.mask_ops += v * l
            col = column_sums(selected)
            counts.add_fp32 += ones * l
            if biases is not None:
                col = col + biases[out_idx]
            y[:, :, out_idx] = col.reshape(pm.h_out, pm.w_out)
    return y, counts


def predict_counts(spec: LayerSpec, h_out: int, w_out: int) -> OpCounts:
    """Closed-form operation and storage counts for one layer.

    MUL and MASK counts are exact.  The ADD count is exact for variants
    with deterministic masks (densities known from the construction) and
    an expectation of half-dense masks otherwise: learned and random mask
    bits average 0.5, so the ADD total is reported as
    ``0.5 * d*d*c * H' * W' * n`` and verified statistically.
    """
    v = spec.d * spec.d * spec.c
    l = h_out * w_out
    n = spec.n_secondary
    counts = OpCounts(param_values_fp32=v * spec.k)
    counts.mul_fp32 = v * l * spec.k
    if spec.variant == "standard":
        counts.add_fp32 = v * l * n
    elif spec.variant == "spatial":
        per_filter = sum(
            (spec.d + 2 - 2 * i) ** 2 * spec.c for i in range(1, spec.s + 1)
        )
        counts.add_fp32 = l * spec.k * per_filter
    elif spec.variant == "channel":
        counts.add_fp32 = l * spec.k * spec.s * spec.d * spec.d * spec.c_hat
    else:  # learnable / random bit masks
        counts.mask_ops = v * l * n
        counts.add_fp32 = round(0.5 * v * l * n)
        counts.mask_bits = v * spec.s if spec.strategy == "shared" else v * n
    return counts


def _random_bitmask_set(spec: LayerSpec, seed: int) -> MaskSet:
    if spec.strategy == "shared":
        bits = np.random.default_rng(seed).integers(
            0, 2, size=(spec.d**2 * spec.c, spec.s)
        )
        return from_dense(bits, "learned-shared", spec.d, spec.c, spec.s)
    kind_seed_masks = random_masks(spec.k, spec.s, spec.d, spec.c, seed)
    if spec.strategy == "separate":
        return MaskSet(
            "learned-separate", kind_seed_masks.words, spec.d, spec.c, spec.s, spec.k
        )
    return kind_seed_masks


def masks_for_spec(spec: LayerSpec, seed: int = 0) -> MaskSet | None:
    """Construct masks matching a spec: structural, or random bits."""
    if spec.variant in ("spatial", "channel"):
        return spec.structural_masks()
    if spec.variant == "learnable":
        return _random_bitmask_set(spec, seed)
    return None


def measure_vs_predict(spec: LayerSpec, trials: int = 3, seed: int = 0, hw: int = 8) -> dict:
    """Run the cached kernel and check its tallies against the closed forms.

    MUL and MASK tallies must match exactly.  ADD tallies must match
    exactly for deterministic masks and land within +-10% of the
    half-dense expectation for random bit masks.  Raises
    :class:`CountMismatchError` with both numbers on any violation.
    """
    h_out = conv_output_size(hw, spec.d, spec.stride, spec.padding)
    predicted = predict_counts(spec, h_out, h_out)
    deterministic_adds = spec.variant in ("standard", "spatial", "channel")
    results = []
    for trial in range(trials):
        rng = np.random.default_rng(seed + 1000 * trial)
        bank = random_bank(spec, seed + trial)
        masks = masks_for_spec(spec, seed + trial)
        x = rng.normal(size=(hw, hw, spec.c))
        _, measured = cached_forward(x, bank, masks, spec)
        if measured.mul_fp32 != predicted.mul_fp32:
            raise CountMismatchError(
                f"mul_fp32 measured {measured.mul_fp32} != predicted {predicted.mul_fp32}"
            )
        if measured.mask_ops != predicted.mask_ops:
            raise CountMismatchError(
                f"mask_ops measured {measured.mask_ops} != predicted {predicted.mask_ops}"
            )
        if deterministic_adds:
            if measured.add_fp32 != predicted.add_fp32:
                raise CountMismatchError(
                    f"add_fp32 measured {measured.add_fp32} != predicted {predicted.add_fp32}"
                )
        else:
            rel = abs(measured.add_fp32 - predicted.add_fp32) / predicted.add_fp32
            if rel > 0.10:
                raise CountMismatchError(
                    f"add_fp32 measured {measured.add_fp32} deviates {rel:.1%} from"
                    f" expectation {predicted.add_fp32}"
                )
        results.append(measured)
    return {
        "spec": spec,
        "predicted": predicted,
        "measured": results,
        "trials": trials,
        "ok": True,
    }
