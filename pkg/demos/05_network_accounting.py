"""Network-level accounting from shape lists.

Shipped netspec files describe reference networks layer by layer; the
closed-form counters turn them into parameter, multiplication, addition
and memory totals without instantiating any weights.  The bundled lists
cover a 56-layer CIFAR-scale residual network and a 50-layer bottleneck
network, each with a masked-filter variant.
"""

from maskconv.accounting import (
    compare_table,
    load_netspec,
    network_counts,
    shipped_netspec_path,
)

for name in ("resnet56", "resnet56_spatial", "resnet50", "resnet50_sep4"):
    net = load_netspec(shipped_netspec_path(name))
    counts = network_counts(net)
    print(
        f"{name:<18} layers {len(net.layers):>3}  params(32-bit equiv) "
        f"{counts.param_equiv32:>14,.0f}  combined MUL {counts.combined_mul:>16,.0f}"
        f"  memory {counts.memory_bytes / 1e6:>7.2f} MB"
    )

print("\n=== baseline vs spatial pyramid on the 56-layer network ===")
print(
    compare_table(
        load_netspec(shipped_netspec_path("resnet56")),
        load_netspec(shipped_netspec_path("resnet56_spatial")),
    )
)

print("\n=== baseline vs separate learned masks (s=4) on the 50-layer network ===")
print(
    compare_table(
        load_netspec(shipped_netspec_path("resnet50")),
        load_netspec(shipped_netspec_path("resnet50_sep4")),
    )
)
