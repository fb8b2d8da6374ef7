"""Parallelism and offload walkthrough: comm costs, placement, NUMA limits.

Placement rules: TP-SP innermost (inside the node), context parallelism
only for ultra-long sequences (above 200k tokens, and kept minimal), then
ZeRO-style data parallelism outermost with optimizer states partitioned.
Offloading rides PCIe and is throttled by shared host write bandwidth
inside a NUMA domain.
"""

from ditplan import (
    Bucket,
    DTypePolicy,
    ParallelConfig,
    cp_gate_and_comm,
    dp_comm,
    effective_pcie_bw,
    enumerate_parallel_configs,
    plan_activation_offload,
    plan_optimizer_offload,
    sync_audit,
    tp_sp_layer_comm,
)
from ditplan.memory import BUILTIN_CHUNKS, MIB
from ditplan.presets import REFERENCE_CLUSTER, TABLE2_FIT

dtypes = DTypePolicy()

print("== TP-SP per-layer collectives (115k tokens, 2-byte activations) ==")
for tp in (2, 4, 8):
    raw, exposed = tp_sp_layer_comm(1, 115_200, 3072, tp, 2, 200e9, overlap_fraction=0.8)
    print(f"  tp={tp}: raw {raw:6.2f} ms/layer, exposed {exposed:5.2f} ms at 0.8 fused overlap")

print()
print("== the context-parallel gate ==")
for tokens in (115_200, 230_400):
    result = cp_gate_and_comm(tokens, 1, tokens, 3072, 2, 2, 50e9)
    if result.violation:
        print(f"  {tokens:,} tokens, cp=2: REJECTED ({result.violation})")
    else:
        print(f"  {tokens:,} tokens, cp=2: enabled, {result.time_ms:.2f} ms/layer all-to-all")

print()
print("== data-parallel collectives amortized per accumulation step ==")
raw, exposed = dp_comm(13.4e9, dtypes, 8, 16, 4, 50e9, first_fwd_window_ms=700, last_bwd_window_ms=700)
print(f"  P=13.4e9, tp=8, dp=16: raw {raw:.1f} ms/step, exposed {exposed:.1f} ms under wide windows")

print()
print("== candidate enumeration, ranked by exposed communication ==")
for bucket, label in [
    (Bucket(1, 125, 720, 1280), "115k tokens"),
    (Bucket(1, 253, 720, 1280), "230k tokens"),
]:
    configs = enumerate_parallel_configs(TABLE2_FIT, REFERENCE_CLUSTER, bucket)
    combos = ", ".join(f"(tp={c.tp},cp={c.cp},dp={c.dp})" for c in configs[:5])
    print(f"  {label}: {combos}{' ...' if len(configs) > 5 else ''}")

print()
print("== explicit gradient-sync audit under TP ==")
report = sync_audit(TABLE2_FIT, ParallelConfig(tp=8, cp=1, dp=2))
for entry in report.entries:
    status = "partitioned" if entry.partitioned else "replicated"
    flag = "  <- needs explicit grad sync" if entry.needs_explicit_grad_sync else ""
    print(f"  {entry.layer:<18} {status}{flag}")

print()
print("== offloading against the NUMA write-bandwidth cap ==")
for concurrent in (1, 2, 4, 8):
    bw = effective_pcie_bw(REFERENCE_CLUSTER, concurrent)
    print(f"  {concurrent} concurrent devices per NUMA: {bw / 1e9:.0f} GB/s per device")
bw = effective_pcie_bw(REFERENCE_CLUSTER, 4)
transfer, exposed = plan_optimizer_offload(13.4e9, bw, 600.0, 1200.0)
print(f"  optimizer states 13.4 GB: {transfer:.0f} ms round trip, {exposed:.0f} ms exposed")
plan = plan_activation_offload(
    BUILTIN_CHUNKS, block_compute_ms=480.0, effective_bw=bw, memory_deficit_bytes=400 * MIB,
    B=1, S=115_200, H=3072, A=24, tp=8,
)
print(
    f"  activation deficit 400 MiB/layer: offload {list(plan.selected)}, "
    f"{plan.transfer_ms_per_layer:.1f} ms/layer hidden under 480 ms blocks "
    f"(exposed {plan.exposed_ms_per_layer:.1f} ms)"
)
