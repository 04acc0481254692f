"""
Remapping a file under load
===========================

The kernel keeps a soft copy of the file's extents. When the file system
moves blocks the copy is dropped; chains in flight abort and the
application reinstalls and retries.
"""

from iochain import Mode
from iochain.bench import BenchConfig, run

stacks = []
m = run(BenchConfig(depth=4, mode=Mode.DRIVER, workers=8, duration_s=0.002,
                    invalidate_mean_s=100e-6), stack_hook=stacks.append)
stack = stacks[0]

print(m.lookups, "lookups,", m.invalidations, "invalidations")
print(m.aborted_by_invalidation, "chains aborted mid-flight;", m.aborts_extent, "EEXTENT in all")
print("wrong answers:", m.wrong_results)
print("audit problems:", stack.audit_tagged())

# first few events of the log
for ordinal, kind, fd, gen, pba, nblocks, t in stack.audit_log[:12]:
    print(f"{t:8d} ns {kind:10s} gen={gen}" + (f" pba={pba}" if kind == "tagged" else ""))
