"""
Throughput with more and more threads
=====================================

Closed-loop workers issue lookups back to back. The unmodified path runs out
of cores first; the driver hook runs out of device.
"""

from iochain import Mode
from iochain.bench import BenchConfig, speedup_sweep

base = BenchConfig(depth=1, duration_s=0.002)
workers = [1, 2, 4, 6, 8, 12]

for mode in (Mode.SYSCALL, Mode.DRIVER):
    sweep = speedup_sweep([3, 6], workers, mode, base)
    print(mode.value)
    for d in (3, 6):
        print("  d=%d" % d, " ".join("%.2f" % sweep[(d, w)]["ratio"] for w in workers))

# baseline saturation: 6 cores, each held for a whole read
sweep = speedup_sweep([3], workers, Mode.DRIVER, base)
for w in workers:
    b = sweep[(3, w)]["baseline"]
    print(f"baseline w={w:2d} {b.lookups_per_sec:9.0f} lookups/s cpu={100 * b.cpu_util:.0f}%")
