"""
Batching with io_uring
======================

One thread submits k lookups per kernel crossing. Batching and in-kernel
resubmission stack on top of each other.
"""

from iochain.bench import BenchConfig, uring_sweep

sweep = uring_sweep(range(1, 11), (1, 2, 4, 8), base=BenchConfig(depth=1, duration_s=0.002))
print("depth  k=1   k=2   k=4   k=8")
for d in range(1, 11):
    print(f"{d:5d}", " ".join(f"{sweep[(d, k)]['ratio']:.2f}" for k in (1, 2, 4, 8)))

cell = sweep[(3, 8)]["hooked"]
print("d=3 k=8:", cell.resubmit_driver, "driver resubmits,", cell.device_ios, "device ios")
