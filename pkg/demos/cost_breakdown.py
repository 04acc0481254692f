"""
Where the time goes in one 512 B read
=====================================

Per-layer costs of a full read, and what a chain of dependent reads costs
when later hops skip layers.
"""

import numpy as np

from iochain import LatencyProfile, Mode, chain_latency, path_cost

prof = LatencyProfile()

# one full read, layer by layer
for name, ns in prof.rows().items():
    if name != "sfunc_exec":
        print(f"{name:10s} {ns:5d} ns  {prof.shares()[name]:5.1f}%")
print("total     ", prof.total_path_ns(), "ns")

# a hop after the first one, per mode
for mode in Mode:
    c = path_cost(prof, mode, 2)
    print(f"{mode.value:9s} hop>=2: {c.latency_ns} ns latency, {c.cpu_ns} ns cpu")

# chain latency against depth
depths = np.arange(1, 11)
lat = np.array([[chain_latency(prof, m, int(d)) for d in depths] for m in Mode])
reduction = 1 - lat[2] / lat[0]
print("depth     ", depths)
print("driver cut", np.round(100 * reduction, 1))

# the limit as chains get long: only the driver hop is left per extra level
print("limit %.1f%%" % (100 * (1 - path_cost(prof, Mode.DRIVER, 2).latency_ns / prof.total_path_ns())))
