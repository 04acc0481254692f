"""
Walking a B+-tree without leaving the kernel
============================================

Build a small on-disk tree, lay it out on a simulated device, and look a key
up three ways. Only the cost of the walk changes.
"""

from iochain import Mode, Stack, build, compile_lookup, layout, lookup_user
from iochain.btree import demo_keys, trace_user
from iochain.sfunc import disassemble

keys, values = demo_keys(5000)
image = build(keys, values)
print("depth", image.depth, "pages", image.pages, "fanout", image.fanout)

key = keys[1234]
print("user-space answer", lookup_user(image, key))
print("pages on the path", trace_user(image, key))

store, extents = layout(image.data)
stack = Stack(store)
fd = stack.open(extents)

# the storage function: compiled once per key, verified before install
prog = compile_lookup(key)
print(len(prog), "instructions; first few:")
print("\n".join(disassemble(prog).splitlines()[:8]))
stack.install(fd, compile_lookup(0))

for mode in Mode:
    res = stack.run_chain(fd, prog, image.root_offset, mode)
    value = int.from_bytes(res.buffer, "little")
    print(f"{mode.value:9s} value={value:#x} latency={res.timing.latency_ns} ns "
          f"cpu={res.timing.cpu_ns} ns ios={res.timing.device_ios}")

# a missing key comes back as an empty result
res = stack.run_chain(fd, compile_lookup(2), image.root_offset, Mode.DRIVER)
print("absent key ->", res.status, res.buffer)
