import pytest
from hypothesis import given, settings, strategies as st

from iochain.blockdev import BlockStore, DeviceConfig
from iochain.btree import build, compile_lookup, demo_keys, full_tree, lookup_user, trace_user
from iochain.iostack import (LatencyProfile, Mode, Stack, chain_cpu, chain_latency, layout,
                             path_cost)
from iochain.sfunc import assemble, check
from iochain.xcache import Extent, ExtentMap

P = LatencyProfile()
SPACING = DeviceConfig().spacing_ns


def tree_stack(depth, extents=None, **kw):
    img = bench_image(depth)
    store, em = layout(img.data, extents)
    stack = Stack(store, **kw)
    fd = stack.open(em)
    stack.install(fd, compile_lookup(0))
    return stack, fd, img


def bench_image(depth):
    keys, vals = demo_keys(min(31 ** depth, 600))
    return build(keys, vals, depth=depth)


def test_path_costs():
    assert P.total_path_ns() == 6272 and P.software_ns == 3048
    for mode in Mode:
        assert path_cost(P, mode, 1) == path_cost(P, Mode.BASELINE, 1)
    assert (path_cost(P, Mode.BASELINE, 7).latency_ns, path_cost(P, Mode.BASELINE, 7).cpu_ns) \
        == (6272, 3048)
    assert (path_cost(P, Mode.SYSCALL, 2).latency_ns, path_cost(P, Mode.SYSCALL, 2).cpu_ns) \
        == (5722, 2498)
    assert (path_cost(P, Mode.DRIVER, 2).latency_ns, path_cost(P, Mode.DRIVER, 2).cpu_ns) \
        == (3437, 213)
    with pytest.raises(ValueError):
        path_cost(P, Mode.DRIVER, 0)
    with pytest.raises(ValueError):
        LatencyProfile(fs_ns=-1)


def test_mode_names():
    assert Mode.parse("DriverHook") is Mode.DRIVER
    assert Mode.parse("syscall_hook") is Mode.SYSCALL
    with pytest.raises(ValueError):
        Mode.parse("warp")


@pytest.mark.parametrize("depth", range(1, 11))
def test_single_chain_matches_closed_form(depth):
    img = bench_image(depth)
    key = demo_keys(7)[0][-1]
    for mode in Mode:
        store, em = layout(img.data)
        stack = Stack(store)
        fd = stack.open(em)
        stack.install(fd, compile_lookup(0))
        res = stack.run_chain(fd, compile_lookup(key), 0, mode)
        assert res.ok and res.buffer == lookup_user(img, key)[0].to_bytes(8, "little")
        assert res.latency_ns == chain_latency(P, mode, depth)
        assert res.timing.cpu_ns == chain_cpu(P, mode, depth) == stack.cpu_charged_ns
        assert res.pages == trace_user(img, key)
        assert res.timing.device_ios == depth
    assert chain_latency(P, Mode.DRIVER, 3) == 13146


def test_mode_ordering():
    for d in range(2, 11):
        assert (chain_latency(P, Mode.DRIVER, d) < chain_latency(P, Mode.SYSCALL, d)
                < chain_latency(P, Mode.BASELINE, d))


def test_read_sync():
    store = BlockStore(bytes(range(256)) * 2 * 8)
    stack = Stack(store)
    fd = stack.open(ExtentMap([Extent(0, 0, 1024), Extent(1024, 2, 1024)]))
    data, t = stack.read_sync(fd, 512, 1024)
    assert data == store.read(1, 1024)
    assert t.latency_ns == 6272 and t.device_ios == 1
    with pytest.raises(IndexError):
        stack.read_sync(fd, 2048, 512)
    with pytest.raises(ValueError):
        stack.read_sync(fd, 0, 100)
    holey = stack.open(ExtentMap([Extent(0, 4, 512), Extent(1024, 6, 512)]))
    with pytest.raises(LookupError):
        stack.read_sync(holey, 512, 512)


def test_batch_crossing_amortised():
    stack, fd, img = tree_stack(1)
    keys = demo_keys(8)[0]
    ops = [(compile_lookup(k), 0) for k in keys]
    res = stack.submit_batch(fd, ops, 8, Mode.BASELINE)
    assert all(r.ok for r in res)
    assert stack.cpu_charged_ns == 351 + 8 * (3048 - 351)

    stack, fd, img = tree_stack(1)
    (r,) = stack.submit_batch(fd, ops[:1], 1, Mode.BASELINE)
    assert r.latency_ns == 6272


def test_batch_driver_resubmissions():
    stack, fd, img = tree_stack(3)
    keys = demo_keys(600)[0][::75]
    ops = [(compile_lookup(k), 0) for k in keys]
    res = stack.submit_batch(fd, ops, 8, Mode.DRIVER)
    assert [r.buffer for r in res] == [lookup_user(img, k)[0].to_bytes(8, "little")
                                       for k in keys]
    assert len(stack.device.log) == 24
    assert stack.resubmits["driver"] == 16
    assert sum(1 for e in stack.device.log if e.tag is not None) == 24


def test_hop_limit_bound():
    stack, fd, img = tree_stack(3)
    key = demo_keys(5)[0][2]
    for mode in Mode:
        res = stack.run_chain(fd, compile_lookup(key), 0, mode, hop_limit=1)
        assert res.status == "EBOUND"
        # One resubmission ran; the second was refused before any I/O.
        assert len(res.pages) == 2 and res.timing.device_ios == 2
        assert stack.run_chain(fd, compile_lookup(key), 0, mode, hop_limit=2).ok


def test_runtime_fault_aborts_only_the_chain():
    stack, fd, img = tree_stack(2)
    bad = check(assemble("MOVI r1, 100\nRESUBMIT r1"))
    assert stack.run_chain(fd, bad, 0, Mode.DRIVER).status == "EFAULT"
    far = check(assemble("MOVI r1, 0x100000\nRESUBMIT r1"))
    assert stack.run_chain(fd, far, 0, Mode.DRIVER).status == "ERANGE"
    assert stack.run_chain(fd, compile_lookup(1), 0, Mode.DRIVER).ok


def split_setup(split_hops):
    """Depth-3 tree on 4 KiB pages whose chosen hops straddle an extent gap."""
    keys, vals = demo_keys(200)
    img = build(keys, vals, depth=3, fanout=8, page_size=4096)
    key = keys[123]
    path = trace_user(img, key)
    cuts = sorted(path[h - 1] + 2048 for h in split_hops)
    exts, pos, pba = [], 0, 0
    for c in cuts + [len(img.data)]:
        exts.append(Extent(pos, pba, c - pos))
        pba += (c - pos) // 512 + 16
        pos = c
    em = ExtentMap(exts, len(img.data))
    store, em = layout(img.data, em)
    stack = Stack(store)
    fd = stack.open(em)
    stack.install(fd, compile_lookup(0, 4096, 8))
    return stack, fd, img, key, path


def test_split_hop_costs_a_full_read():
    stack, fd, img, key, path = split_setup([2])
    _, plain = stack.read_sync(fd, path[1], 4096)
    t0 = stack.now
    res = stack.run_chain(fd, compile_lookup(key, 4096, 8), 0, Mode.DRIVER)
    assert res.ok and res.timing.split_hops == 1
    # The split read is a two-piece ordinary read; the device spaces the pieces.
    assert plain.latency_ns == 6272 + SPACING
    assert res.latency_ns == 6272 + plain.latency_ns + 3437
    assert stack.now - t0 == res.latency_ns


def test_every_hop_split_equals_baseline():
    stack, fd, img, key, path = split_setup([1, 2, 3])
    prog = compile_lookup(key, 4096, 8)
    drv = stack.run_chain(fd, prog, 0, Mode.DRIVER)
    base = stack.run_chain(fd, prog, 0, Mode.BASELINE)
    # Hop 1 is a full read anyway; hops 2 and 3 are the demoted ones.
    assert drv.ok and drv.timing.split_hops == 2 and drv.timing.device_ios == 6
    assert drv.latency_ns == base.latency_ns == 3 * (6272 + SPACING)


def test_no_split_identical_to_plain_chain():
    stack, fd, img, key, path = split_setup([])
    res = stack.run_chain(fd, compile_lookup(key, 4096, 8), 0, Mode.DRIVER)
    assert res.timing.split_hops == 0 and res.latency_ns == 13146


def test_invalidation_aborts_in_flight_chains():
    stack, fd, img = tree_stack(4)
    keys = demo_keys(600)[0][:20]
    sigs = [stack.start_chain(fd, compile_lookup(k), 0, Mode.DRIVER, core=i, pid=i)
            for i, k in enumerate(keys)]
    aborted = []
    stack.loop.call_at(10_000, lambda: aborted.append(stack.invalidate(fd)))
    stack.run()
    results = [s.value for s in sigs]
    assert aborted == [20]
    assert all(r.status == "EEXTENT" for r in results)
    # Nothing tagged was issued after the invalidation.
    assert all(e.submit_ns <= 10_000 for e in stack.device.log if e.tag is not None)
    # Until reinstall, new chains fail up front; afterwards they work.
    assert stack.run_chain(fd, compile_lookup(keys[0]), 0, Mode.DRIVER).status == "EEXTENT"
    stack.install(fd, compile_lookup(0))
    assert stack.run_chain(fd, compile_lookup(keys[0]), 0, Mode.DRIVER).ok
    assert stack.audit_tagged() == []


def test_invalidation_leaves_other_modes_alone():
    stack, fd, img = tree_stack(3)
    key = demo_keys(5)[0][1]
    sig = stack.start_chain(fd, compile_lookup(key), 0, Mode.SYSCALL)
    stack.loop.call_at(7000, stack.invalidate, fd)
    stack.run()
    assert sig.value.ok


def test_cpu_ledger_under_load():
    stack, fd, img = tree_stack(5)
    keys = demo_keys(600)[0]
    sigs = []
    for i in range(48):
        mode = list(Mode)[i % 3]
        sigs.append(stack.start_chain(fd, compile_lookup(keys[i * 7]), 0, mode, core=i))
    stack.run()
    results = [s.value for s in sigs]
    elapsed = stack.now
    assert all(r.ok for r in results)
    assert stack.cpu_charged_ns == sum(r.timing.cpu_ns for r in results)
    assert stack.cpu_charged_ns == sum(chain_cpu(P, r.mode, 5) for r in results)
    assert stack.cpu_busy_ns() <= len(stack.cores) * elapsed
    for c in stack.cores:
        assert c.work_ns <= c.busy_ns() <= elapsed


def test_profile_device_mismatch():
    with pytest.raises(ValueError):
        Stack(BlockStore.zeros(1), LatencyProfile(device_ns=1000), DeviceConfig(service_ns=3224))


# Pointer-chasing function over random blocks: follow byte 1 until byte 0 is small.
CHASE = check(assemble("""
    .ret 8
    LOADB r1, 0
    MOVI r2, 40
    JLT r1, r2, done
    LOADB r3, 1
    AND r3, 15
    SHL r3, 9
    RESUBMIT r3
done:
    LOADQ r4, 8
    EMIT r4, 8
    RETURN
"""))


@settings(max_examples=30)
@given(st.lists(st.tuples(st.integers(0, 255), st.integers(0, 255), st.integers(0, 2**64 - 1)),
                min_size=16, max_size=16),
       st.integers(0, 15), st.integers(1, 12), st.sampled_from([1, 3, 8]))
def test_results_identical_across_modes_and_batches(blocks, start, hop_limit, k):
    data = b"".join(bytes([a, b]) + bytes(6) + v.to_bytes(8, "little") + bytes(496)
                    for a, b, v in blocks)
    outcomes = set()
    for mode in Mode:
        stack = Stack(BlockStore(data))
        fd = stack.open(ExtentMap.single(0, len(data)))
        stack.install(fd, CHASE)
        r = stack.run_chain(fd, CHASE, start * 512, mode, hop_limit)
        outcomes.add((r.status, r.buffer, tuple(r.pages)))
        stack = Stack(BlockStore(data))
        fd = stack.open(ExtentMap.single(0, len(data)))
        stack.install(fd, CHASE)
        res = stack.submit_batch(fd, [(CHASE, start * 512)] * k, k, mode, hop_limit)
        outcomes |= {(r.status, r.buffer, tuple(r.pages)) for r in res}
    assert len(outcomes) == 1
