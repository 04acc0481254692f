import csv
import io
import math

import pytest

from iochain import bench
from iochain.bench import BenchConfig, p99, run
from iochain.iostack import LatencyProfile, Mode, chain_latency


def test_p99_nearest_rank():
    assert p99([]) == 0
    assert p99([5]) == 5
    assert p99(range(1, 101)) == 99
    assert p99(range(1, 201)) == 198
    assert p99([3, 1, 2]) == 3


@pytest.mark.parametrize("kw", [
    dict(depth=0), dict(depth=11), dict(depth=3, workers=13), dict(depth=3, batch_size=4),
    dict(depth=3, interface="uring"), dict(depth=3, duration_s=0), dict(depth=5, hop_limit=3),
    dict(depth=3, interface="aio"),
])
def test_config_conflicts(kw):
    with pytest.raises(ValueError):
        run(BenchConfig(**kw))


@pytest.mark.parametrize("mode", list(Mode))
@pytest.mark.parametrize("depth", [1, 4, 7])
def test_single_worker_latency_is_closed_form(mode, depth):
    m = run(BenchConfig(depth=depth, mode=mode, max_lookups=20, duration_s=1))
    assert m.lookups == 20
    assert set(m.latencies) == {chain_latency(LatencyProfile(), mode, depth)}
    assert m.p99_lat_ns == chain_latency(LatencyProfile(), mode, depth)


@pytest.mark.parametrize("cfg", [
    BenchConfig(depth=4, mode=Mode.DRIVER, workers=12, duration_s=0.001),
    BenchConfig(depth=3, mode=Mode.SYSCALL, workers=5, duration_s=0.001),
    BenchConfig(depth=5, mode=Mode.BASELINE, workers=8, duration_s=0.001),
    BenchConfig(depth=6, mode=Mode.DRIVER, interface="uring", batch_size=8, duration_s=0.001),
    BenchConfig(depth=2, mode=Mode.SYSCALL, interface="uring", batch_size=3, workers=4,
                duration_s=0.001),
])
def test_conservation(cfg):
    m = run(cfg)
    assert m.split_hops == 0 and not m.aborts and m.wrong_results == 0
    assert m.lookups * cfg.depth == m.device_ios
    assert math.isclose(m.lookups_per_sec * cfg.depth, m.device_iops, rel_tol=1e-12)
    assert 0 < m.cpu_util <= 1
    assert all(0 <= u <= 1 for u in m.core_util)


def test_determinism():
    cfg = BenchConfig(depth=4, mode=Mode.DRIVER, workers=7, duration_s=0.0005, seed=11)
    a, b = run(cfg), run(cfg)
    assert a.row() == b.row() and a.latencies == b.latencies


def test_seed_changes_keys():
    seen = []
    for seed in (1, 2):
        stacks = []
        run(BenchConfig(depth=2, max_lookups=30, duration_s=1, seed=seed),
            stack_hook=stacks.append)
        seen.append([tuple(r.pages) for r in stacks[0].results])
    assert seen[0] != seen[1]


def test_invalidations_abort_and_never_corrupt():
    stacks = []
    cfg = BenchConfig(depth=4, mode=Mode.DRIVER, workers=8, duration_s=0.002,
                      invalidate_mean_s=50e-6, seed=3)
    m = run(cfg, stack_hook=stacks.append)
    stack = stacks[0]
    assert m.invalidations > 10
    assert m.wrong_results == 0
    assert m.aborts_extent > 0 and m.aborts_extent == m.aborts["EEXTENT"]
    # Chains aborted by an invalidation versus chains refused while it was pending.
    refused = sum(1 for r in stack.results
                  if r.status == "EEXTENT" and r.detail.startswith("no valid extent cache"))
    assert m.aborted_by_invalidation == m.aborts_extent - refused
    # Every lookup still completed, after reinstall and retry.
    assert m.lookups == sum(1 for r in stack.results if r.ok)
    assert stack.audit_tagged() == []


def test_csv_format():
    m = run(BenchConfig(depth=2, mode=Mode.DRIVER, max_lookups=5, duration_s=1,
                        run_id="demo"))
    text = bench.csv_text([m])
    lines = text.splitlines()
    assert lines[0] == ",".join(bench.CSV_FIELDS)
    assert '"' not in text
    row = next(csv.DictReader(io.StringIO(text)))
    assert row["run_id"] == "demo" and row["mode"] == "driver" and row["depth"] == "2"
    assert float(row["lookups_per_sec"]) > 0 and "." in row["cpu_util"]


def test_depth_one_has_no_speedup():
    base = BenchConfig(depth=1, duration_s=0.0005)
    sw = bench.speedup_sweep([1], [1, 12], Mode.DRIVER, base)
    assert {v["ratio"] for v in sw.values()} == {1.0}
    ur = bench.uring_sweep([1], [1, 8], Mode.DRIVER, base)
    assert {v["ratio"] for v in ur.values()} == {1.0}


def test_cpu_utilisation_of_one_polling_worker():
    m = run(BenchConfig(depth=3, mode=Mode.BASELINE, max_lookups=10, duration_s=1))
    # One of six cores is held for the whole run.
    assert m.core_util[0] == 1.0 and m.cpu_util == pytest.approx(1 / 6)
