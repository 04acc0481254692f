"""Closed-loop lookup benchmarks over simulated B+-trees.

Each worker is a simulated thread pinned to core ``worker % cores`` that
issues one lookup (or one io_uring batch of lookups) at a time. Workers stop
starting new work once ``duration_s`` of virtual time has passed; in-flight
lookups drain and throughput is measured up to the last completion, so every
started lookup is counted and ``lookups * depth == device I/Os`` holds
exactly in split-free, abort-free runs.
"""

from __future__ import annotations

import csv
import functools
import io
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .blockdev import DeviceConfig
from .btree import BTreePage, TreeImage, build, compile_lookup, demo_keys
from .iostack import LatencyProfile, Mode, Stack, layout
from .xcache import ExtentMap, schedule_invalidations

CSV_FIELDS = ["run_id", "mode", "depth", "workers", "batch", "lookups_per_sec", "mean_lat_ns",
              "p99_lat_ns", "device_iops", "cpu_util", "resubmit_driver", "resubmit_syscall",
              "aborts_extent", "aborts_bound"]

# Worker counts used for thread sweeps.
SWEEP_WORKERS = (1, 2, 4, 6, 8, 12)
MAX_TREE_KEYS = 4096


@dataclass(frozen=True)
class BenchConfig:
    depth: int
    mode: Mode = Mode.BASELINE
    workers: int = 1
    interface: str = "sync"  # "sync" (read) or "uring"
    batch_size: int | None = None
    duration_s: float = 0.02
    seed: int = 0
    profile: LatencyProfile = field(default_factory=LatencyProfile)
    device: DeviceConfig | None = None
    cores: int = 6
    hop_limit: int = 16
    invalidate_mean_s: float | None = None
    max_lookups: int | None = None
    scatter: int = 0
    page_size: int = 512
    fanout: int = 31
    run_id: str = ""
    # A prebuilt image (and its on-disk layout) replaces the generated tree.
    image: TreeImage | None = field(default=None, repr=False, compare=False)
    extents: ExtentMap | None = field(default=None, repr=False, compare=False)

    def validate(self) -> None:
        problems = []
        if not 1 <= self.depth <= 10:
            problems.append(f"depth must be in 1..10 (got {self.depth})")
        if not 1 <= self.workers <= 12:
            problems.append(f"workers must be in 1..12 (got {self.workers})")
        if self.interface not in ("sync", "uring"):
            problems.append(f"interface must be sync or uring (got {self.interface!r})")
        if self.interface == "sync" and self.batch_size is not None:
            problems.append("batch_size only applies to the uring interface")
        if self.interface == "uring" and (self.batch_size is None or self.batch_size < 1):
            problems.append("uring runs need batch_size >= 1")
        if not self.duration_s > 0:
            problems.append(f"duration must be > 0 (got {self.duration_s})")
        if self.cores < 1 or self.hop_limit < 1:
            problems.append("cores and hop_limit must be >= 1")
        if self.hop_limit < self.depth - 1:
            problems.append(f"hop_limit {self.hop_limit} cannot reach depth {self.depth}")
        if self.max_lookups is not None and self.max_lookups < 1:
            problems.append("max_lookups must be >= 1")
        if self.invalidate_mean_s is not None and not self.invalidate_mean_s > 0:
            problems.append("invalidation mean interval must be > 0")
        if self.image is not None and self.image.depth != self.depth:
            problems.append(f"image depth {self.image.depth} differs from depth {self.depth}")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def batch(self) -> int:
        return self.batch_size or 1


@dataclass
class Metrics:
    run_id: str
    mode: Mode
    depth: int
    workers: int
    batch: int
    lookups: int
    elapsed_ns: int
    lookups_per_sec: float
    mean_lat_ns: float
    p99_lat_ns: int
    device_ios: int
    device_iops: float
    cpu_util: float
    core_util: list[float]
    resubmit_driver: int
    resubmit_syscall: int
    aborts: Counter
    split_hops: int
    wrong_results: int
    invalidations: int
    aborted_by_invalidation: int
    latencies: list[int] = field(repr=False, default_factory=list)

    @property
    def aborts_extent(self) -> int:
        return self.aborts.get("EEXTENT", 0)

    @property
    def aborts_bound(self) -> int:
        return self.aborts.get("EBOUND", 0)

    def row(self) -> dict:
        return {
            "run_id": self.run_id, "mode": self.mode.value, "depth": self.depth,
            "workers": self.workers, "batch": self.batch,
            "lookups_per_sec": f"{self.lookups_per_sec:.1f}",
            "mean_lat_ns": f"{self.mean_lat_ns:.1f}", "p99_lat_ns": self.p99_lat_ns,
            "device_iops": f"{self.device_iops:.1f}", "cpu_util": f"{self.cpu_util:.4f}",
            "resubmit_driver": self.resubmit_driver, "resubmit_syscall": self.resubmit_syscall,
            "aborts_extent": self.aborts_extent, "aborts_bound": self.aborts_bound,
        }


def p99(values: Iterable[int]) -> int:
    """Nearest-rank 99th percentile."""
    v = sorted(values)
    if not v:
        return 0
    return v[max(0, math.ceil(0.99 * len(v)) - 1)]


@functools.lru_cache(maxsize=64)
def bench_tree(depth: int, fanout: int = 31, page_size: int = 512) -> TreeImage:
    """Tree of exactly ``depth`` levels with at most ``MAX_TREE_KEYS`` keys."""
    n = min(fanout ** depth, MAX_TREE_KEYS)
    keys, values = demo_keys(n)
    return build(keys, values, depth=depth, fanout=fanout, page_size=page_size)


def tree_contents(image: TreeImage) -> tuple[np.ndarray, dict[int, int]]:
    """All keys (in order) and the key -> value map stored in the leaves."""
    return _contents(image.data, image.page_size)


@functools.lru_cache(maxsize=32)
def _contents(data: bytes, page_size: int):
    pairs = {}
    for off in range(0, len(data), page_size):
        page = BTreePage.unpack(data[off:off + page_size])
        if page.is_leaf:
            pairs.update(zip(page.keys, page.values))
    keys = np.asarray(sorted(pairs), dtype=np.uint64)
    return keys, pairs


def _make_stack(cfg: BenchConfig):
    image = cfg.image or bench_tree(cfg.depth, cfg.fanout, cfg.page_size)
    extents = cfg.extents
    if extents is None and cfg.scatter > 1:
        extents = ExtentMap.scattered(len(image.data), cfg.scatter, avoid_align=image.page_size)
    store, extents = layout(image.data, extents)
    device = cfg.device or DeviceConfig(service_ns=cfg.profile.device_ns)
    stack = Stack(store, cfg.profile, device, cores=cfg.cores)
    fd = stack.open(extents)
    return stack, fd, image


def run(cfg: BenchConfig, stack_hook=None) -> Metrics:
    """Run one closed-loop benchmark cell; deterministic for a given config."""
    cfg.validate()
    mode = Mode.parse(cfg.mode)
    stack, fd, image = _make_stack(cfg)
    if stack_hook is not None:
        stack_hook(stack)
    page_size = image.page_size
    installed = compile_lookup(0, page_size, image.fanout)
    stack.install(fd, installed)
    keys, expected = tree_contents(image)
    duration_ns = int(round(cfg.duration_s * 1e9))
    if cfg.invalidate_mean_s is not None:
        stack.schedule_invalidations(
            fd, schedule_invalidations(cfg.invalidate_mean_s, cfg.duration_s, cfg.seed))

    latencies: list[int] = []
    wrong = [0]
    started = [0]
    last_done = [0]

    def budget_left(n):
        if cfg.max_lookups is None:
            return n
        return max(0, min(n, cfg.max_lookups - started[0]))

    def reinstall_if_needed():
        cache = stack.nvme.cache(fd)
        if cache is None or not cache.valid:
            stack.install(fd, installed)

    def check(key, res):
        if res.status != "ok":
            return
        want = expected.get(key)
        got = int.from_bytes(res.buffer, "little") if res.buffer else None
        if got != want:
            wrong[0] += 1

    def sync_worker(w, rng):
        while stack.now < duration_ns and budget_left(1):
            started[0] += 1
            key = int(keys[rng.integers(len(keys))])
            prog = compile_lookup(key, page_size, image.fanout)
            t0 = stack.now
            while True:
                res = yield stack.start_chain(fd, prog, image.root_offset, mode, cfg.hop_limit,
                                              core=w, pid=w)
                if res.status != "EEXTENT":
                    break
                reinstall_if_needed()
            check(key, res)
            latencies.append(stack.now - t0)
            last_done[0] = max(last_done[0], stack.now)

    def uring_worker(w, rng):
        while stack.now < duration_ns:
            n = budget_left(cfg.batch)
            if n == 0:
                break
            started[0] += n
            batch = [int(k) for k in keys[rng.integers(len(keys), size=n)]]
            t0 = stack.now
            todo = batch
            while todo:
                ops = [(compile_lookup(k, page_size, image.fanout), image.root_offset)
                       for k in todo]
                results = yield stack.start_batch(fd, ops, mode, cfg.hop_limit, core=w, pid=w)
                retry = []
                for k, res in zip(todo, results):
                    if res.status == "EEXTENT":
                        retry.append(k)
                    else:
                        check(k, res)
                if retry:
                    reinstall_if_needed()
                todo = retry
            # Completions of a batch are reaped together.
            latencies.extend([stack.now - t0] * n)
            last_done[0] = max(last_done[0], stack.now)

    running = [cfg.workers]

    def worker_done(_):
        running[0] -= 1

    for w in range(cfg.workers):
        rng = np.random.default_rng([cfg.seed, w])
        gen = sync_worker(w, rng) if cfg.interface == "sync" else uring_worker(w, rng)
        stack.loop.spawn(gen).wait(worker_done)
    # Pending invalidation timers may outlive the workers; stop with them.
    step = stack.loop.step
    while running[0] and step():
        pass
    return _metrics(cfg, mode, stack, latencies, wrong[0], last_done[0])


def _metrics(cfg, mode, stack: Stack, latencies, wrong, elapsed) -> Metrics:
    lookups = len(latencies)
    elapsed = max(elapsed, 1)
    per_s = 1e9 / elapsed
    aborts = Counter(code for _, _, code in stack.abort_log)
    device_ios = sum(1 for e in stack.device.log if e.complete_ns <= elapsed)
    core_util = [c.busy_ns(elapsed) / elapsed for c in stack.cores]
    inval = [x for x in stack.nvme.invalidations if x[0] <= elapsed]
    return Metrics(
        run_id=cfg.run_id, mode=mode, depth=cfg.depth, workers=cfg.workers, batch=cfg.batch,
        lookups=lookups, elapsed_ns=elapsed, lookups_per_sec=lookups * per_s,
        mean_lat_ns=float(np.mean(latencies)) if latencies else 0.0,
        p99_lat_ns=p99(latencies), device_ios=device_ios, device_iops=device_ios * per_s,
        cpu_util=sum(core_util) / len(core_util), core_util=core_util,
        resubmit_driver=stack.resubmits["driver"], resubmit_syscall=stack.resubmits["syscall"],
        aborts=aborts, split_hops=sum(r.timing.split_hops for r in stack.results),
        wrong_results=wrong, invalidations=len(inval),
        aborted_by_invalidation=sum(a for _, _, a in inval), latencies=latencies,
    )


def speedup_sweep(depths, workers_list=SWEEP_WORKERS, mode=Mode.DRIVER,
                  base: BenchConfig | None = None) -> dict[tuple[int, int], dict]:
    """Throughput of ``mode`` over Baseline for each (depth, workers) cell."""
    base = base or BenchConfig(depth=1)
    mode = Mode.parse(mode)
    out = {}
    for d in depths:
        for w in workers_list:
            b = run(replace(base, depth=d, workers=w, mode=Mode.BASELINE,
                            run_id=f"baseline-d{d}-w{w}"))
            m = run(replace(base, depth=d, workers=w, mode=mode,
                            run_id=f"{mode.value}-d{d}-w{w}"))
            out[(d, w)] = {"ratio": m.lookups_per_sec / b.lookups_per_sec,
                           "baseline": b, "hooked": m}
    return out


def uring_sweep(depths, batch_sizes=(1, 8), mode=Mode.DRIVER,
                base: BenchConfig | None = None) -> dict[tuple[int, int], dict]:
    """Single-worker io_uring throughput of ``mode`` over unmodified io_uring."""
    base = base or BenchConfig(depth=1)
    mode = Mode.parse(mode)
    out = {}
    for d in depths:
        for k in batch_sizes:
            common = dict(depth=d, workers=1, interface="uring", batch_size=k)
            b = run(replace(base, mode=Mode.BASELINE, run_id=f"uring-baseline-d{d}-k{k}",
                            **common))
            m = run(replace(base, mode=mode, run_id=f"uring-{mode.value}-d{d}-k{k}", **common))
            out[(d, k)] = {"ratio": m.lookups_per_sec / b.lookups_per_sec,
                           "baseline": b, "hooked": m}
    return out


def latency_sweep(depths, modes=tuple(Mode), base: BenchConfig | None = None,
                  lookups: int = 50) -> dict[tuple[Mode, int], Metrics]:
    """Single-worker mean chain latency per (mode, depth)."""
    base = base or BenchConfig(depth=1)
    out = {}
    for d in depths:
        for mode in modes:
            out[(Mode.parse(mode), d)] = run(replace(
                base, depth=d, workers=1, mode=Mode.parse(mode), max_lookups=lookups,
                duration_s=1.0, run_id=f"lat-{Mode.parse(mode).value}-d{d}"))
    return out


def write_csv(rows: Iterable[Metrics | dict], out) -> None:
    """Write rows with the fixed header; ``out`` is a path or a text stream."""
    if isinstance(out, (str, bytes)) or hasattr(out, "__fspath__"):
        with open(out, "w", newline="") as fh:
            return write_csv(rows, fh)
    writer = csv.DictWriter(out, fieldnames=CSV_FIELDS, quoting=csv.QUOTE_NONE,
                            escapechar="\\", lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow(r.row() if isinstance(r, Metrics) else r)


def csv_text(rows) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()
