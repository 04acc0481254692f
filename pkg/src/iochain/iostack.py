"""Costed model of the kernel read path and its two resubmission hooks.

Three dispatch modes drive a chain of dependent reads (one storage-function
invocation per completion):

* ``BASELINE`` - every hop is a full ``read()`` from user space.
* ``SYSCALL`` - hops after the first are reissued at the syscall dispatch
  layer, skipping the user/kernel crossing and syscall entry.
* ``DRIVER`` - hops after the first are reissued from the NVMe completion
  handler, translated through the NVMe extent cache and tagged.

Thread behaviour, which sets the CPU picture under load: a synchronous reader
holds its core and polls for the completion of the I/O it issued. When the
driver hook swallows a completion and resubmits, nothing is raised to the
thread, so it sleeps until the chain's final completion; the later
resubmissions run as interrupt work on the thread's home core. io_uring
batches submit in one hold and then sleep.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field, replace

from .blockdev import BLOCK_SIZE, BlockStore, DeviceConfig, DeviceRequest, create_device
from .des import PRIO_INVALIDATE, Core, Loop, Signal
from .sfunc import (ChainBudget, Drop, Program, Resubmit, Return, SFuncError, check,
                    execute)
from .xcache import ExtentMap, NvmeExtentLayer, Single, Split, translate


class Mode(enum.Enum):
    BASELINE = "baseline"
    SYSCALL = "syscall"
    DRIVER = "driver"

    @classmethod
    def parse(cls, text: str | "Mode") -> "Mode":
        if isinstance(text, Mode):
            return text
        aliases = {"syscallhook": "syscall", "driverhook": "driver", "nvme": "driver"}
        t = text.strip().lower().replace("-", "").replace("_", "")
        return cls(aliases.get(t, t))


@dataclass(frozen=True)
class LatencyProfile:
    crossing_ns: int = 351
    syscall_ns: int = 199
    fs_ns: int = 2006
    bio_ns: int = 379
    driver_ns: int = 113
    device_ns: int = 3224
    sfunc_exec_ns: int = 100

    def __post_init__(self):
        for name, value in self.rows().items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0 (got {value})")

    def rows(self) -> dict[str, int]:
        return {
            "crossing": self.crossing_ns, "syscall": self.syscall_ns, "fs": self.fs_ns,
            "bio": self.bio_ns, "driver": self.driver_ns, "device": self.device_ns,
            "sfunc_exec": self.sfunc_exec_ns,
        }

    @property
    def software_ns(self) -> int:
        return self.crossing_ns + self.syscall_ns + self.fs_ns + self.bio_ns + self.driver_ns

    def total_path_ns(self) -> int:
        return self.software_ns + self.device_ns

    def shares(self) -> dict[str, float]:
        """Percentage of the full read path spent in each layer."""
        total = self.total_path_ns()
        rows = self.rows()
        rows.pop("sfunc_exec")
        return {k: 100.0 * v / total for k, v in rows.items()}


@dataclass(frozen=True)
class HopCost:
    cpu_ns: int
    latency_ns: int


def path_cost(profile: LatencyProfile, mode: Mode, hop_index: int) -> HopCost:
    """CPU and latency of one hop of a chain (hops count from 1)."""
    if hop_index < 1:
        raise ValueError("hop_index starts at 1")
    mode = Mode.parse(mode)
    if hop_index == 1 or mode is Mode.BASELINE:
        return HopCost(profile.software_ns, profile.total_path_ns())
    if mode is Mode.SYSCALL:
        cpu = profile.fs_ns + profile.bio_ns + profile.driver_ns
        return HopCost(cpu, cpu + profile.device_ns)
    cpu = profile.driver_ns + profile.sfunc_exec_ns
    return HopCost(cpu, cpu + profile.device_ns)


def chain_latency(profile: LatencyProfile, mode: Mode, depth: int) -> int:
    """Closed-form uncontended latency of a ``depth``-hop chain."""
    return sum(path_cost(profile, mode, h).latency_ns for h in range(1, depth + 1))


def chain_cpu(profile: LatencyProfile, mode: Mode, depth: int) -> int:
    return sum(path_cost(profile, mode, h).cpu_ns for h in range(1, depth + 1))


@dataclass
class TimingRecord:
    start_ns: int
    end_ns: int = 0
    cpu_ns: int = 0
    hops: int = 0
    device_ios: int = 0
    split_hops: int = 0

    @property
    def latency_ns(self) -> int:
        return self.end_ns - self.start_ns


@dataclass
class ChainResult:
    status: str  # ok | drop | EEXTENT | EBOUND | EFAULT
    buffer: bytes | None
    pages: list[int]
    timing: TimingRecord
    mode: Mode
    chain_id: int = -1
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def latency_ns(self) -> int:
        return self.timing.latency_ns


class ChainState:
    """Bookkeeping for one chain while it is in flight."""

    __slots__ = ("chain_id", "fd", "program", "mode", "offset", "length", "budget",
                 "core", "pid", "generation", "timing", "pages", "hops_completed")

    def __init__(self, chain_id, fd, program, mode, offset, length, hop_limit, core, pid,
                 start_ns):
        self.chain_id = chain_id
        self.fd = fd
        self.program = program
        self.mode = mode
        self.offset = offset
        self.length = length
        # The bound counts resubmissions: at most 1 + hop_limit reads per chain.
        self.budget = ChainBudget(hop_limit)
        self.core = core
        self.pid = pid
        self.generation = None
        self.timing = TimingRecord(start_ns)
        self.pages: list[int] = []
        self.hops_completed = 0

    @property
    def hop_limit(self) -> int:
        return self.budget.hop_limit


class _Abort(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(detail or code)
        self.code = code
        self.detail = detail


def _translation_abort(tr) -> _Abort:
    codes = {"cache invalid": "EEXTENT", "unmapped": "EHOLE"}
    return _Abort(codes.get(tr.reason, "ERANGE"), f"translation failed: {tr.reason}")


class Stack:
    """Simulated host: CPU cores, block layer paths, NVMe cache and device."""

    def __init__(self, backing: BlockStore | bytes | None = None,
                 profile: LatencyProfile | None = None,
                 device_config: DeviceConfig | None = None, cores: int = 6):
        self.profile = profile or LatencyProfile()
        if device_config is None:
            device_config = DeviceConfig(service_ns=self.profile.device_ns)
        elif device_config.service_ns != self.profile.device_ns:
            raise ValueError("device service_ns and profile device_ns disagree")
        if cores < 1:
            raise ValueError("need at least one core")
        self.device = create_device(device_config, backing)
        self.loop = Loop(self.device)
        self.cores = [Core(self.loop, i) for i in range(cores)]
        self.nvme = NvmeExtentLayer()
        self.files: dict[int, ExtentMap] = {}
        self.results: list[ChainResult] = []
        self.resubmits = Counter()  # by layer: "driver" / "syscall"
        self.process_resubmits: Counter = Counter()  # by pid
        self.cpu_charged_ns = 0
        self.audit_log: list[tuple] = []  # (ordinal, kind, fd, generation, pba, nblocks)
        self.abort_log: list[tuple[int, int, str]] = []  # (chain_id, time, code)
        self._ordinal = 0
        self._next_chain = 0

    # ---- files and installation -------------------------------------------------

    @property
    def now(self) -> int:
        return self.loop.now

    def open(self, extents: ExtentMap) -> int:
        fd = len(self.files) + 3
        if extents.end_pba > self.device.store.nblocks:
            raise ValueError("extents reach past the end of the device")
        self.files[fd] = extents
        return fd

    def _audit(self, kind, fd, generation, pba=-1, nblocks=0):
        self.audit_log.append((self._ordinal, kind, fd, generation, pba, nblocks, self.now))
        self._ordinal += 1

    def install(self, fd: int, program: Program):
        handle = self.nvme.install(fd, self.files[fd], program)
        self._audit("install", fd, handle.generation)
        return handle

    def invalidate(self, fd: int) -> int:
        """Drop the fd's extent cache; returns how many in-flight chains abort."""
        aborted = self.nvme.invalidate(fd, self.now)
        cache = self.nvme.cache(fd)
        if cache is not None:
            self._audit("invalidate", fd, cache.generation)
        return aborted

    def schedule_invalidations(self, fd: int, times_ns) -> None:
        for t in times_ns:
            self.loop.call_at(t, self.invalidate, fd, prio=PRIO_INVALIDATE)

    # ---- device access ----------------------------------------------------------

    def _charge(self, core: Core, ns: int, st: ChainState | None):
        self.cpu_charged_ns += ns
        if st is not None:
            st.timing.cpu_ns += ns
        yield from core.work(ns)

    def _submit(self, runs, tag, st: ChainState) -> list[Signal]:
        """Issue one request per physical run; returns their completion signals."""
        sigs = []
        for pba, nbytes in runs:
            rid = self.loop.new_request_id()
            sigs.append(self.loop.submit_io(DeviceRequest(rid, pba, nbytes, tag)))
            if tag is not None:
                self._audit("tagged", tag[0], tag[1], pba, nbytes // BLOCK_SIZE)
        st.timing.device_ios += len(sigs)
        return sigs

    def _gather(self, sigs):
        data = []
        for sig in sigs:
            comp = yield sig
            data.append(comp.data)
        return b"".join(data)

    def _io(self, runs, tag, st: ChainState):
        return (yield from self._gather(self._submit(runs, tag, st)))

    # ---- chains -----------------------------------------------------------------

    def _new_state(self, fd, program, start_offset, mode, hop_limit, core, pid, length):
        if fd not in self.files:
            raise KeyError(f"fd {fd} is not open")
        if hop_limit < 1:
            raise ValueError("hop_limit must be >= 1")
        if not getattr(program, "_verified", False):
            check(program)
            object.__setattr__(program, "_verified", True)
        length = program.block_size if length is None else length
        st = ChainState(self._next_chain, fd, program, Mode.parse(mode), start_offset, length,
                        hop_limit, core % len(self.cores), pid, self.now)
        self._next_chain += 1
        return st

    def _finish(self, st: ChainState, status, buffer=None, detail=""):
        st.timing.end_ns = self.now
        st.timing.hops = st.hops_completed
        self.nvme.untrack(st.fd, st)
        res = ChainResult(status, buffer, st.pages, st.timing, st.mode, st.chain_id, detail)
        if status not in ("ok", "drop"):
            self.abort_log.append((st.chain_id, self.now, status))
        self.results.append(res)
        return res

    def _begin_tagged(self, st: ChainState):
        cache = self.nvme.cache(st.fd)
        if cache is None or not cache.valid:
            raise _Abort("EEXTENT", "no valid extent cache; reinstall required")
        st.generation = cache.generation
        self.nvme.track(st.fd, st)

    def _check_current(self, st: ChainState):
        if not self.nvme.is_current(st.fd, st.generation):
            raise _Abort("EEXTENT", "extent cache invalidated mid-chain")

    def _run_function(self, st: ChainState, block: bytes):
        st.pages.append(st.offset)
        st.hops_completed += 1
        try:
            action, count = execute(st.program, block, st.budget)
        except SFuncError as e:
            raise _Abort(e.code, str(e)) from None
        assert count <= len(st.program), "forward-only program ran an instruction twice"
        return action

    def _fs_runs(self, st: ChainState):
        try:
            return self.files[st.fd].pieces(st.offset, st.length)
        except IndexError as e:
            raise _Abort("ERANGE", str(e)) from None
        except LookupError as e:
            raise _Abort("EHOLE", str(e)) from None

    def _sync_chain(self, st: ChainState):
        """A thread issuing a chain with synchronous reads."""
        core = self.cores[st.core]
        prof = self.profile
        tagged = st.mode is Mode.DRIVER
        try:
            if tagged:
                self._begin_tagged(st)
            yield core.acquire(st)
            holding = True
            next_hop = "full"
            tag = (st.fd, st.generation, st.chain_id) if tagged else None
            while True:
                if next_hop == "full":
                    if not holding:
                        yield core.acquire(st)
                        holding = True
                    cost = path_cost(prof, Mode.BASELINE, 1).cpu_ns
                    yield from self._charge(core, cost, st)
                    if tagged:
                        self._check_current(st)
                    hop_tag = tag if (tagged and st.hops_completed == 0) else None
                    block = yield from self._io(self._fs_runs(st), hop_tag, st)
                elif next_hop == "syscall":
                    yield from self._charge(core, path_cost(prof, Mode.SYSCALL, 2).cpu_ns, st)
                    block = yield from self._io(self._fs_runs(st), None, st)
                else:
                    pba = next_hop[1]
                    yield from self._charge(core, path_cost(prof, Mode.DRIVER, 2).cpu_ns, st)
                    self._check_current(st)
                    if holding:
                        # Resubmitted from the polled completion; the thread now sleeps.
                        core.release()
                        holding = False
                    block = yield from self._io([(pba, st.length)], tag, st)
                if tagged:
                    self._check_current(st)

                action = self._run_function(st, block)
                if isinstance(action, Return):
                    return self._done(st, core, holding, "ok", action.buffer)
                if isinstance(action, Drop):
                    return self._done(st, core, holding, "drop")
                st.offset = action.file_offset
                if st.mode is Mode.BASELINE:
                    core.release()
                    holding = False
                    next_hop = "full"
                elif st.mode is Mode.SYSCALL:
                    self._count_resubmit(st, "syscall")
                    next_hop = "syscall"
                else:
                    tr = translate(self.nvme.cache(st.fd), st.offset, st.length)
                    if isinstance(tr, Single):
                        self._count_resubmit(st, "driver")
                        next_hop = ("driver", tr.pba)
                    elif isinstance(tr, Split):
                        st.timing.split_hops += 1
                        next_hop = "full"
                    else:
                        raise _translation_abort(tr)
        except _Abort as a:
            core_held = core.holder is st
            return self._done(st, core, core_held, a.code, detail=a.detail)

    def _done(self, st, core, holding, status, buffer=None, detail=""):
        if holding:
            core.release()
        return self._finish(st, status, buffer, detail)

    def _count_resubmit(self, st: ChainState, layer: str):
        self.resubmits[layer] += 1
        self.process_resubmits[st.pid] += 1

    def _kernel_continue(self, st: ChainState, block: bytes):
        """Drive a chain after its first completion without the thread (uring)."""
        core = self.cores[st.core]
        prof = self.profile
        tagged = st.mode is Mode.DRIVER
        tag = (st.fd, st.generation, st.chain_id) if tagged else None
        try:
            while True:
                if tagged:
                    self._check_current(st)
                action = self._run_function(st, block)
                if isinstance(action, Return):
                    return self._finish(st, "ok", action.buffer)
                if isinstance(action, Drop):
                    return self._finish(st, "drop")
                st.offset = action.file_offset
                if st.mode is Mode.SYSCALL:
                    self._count_resubmit(st, "syscall")
                    yield from self._charge(core, path_cost(prof, Mode.SYSCALL, 2).cpu_ns, st)
                    block = yield from self._io(self._fs_runs(st), None, st)
                    continue
                tr = translate(self.nvme.cache(st.fd), st.offset, st.length)
                if isinstance(tr, Single):
                    self._count_resubmit(st, "driver")
                    yield from self._charge(core, path_cost(prof, Mode.DRIVER, 2).cpu_ns, st)
                    self._check_current(st)
                    block = yield from self._io([(tr.pba, st.length)], tag, st)
                elif isinstance(tr, Split):
                    st.timing.split_hops += 1
                    block = yield from self.split_fallback(st, core)
                else:
                    raise _translation_abort(tr)
        except _Abort as a:
            return self._finish(st, a.code, detail=a.detail)

    def split_fallback(self, st: ChainState, core: Core | None = None):
        """Generator: run the pending hop as an ordinary full-path read.

        Used when the next offset straddles discontiguous extents. The
        completion goes up to the application, which runs the function itself;
        the hop after this one is again eligible for driver resubmission.
        """
        core = core or self.cores[st.core]
        yield from self._charge(core, path_cost(self.profile, Mode.BASELINE, 1).cpu_ns, st)
        block = yield from self._io(self._fs_runs(st), None, st)
        return block

    def _batch(self, states: list[ChainState]):
        """io_uring style: one crossing per batch, per-op path cost below it."""
        prof = self.profile
        core = self.cores[states[0].core]
        per_op = prof.software_ns - prof.crossing_ns
        active = list(states)
        results: dict[int, ChainResult] = {}
        first_level = True
        pending = []
        for st in states:
            if st.mode is Mode.DRIVER:
                try:
                    self._begin_tagged(st)
                except _Abort as a:
                    results[st.chain_id] = self._finish(st, a.code, detail=a.detail)
        active = [st for st in active if st.chain_id not in results]

        while active:
            yield core.acquire(active[0])
            self.cpu_charged_ns += prof.crossing_ns
            active[0].timing.cpu_ns += prof.crossing_ns
            yield from core.work(prof.crossing_ns)
            submitted = []
            for st in active:
                yield from self._charge(core, per_op, st)
                try:
                    runs = self._fs_runs(st)
                    if st.mode is Mode.DRIVER:
                        self._check_current(st)
                except _Abort as a:
                    results[st.chain_id] = self._finish(st, a.code, detail=a.detail)
                    continue
                tag = ((st.fd, st.generation, st.chain_id)
                       if st.mode is Mode.DRIVER and first_level else None)
                submitted.append((st, self._submit(runs, tag, st)))
            core.release()

            if first_level and any(st.mode is not Mode.BASELINE for st in states):
                # Hooked chains continue in the kernel from their first completion.
                for st, sig in submitted:
                    pending.append(self.loop.spawn(self._after(sig, st)))
                for sig in pending:
                    res = yield sig
                    results[res.chain_id] = res
                break

            next_active = []
            for st, sigs in submitted:
                block = yield from self._gather(sigs)
                try:
                    action = self._run_function(st, block)
                except _Abort as a:
                    results[st.chain_id] = self._finish(st, a.code, detail=a.detail)
                    continue
                if isinstance(action, Return):
                    results[st.chain_id] = self._finish(st, "ok", action.buffer)
                elif isinstance(action, Drop):
                    results[st.chain_id] = self._finish(st, "drop")
                else:
                    st.offset = action.file_offset
                    next_active.append(st)
            active = next_active
            first_level = False
        return [results[st.chain_id] for st in states]

    def _after(self, sigs, st: ChainState):
        block = yield from self._gather(sigs)
        res = yield self.loop.spawn(self._kernel_continue(st, block))
        return res

    # ---- public entry points ----------------------------------------------------

    def start_chain(self, fd, program, start_offset, mode=Mode.BASELINE, hop_limit=16,
                    core=0, pid=0, length=None) -> Signal:
        st = self._new_state(fd, program, start_offset, mode, hop_limit, core, pid, length)
        return self.loop.spawn(self._sync_chain(st))

    def start_batch(self, fd, ops, mode=Mode.BASELINE, hop_limit=16, core=0, pid=0) -> Signal:
        """Start one io_uring batch; ``ops`` is a list of ``(program, start_offset)``."""
        if not ops:
            raise ValueError("empty batch")
        states = [self._new_state(fd, prog, off, mode, hop_limit, core, pid, None)
                  for prog, off in ops]
        return self.loop.spawn(self._batch(states))

    def run_chain(self, fd, program, start_offset, mode=Mode.BASELINE, hop_limit=16,
                  core=0, pid=0) -> ChainResult:
        done = self.start_chain(fd, program, start_offset, mode, hop_limit, core, pid)
        self.loop.run(until=done)
        return done.value

    def read_sync(self, fd, file_offset, length) -> tuple[bytes, TimingRecord]:
        """A plain O_DIRECT-style read charged as one full-path hop."""
        if length <= 0 or length % BLOCK_SIZE:
            raise ValueError("length must be a positive multiple of 512")
        extents = self.files[fd]
        runs = extents.pieces(file_offset, length)  # IndexError / LookupError surface here
        st = ChainState(-1, fd, None, Mode.BASELINE, file_offset, length, 1, 0, 0, self.now)
        core = self.cores[0]

        def proc():
            yield core.acquire(st)
            yield from self._charge(core, self.profile.software_ns, st)
            data = yield from self._io(runs, None, st)
            core.release()
            st.timing.end_ns = self.now
            st.timing.hops = 1
            return data

        done = self.loop.spawn(proc())
        self.loop.run(until=done)
        return done.value, st.timing

    def submit_batch(self, fd, ops, batch_size: int, mode=Mode.BASELINE,
                     hop_limit=16) -> list[ChainResult]:
        if batch_size < 1:
            raise ValueError("batch size must be >= 1")
        out = []
        for i in range(0, len(ops), batch_size):
            done = self.start_batch(fd, ops[i:i + batch_size], mode, hop_limit)
            self.loop.run(until=done)
            out.extend(done.value)
        return out

    def run(self) -> None:
        self.loop.run()

    # ---- audits -----------------------------------------------------------------

    def cpu_busy_ns(self, until=None) -> int:
        return sum(c.busy_ns(until) for c in self.cores)

    def audit_tagged(self) -> list[str]:
        """Problems with tagged submissions; empty when the safety property holds.

        Replays install/invalidate/submit records in order: each tagged request
        must carry the fd's current generation, be issued while the cache is
        valid, and lie wholly inside that generation's extents. The device log
        is cross-checked to contain exactly the audited tagged requests.
        """
        problems = []
        state: dict[int, tuple[int, bool]] = {}
        tables: dict[tuple[int, int], set] = {}
        n_tagged = 0
        for ordinal, kind, fd, gen, pba, nblocks, t in self.audit_log:
            if kind == "install":
                state[fd] = (gen, True)
            elif kind == "invalidate":
                state[fd] = (gen, False)
            else:
                n_tagged += 1
                cur = state.get(fd)
                if cur is None or cur != (gen, True):
                    problems.append(f"tagged I/O #{ordinal} on fd {fd} gen {gen} at {t} ns "
                                    f"while cache state is {cur}")
                key = (fd, gen)
                if key not in tables:
                    emap = self.nvme.caches[fd].history[gen]
                    tables[key] = set(int(b) for b in emap.block_table())
                blocks = set(range(pba, pba + nblocks))
                if not blocks <= tables[key]:
                    problems.append(f"tagged I/O #{ordinal} reads blocks {sorted(blocks)[:4]}... "
                                    f"outside fd {fd} gen {gen}")
        dev_tagged = sum(1 for e in self.device.log if e.tag is not None)
        if dev_tagged != n_tagged:
            problems.append(f"device log has {dev_tagged} tagged requests, audit saw {n_tagged}")
        return problems


def layout(image_bytes: bytes, extents: ExtentMap | None = None,
           spare_blocks: int = 0) -> tuple[BlockStore, ExtentMap]:
    """Place a file's bytes on a fresh block store according to ``extents``."""
    if len(image_bytes) % BLOCK_SIZE:
        raise ValueError("file length must be a whole number of blocks")
    if extents is None:
        extents = ExtentMap.single(0, len(image_bytes))
    if extents.file_len != len(image_bytes):
        raise ValueError("extent map length differs from file length")
    store = BlockStore.zeros(extents.end_pba + spare_blocks)
    for e in extents.extents:
        store.write(e.pba, image_bytes[e.file_off:e.file_end])
    return store, extents
