"""Deterministic NVMe device model on a virtual nanosecond clock.

The device serves 512 B block reads with a fixed service latency, a bounded
number of concurrently serviced requests and a device-wide completion-rate
cap. Completion times are fixed at submission: requests are served FIFO, each
takes the earliest free service slot, and consecutive completions are spaced
at least ``ceil(1e9 / max_iops)`` ns apart.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

BLOCK_SIZE = 512


class DeviceError(Exception):
    """Base class for device-level failures."""


class OutOfRangeError(DeviceError):
    pass


class QueueOverflowError(DeviceError):
    pass


class VirtualClock:
    """Monotone simulated time in integer nanoseconds."""

    __slots__ = ("now_ns",)

    def __init__(self, now_ns: int = 0):
        self.now_ns = now_ns

    def advance(self, t_ns: int) -> None:
        if t_ns < self.now_ns:
            raise ValueError(f"time would go backwards: {t_ns} < {self.now_ns}")
        self.now_ns = t_ns


@dataclass(frozen=True)
class DeviceConfig:
    service_ns: int = 3224
    parallelism: int = 64
    # Calibrated so the driver-hook throughput ceiling lands near 2.5x.
    max_iops: int = 2_400_000
    queue_bound: int = 1024
    seed: int = 0

    def validate(self) -> None:
        problems = []
        if self.service_ns <= 0:
            problems.append(f"service_ns must be > 0 (got {self.service_ns})")
        if self.parallelism < 1:
            problems.append(f"parallelism must be >= 1 (got {self.parallelism})")
        if self.max_iops <= 0:
            problems.append(f"max_iops must be > 0 (got {self.max_iops})")
        if self.queue_bound < 1:
            problems.append(f"queue_bound must be >= 1 (got {self.queue_bound})")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def spacing_ns(self) -> int:
        return math.ceil(1_000_000_000 / self.max_iops)


@dataclass(frozen=True)
class DeviceRequest:
    request_id: int
    pba: int
    len: int
    tag: object = None
    submit_ns: int | None = None


@dataclass(frozen=True)
class Completion:
    request_id: int
    data: bytes
    complete_ns: int
    submit_ns: int = 0
    tag: object = None


@dataclass(frozen=True)
class DeviceEvent:
    """One serviced request, as recorded in the device event log."""

    seq: int
    request_id: int
    pba: int
    nblocks: int
    tag: object
    submit_ns: int
    start_ns: int
    complete_ns: int


class BlockStore:
    """In-memory array of 512 B blocks, optionally loaded from a raw image."""

    def __init__(self, data: bytes | bytearray = b""):
        if len(data) % BLOCK_SIZE:
            raise ValueError("backing store must hold a whole number of 512 B blocks")
        self._data = bytearray(data)

    @classmethod
    def zeros(cls, nblocks: int) -> "BlockStore":
        return cls(bytes(nblocks * BLOCK_SIZE))

    @classmethod
    def from_file(cls, path: str | Path) -> "BlockStore":
        return cls(Path(path).read_bytes())

    def to_file(self, path: str | Path) -> None:
        Path(path).write_bytes(bytes(self._data))

    @property
    def nblocks(self) -> int:
        return len(self._data) // BLOCK_SIZE

    def read(self, pba: int, nbytes: int) -> bytes:
        start = pba * BLOCK_SIZE
        return bytes(self._data[start:start + nbytes])

    def write(self, pba: int, data: bytes) -> None:
        # Writes carry no modeled latency; used to lay out images.
        if len(data) % BLOCK_SIZE:
            raise ValueError("writes must be whole blocks")
        if pba < 0 or pba + len(data) // BLOCK_SIZE > self.nblocks:
            raise OutOfRangeError(f"write of {len(data)} B at pba {pba} exceeds store")
        start = pba * BLOCK_SIZE
        self._data[start:start + len(data)] = data


@dataclass
class Device:
    config: DeviceConfig
    store: BlockStore
    clock: VirtualClock = field(default_factory=VirtualClock)
    log: list[DeviceEvent] = field(default_factory=list)

    def __post_init__(self):
        self._slots = [0] * self.config.parallelism  # free-at times, min-heap
        self._pending: list[tuple[int, int, Completion]] = []
        self._last_complete = None
        self._seq = 0
        self._destroyed = False

    @property
    def in_flight(self) -> int:
        return len(self._pending)

    def peek(self) -> tuple[int, int] | None:
        """(complete_ns, seq) of the earliest pending completion."""
        if not self._pending:
            return None
        t, seq, _ = self._pending[0]
        return t, seq

    def submit(self, req: DeviceRequest) -> int:
        """Accept a read and schedule its completion; returns the completion time."""
        if self._destroyed:
            raise DeviceError("device destroyed")
        if req.len < BLOCK_SIZE or req.len % BLOCK_SIZE:
            raise OutOfRangeError(f"len {req.len} is not a positive multiple of 512")
        nblocks = req.len // BLOCK_SIZE
        if req.pba < 0 or req.pba + nblocks > self.store.nblocks:
            raise OutOfRangeError(
                f"pba {req.pba}+{nblocks} outside device of {self.store.nblocks} blocks")
        if len(self._pending) >= self.config.queue_bound:
            raise QueueOverflowError(f"more than {self.config.queue_bound} requests in flight")

        submit_ns = self.clock.now_ns if req.submit_ns is None else req.submit_ns
        if submit_ns < self.clock.now_ns:
            raise ValueError("cannot submit in the past")
        slot_free = heapq.heappop(self._slots)
        start = max(submit_ns, slot_free)
        complete = start + self.config.service_ns
        if self._last_complete is not None:
            complete = max(complete, self._last_complete + self.config.spacing_ns)
        heapq.heappush(self._slots, complete)
        self._last_complete = complete

        seq = self._seq
        self._seq += 1
        data = self.store.read(req.pba, req.len)
        comp = Completion(req.request_id, data, complete, submit_ns, req.tag)
        heapq.heappush(self._pending, (complete, seq, comp))
        self.log.append(DeviceEvent(seq, req.request_id, req.pba, nblocks, req.tag,
                                    submit_ns, start, complete))
        return complete

    def step(self) -> Completion | None:
        """Pop the earliest pending completion and advance the clock to it."""
        if not self._pending:
            return None
        t, _, comp = heapq.heappop(self._pending)
        self.clock.advance(t)
        return comp

    def destroy(self) -> None:
        self._destroyed = True


def create_device(config: DeviceConfig | None = None,
                  backing: BlockStore | bytes | None = None,
                  clock: VirtualClock | None = None) -> Device:
    config = config or DeviceConfig()
    config.validate()
    if backing is None:
        backing = BlockStore()
    elif not isinstance(backing, BlockStore):
        backing = BlockStore(backing)
    return Device(config, backing, clock or VirtualClock())
