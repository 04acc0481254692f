"""Minimal discrete-event kernel: timers, generator processes and CPU cores.

Processes are generators that yield :class:`Signal` objects and are resumed
with the signal's value once it fires. Everything runs on one virtual clock
shared with the block device; equal-time events are ordered by
``(time, priority, sequence)``.
"""

from __future__ import annotations

import heapq
from collections import deque
from typing import Callable, Generator

from .blockdev import Completion, Device

PRIO_INVALIDATE = 0
PRIO_DEVICE = 1
PRIO_NORMAL = 2


class Signal:
    """One-shot event carrying a value."""

    __slots__ = ("fired", "value", "_waiters")

    def __init__(self):
        self.fired = False
        self.value = None
        self._waiters: list[Callable] = []

    def wait(self, fn: Callable) -> None:
        if self.fired:
            fn(self.value)
        else:
            self._waiters.append(fn)

    def fire(self, value=None) -> None:
        if self.fired:
            raise RuntimeError("signal fired twice")
        self.fired = True
        self.value = value
        waiters, self._waiters = self._waiters, []
        for fn in waiters:
            fn(value)


class Loop:
    def __init__(self, device: Device):
        self.device = device
        self.clock = device.clock
        self._heap: list = []
        self._seq = 0
        self._io_waiters: dict[int, Signal] = {}
        self._next_request_id = 0

    @property
    def now(self) -> int:
        return self.clock.now_ns

    def call_at(self, t_ns: int, fn: Callable, *args, prio: int = PRIO_NORMAL) -> None:
        if t_ns < self.clock.now_ns:
            raise ValueError("cannot schedule in the past")
        heapq.heappush(self._heap, (t_ns, prio, self._seq, fn, args))
        self._seq += 1

    def call_soon(self, fn: Callable, *args) -> None:
        self.call_at(self.clock.now_ns, fn, *args)

    def timeout(self, delay_ns: int) -> Signal:
        sig = Signal()
        self.call_at(self.clock.now_ns + delay_ns, sig.fire)
        return sig

    def new_request_id(self) -> int:
        rid = self._next_request_id
        self._next_request_id += 1
        return rid

    def submit_io(self, req) -> Signal:
        """Submit a device request; the signal fires with its Completion."""
        sig = Signal()
        self._io_waiters[req.request_id] = sig
        self.device.submit(req)
        return sig

    def spawn(self, gen: Generator) -> Signal:
        """Start a process now; the returned signal fires with its return value."""
        done = Signal()

        def resume(value=None):
            try:
                sig = gen.send(value)
            except StopIteration as stop:
                done.fire(stop.value)
                return
            sig.wait(lambda v: self.call_soon(resume, v))

        self.call_soon(resume)
        return done

    def step(self) -> bool:
        dev = self.device.peek()
        if self._heap:
            t, prio = self._heap[0][0], self._heap[0][1]
            if dev is None or (t, prio) <= (dev[0], PRIO_DEVICE):
                t, _, _, fn, args = heapq.heappop(self._heap)
                self.clock.advance(t)
                fn(*args)
                return True
        if dev is None:
            return False
        comp: Completion = self.device.step()
        self._io_waiters.pop(comp.request_id).fire(comp)
        return True

    def run(self, until: Signal | None = None) -> None:
        while until is None or not until.fired:
            if not self.step():
                break


class Core:
    """A CPU core with two kinds of occupancy.

    A thread *holds* the core while it runs or polls for its own I/O; holds are
    granted FIFO and exclude other threads. Charged *work* (thread software
    path or interrupt handler) runs serially on the core's work timeline, so an
    interrupt can slot in while the holder is merely polling.
    """

    def __init__(self, loop: Loop, index: int):
        self.loop = loop
        self.index = index
        self.holder = None
        self._queue: deque = deque()
        self._granted_at = 0
        self._work_free_at = 0
        self.work_ns = 0
        self.hold_spans: list[tuple[int, int]] = []
        self.work_spans: list[tuple[int, int]] = []

    def acquire(self, owner=None) -> Signal:
        sig = Signal()
        if self.holder is None:
            self._grant(owner, sig)
        else:
            self._queue.append((owner, sig))
        return sig

    def _grant(self, owner, sig: Signal) -> None:
        self.holder = owner if owner is not None else sig
        self._granted_at = self.loop.now
        sig.fire(self)

    def release(self) -> None:
        if self.holder is None:
            raise RuntimeError(f"core {self.index} released while idle")
        now = self.loop.now
        if now > self._granted_at:
            self.hold_spans.append((self._granted_at, now))
        self.holder = None
        if self._queue:
            owner, sig = self._queue.popleft()
            self._grant(owner, sig)

    def work(self, ns: int):
        """Generator: run ``ns`` of charged work, queued behind earlier work."""
        if ns <= 0:
            return
        now = self.loop.now
        start = max(now, self._work_free_at)
        end = start + ns
        self._work_free_at = end
        self.work_ns += ns
        self.work_spans.append((start, end))
        yield self.loop.timeout(end - now)

    def busy_ns(self, until: int | None = None) -> int:
        """Length of the union of hold and work spans (clipped at ``until``)."""
        spans = sorted(self.hold_spans + self.work_spans)
        if self.holder is not None:
            spans.append((self._granted_at, self.loop.now))
            spans.sort()
        total, cur_s, cur_e = 0, None, None
        for s, e in spans:
            if until is not None:
                e = min(e, until)
                if s >= e:
                    continue
            if cur_e is None or s > cur_e:
                if cur_e is not None:
                    total += cur_e - cur_s
                cur_s, cur_e = s, e
            else:
                cur_e = max(cur_e, e)
        if cur_e is not None:
            total += cur_e - cur_s
        return total
