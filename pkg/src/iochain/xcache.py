"""File extent maps and the NVMe-layer soft-state extent cache.

The file system owns an :class:`ExtentMap` per file. Installing a storage
function snapshots that map into an :class:`ExtentCache` held by the NVMe
layer, which translates file offsets chosen by the function into physical
block addresses. Any remap invalidates the whole cache; the application must
reinstall before issuing tagged I/O again.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .blockdev import BLOCK_SIZE
from .sfunc import Program, VerifierRejected, verify


class ExtentError(Exception):
    """EEXTENT: translation against an invalid or superseded cache."""

    code = "EEXTENT"


@dataclass(frozen=True)
class Extent:
    file_off: int
    pba: int
    len: int

    @property
    def file_end(self) -> int:
        return self.file_off + self.len

    @property
    def nblocks(self) -> int:
        return self.len // BLOCK_SIZE


class ExtentMap:
    """Sorted, non-overlapping file-offset -> physical-block runs."""

    def __init__(self, extents, file_len: int | None = None):
        exts = sorted((e if isinstance(e, Extent) else Extent(*e) for e in extents),
                      key=lambda e: e.file_off)
        for e in exts:
            if e.len <= 0 or e.len % BLOCK_SIZE or e.file_off % BLOCK_SIZE or e.pba < 0:
                raise ValueError(f"extent {e} is not block aligned")
        for a, b in zip(exts, exts[1:]):
            if a.file_end > b.file_off:
                raise ValueError(f"extents {a} and {b} overlap in file space")
        by_pba = sorted(exts, key=lambda e: e.pba)
        for a, b in zip(by_pba, by_pba[1:]):
            if a.pba + a.nblocks > b.pba:
                raise ValueError(f"extents {a} and {b} overlap on disk")
        self.extents: tuple[Extent, ...] = tuple(exts)
        self.file_len = file_len if file_len is not None else (
            exts[-1].file_end if exts else 0)
        self._starts = [e.file_off for e in exts]

    def __repr__(self) -> str:
        return f"ExtentMap({list(self.extents)!r}, file_len={self.file_len})"

    def __eq__(self, other) -> bool:
        return (isinstance(other, ExtentMap) and self.extents == other.extents
                and self.file_len == other.file_len)

    @classmethod
    def single(cls, pba: int, length: int) -> "ExtentMap":
        return cls([Extent(0, pba, length)], length)

    @classmethod
    def scattered(cls, length: int, pieces: int, base_pba: int = 0, gap_blocks: int = 8,
                  avoid_align: int = BLOCK_SIZE) -> "ExtentMap":
        """Cut ``length`` bytes into ``pieces`` extents separated by disk gaps.

        Boundaries are block aligned; when ``avoid_align`` exceeds a block they
        are nudged off multiples of it so that reads of that size straddle them.
        """
        if pieces < 1:
            raise ValueError("need at least one extent")
        nblocks = length // BLOCK_SIZE
        if pieces > nblocks:
            raise ValueError(f"cannot cut {nblocks} blocks into {pieces} extents")
        cuts = [0]
        for i in range(1, pieces):
            b = (nblocks * i // pieces) * BLOCK_SIZE
            if avoid_align > BLOCK_SIZE and b % avoid_align == 0:
                b += BLOCK_SIZE
            cuts.append(max(b, cuts[-1] + BLOCK_SIZE))
        cuts.append(length)
        extents = []
        pba = base_pba
        for lo, hi in zip(cuts, cuts[1:]):
            if hi <= lo:
                raise ValueError("scatter produced an empty extent")
            extents.append(Extent(lo, pba, hi - lo))
            pba += (hi - lo) // BLOCK_SIZE + gap_blocks
        return cls(extents, length)

    @property
    def holes(self) -> bool:
        pos = 0
        for e in self.extents:
            if e.file_off != pos:
                return True
            pos = e.file_end
        return pos < self.file_len

    @property
    def end_pba(self) -> int:
        return max((e.pba + e.nblocks for e in self.extents), default=0)

    def pieces(self, file_offset: int, length: int) -> list[tuple[int, int]]:
        """Physical ``(pba, len)`` runs covering the range, adjacent runs merged.

        Raises IndexError past EOF and LookupError on a hole.
        """
        if file_offset < 0 or length <= 0 or file_offset + length > self.file_len:
            raise IndexError(f"range [{file_offset}, {file_offset + length}) outside file "
                             f"of {self.file_len} B")
        runs: list[list[int]] = []
        pos, end = file_offset, file_offset + length
        i = bisect.bisect_right(self._starts, pos) - 1
        while pos < end:
            if i < 0 or i >= len(self.extents) or not (
                    self.extents[i].file_off <= pos < self.extents[i].file_end):
                raise LookupError(f"file offset {pos} is not mapped")
            e = self.extents[i]
            take = min(end, e.file_end) - pos
            pba = e.pba + (pos - e.file_off) // BLOCK_SIZE
            if runs and runs[-1][0] + runs[-1][1] // BLOCK_SIZE == pba:
                runs[-1][1] += take
            else:
                runs.append([pba, take])
            pos += take
            i += 1
        return [(p, n) for p, n in runs]

    def block_table(self) -> np.ndarray:
        """pba of every file block (-1 for holes); a brute-force view for audits."""
        table = np.full(self.file_len // BLOCK_SIZE, -1, dtype=np.int64)
        for e in self.extents:
            first = e.file_off // BLOCK_SIZE
            table[first:first + e.nblocks] = np.arange(e.pba, e.pba + e.nblocks)
        return table


@dataclass(frozen=True)
class Single:
    pba: int


@dataclass(frozen=True)
class Split:
    pieces: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class Invalid:
    reason: str = ""


Translation = Single | Split | Invalid


@dataclass
class ExtentCache:
    """Per-fd snapshot of a file's extents held by the NVMe layer."""

    fd: int
    extents: ExtentMap
    generation: int = 1
    valid: bool = True
    history: dict[int, ExtentMap] = field(default_factory=dict)

    def __post_init__(self):
        self.history.setdefault(self.generation, self.extents)


def translate(cache: ExtentCache | None, file_offset: int, length: int) -> Translation:
    if length <= 0 or length % BLOCK_SIZE:
        raise ValueError("translation length must be a positive multiple of 512")
    if cache is None or not cache.valid:
        return Invalid("cache invalid")
    try:
        runs = cache.extents.pieces(file_offset, length)
    except IndexError:
        return Invalid("offset out of file bounds")
    except LookupError:
        return Invalid("unmapped")
    if len(runs) == 1:
        return Single(runs[0][0])
    return Split(tuple(runs))


@dataclass(frozen=True)
class InstallHandle:
    fd: int
    program: Program
    generation: int


class NvmeExtentLayer:
    """Installed functions and extent caches, keyed by file descriptor.

    ``chains`` tracks in-flight tagged chains per fd so invalidation can report
    how many it aborted; the chains themselves notice the abort at their next
    completion by comparing generations.
    """

    def __init__(self):
        self.caches: dict[int, ExtentCache] = {}
        self.handles: dict[int, InstallHandle] = {}
        self.chains: dict[int, set] = {}
        self.invalidations: list[tuple[int, int, int]] = []  # (time, fd, aborted)

    def install(self, fd: int, extents: ExtentMap, program: Program,
                files_of_program: set[int] | None = None) -> InstallHandle:
        err = verify(program)
        if err is not None:
            raise VerifierRejected(err)
        if extents.holes:
            raise ValueError(f"fd {fd} has holes; cannot install")
        if files_of_program and files_of_program != {fd}:
            raise ValueError("a storage function may only address the file it is attached to")
        old = self.caches.get(fd)
        gen = old.generation + 1 if old else 1
        history = old.history if old else {}
        self.caches[fd] = ExtentCache(fd, extents, gen, True, history)
        self.caches[fd].history[gen] = extents
        handle = InstallHandle(fd, program, gen)
        self.handles[fd] = handle
        return handle

    def cache(self, fd: int) -> ExtentCache | None:
        return self.caches.get(fd)

    def is_current(self, fd: int, generation: int) -> bool:
        c = self.caches.get(fd)
        return c is not None and c.valid and c.generation == generation

    def track(self, fd: int, chain) -> None:
        self.chains.setdefault(fd, set()).add(chain)

    def untrack(self, fd: int, chain) -> None:
        self.chains.get(fd, set()).discard(chain)

    def invalidate(self, fd: int, now_ns: int = 0) -> int:
        c = self.caches.get(fd)
        if c is None or not c.valid:
            return 0
        c.valid = False
        # Tracked chains are all doomed; forget them so a later remap cannot count them twice.
        aborted = len(self.chains.pop(fd, ()))
        self.invalidations.append((now_ns, fd, aborted))
        return aborted


def schedule_invalidations(mean_interval_s: float, horizon_s: float, seed: int = 0) -> list[int]:
    """Invalidation times (ns) with exponential spacing of the given mean.

    ``mean_interval_s = inf`` disables invalidation.
    """
    if not mean_interval_s > 0:
        raise ValueError("mean interval must be > 0")
    if np.isinf(mean_interval_s):
        return []
    rng = np.random.default_rng(seed)
    horizon_ns = int(horizon_s * 1e9)
    times: list[int] = []
    t = 0.0
    # Draw in chunks; the expected count is horizon / mean.
    chunk = max(16, int(horizon_s / mean_interval_s * 1.2) + 16)
    while True:
        for gap in rng.exponential(mean_interval_s * 1e9, size=chunk):
            t += gap
            if t >= horizon_ns:
                return times
            times.append(int(t))
