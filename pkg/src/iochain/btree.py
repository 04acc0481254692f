"""On-disk B+-tree image: one node per page, bulk built, little-endian.

Page layout (offsets in bytes)::

    0   u16  magic 0xB7EE
    2   u8   kind (0 internal, 1 leaf)
    3   u8   level (leaves are 0)
    4   u16  count
    6   10 B reserved (zero)
    16  internal: count u64 keys, then count+1 u64 child file offsets
        leaf:     count (u64 key, u64 value) pairs

A 512 B page holds 30 separator keys (31 children) or 31 leaf pairs. Child
``j`` of an internal node holds keys in ``[keys[j-1], keys[j])``. Pages are
placed breadth first with the root at file offset 0.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from pathlib import Path

from .sfunc import Op, Program, assemble, check

MAGIC = 0xB7EE
HEADER = struct.Struct("<HBBH10x")
HEADER_SIZE = HEADER.size
KIND_INTERNAL = 0
KIND_LEAF = 1
U64_MAX = (1 << 64) - 1


class CorruptPage(ValueError):
    pass


def max_internal_keys(page_size: int = 512) -> int:
    return (page_size - HEADER_SIZE - 8) // 16


def max_leaf_pairs(page_size: int = 512) -> int:
    return (page_size - HEADER_SIZE) // 16


@dataclass(frozen=True)
class BTreePage:
    kind: int
    level: int
    keys: tuple[int, ...]
    children: tuple[int, ...] = ()
    values: tuple[int, ...] = ()

    @property
    def is_leaf(self) -> bool:
        return self.kind == KIND_LEAF

    def pack(self, page_size: int = 512) -> bytes:
        n = len(self.keys)
        if self.is_leaf:
            body = b"".join(struct.pack("<QQ", k, v) for k, v in zip(self.keys, self.values))
        else:
            body = struct.pack(f"<{n}Q", *self.keys) + struct.pack(f"<{n + 1}Q", *self.children)
        raw = HEADER.pack(MAGIC, self.kind, self.level, n) + body
        if len(raw) > page_size:
            raise ValueError(f"page overflow: {len(raw)} > {page_size} B")
        return raw.ljust(page_size, b"\0")

    @classmethod
    def unpack(cls, raw: bytes) -> "BTreePage":
        magic, kind, level, n = HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise CorruptPage(f"bad magic {magic:#06x}")
        if kind == KIND_LEAF:
            if HEADER_SIZE + 16 * n > len(raw):
                raise CorruptPage(f"leaf count {n} overflows page")
            flat = struct.unpack_from(f"<{2 * n}Q", raw, HEADER_SIZE)
            return cls(kind, level, flat[0::2], values=flat[1::2])
        if kind == KIND_INTERNAL:
            if HEADER_SIZE + 16 * n + 8 > len(raw):
                raise CorruptPage(f"internal count {n} overflows page")
            keys = struct.unpack_from(f"<{n}Q", raw, HEADER_SIZE)
            children = struct.unpack_from(f"<{n + 1}Q", raw, HEADER_SIZE + 8 * n)
            return cls(kind, level, keys, children=children)
        raise CorruptPage(f"bad page kind {kind}")


@dataclass(frozen=True)
class TreeImage:
    data: bytes
    page_size: int
    depth: int
    fanout: int
    key_count: int
    root_offset: int = 0

    @property
    def pages(self) -> int:
        return len(self.data) // self.page_size

    def page(self, file_offset: int) -> BTreePage:
        if file_offset % self.page_size or not 0 <= file_offset < len(self.data):
            raise CorruptPage(f"page offset {file_offset} invalid")
        return BTreePage.unpack(self.data[file_offset:file_offset + self.page_size])

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.data)

    @classmethod
    def load(cls, path: str | Path, page_size: int = 512) -> "TreeImage":
        data = Path(path).read_bytes()
        if not data or len(data) % page_size:
            raise CorruptPage(f"{path}: size {len(data)} is not a whole number of pages")
        root = BTreePage.unpack(data[:page_size])
        fanout, count = 2, 0
        for off in range(0, len(data), page_size):
            p = BTreePage.unpack(data[off:off + page_size])
            fanout = max(fanout, len(p.keys) if p.is_leaf else len(p.children))
            if p.is_leaf:
                count += len(p.keys)
        return cls(data, page_size, root.level + 1, fanout, count)


def _level_sizes(n_leaves: int, depth: int, fanout: int) -> list[int]:
    # Node count per level, root first: enough to hold the level below, and
    # at least two children per internal node so every level is populated.
    return [max(-(-n_leaves // fanout ** (depth - 1 - k)), 2 ** k) for k in range(depth)]


def _split_even(items: list, parts: int) -> list[list]:
    q, r = divmod(len(items), parts)
    out, pos = [], 0
    for i in range(parts):
        size = q + (1 if i < r else 0)
        out.append(items[pos:pos + size])
        pos += size
    return out


def build(keys, values, depth: int | None = None, fanout: int = 31,
          page_size: int = 512) -> TreeImage:
    """Bulk-build an image with uniform depth.

    ``fanout`` bounds both leaf pairs and internal children. With ``depth``
    unset the shallowest tree is built.
    """
    keys = [int(k) for k in keys]
    values = [int(v) for v in values]
    n = len(keys)
    if n != len(values):
        raise ValueError("keys and values differ in length")
    if n == 0:
        raise ValueError("cannot build an empty tree")
    if any(not 0 <= k <= U64_MAX for k in keys) or any(not 0 <= v <= U64_MAX for v in values):
        raise OverflowError("keys and values must fit in 64 bits")
    if any(a >= b for a, b in zip(keys, keys[1:])):
        raise ValueError("keys must be sorted and unique")
    if fanout < 2:
        raise ValueError("fanout must be >= 2")
    if fanout > max_leaf_pairs(page_size) or fanout - 1 > max_internal_keys(page_size):
        raise ValueError(f"fanout {fanout} does not fit a {page_size} B page")

    min_leaves = -(-n // fanout)
    if depth is None:
        depth = 1
        while fanout ** (depth - 1) < min_leaves:
            depth += 1
    if depth < 1 or depth > 255:
        raise ValueError(f"depth {depth} out of range")
    if depth == 1:
        if n > fanout:
            raise ValueError(f"{n} keys do not fit one leaf of fanout {fanout}")
        n_leaves = 1
    else:
        n_leaves = max(min_leaves, 2 ** (depth - 1))
        if n_leaves > n:
            raise ValueError(f"{n} keys cannot fill a depth-{depth} tree (need "
                             f">= {2 ** (depth - 1)})")
        if min_leaves > fanout ** (depth - 1):
            raise ValueError(f"{n} keys need more than depth {depth} at fanout {fanout}")

    sizes = _level_sizes(n_leaves, depth, fanout)
    first_page = [sum(sizes[:k]) for k in range(depth)]

    # Bottom-up: leaves, then parents grouping children evenly.
    pairs = list(zip(keys, values))
    leaf_chunks = _split_even(pairs, n_leaves)
    level_nodes: list[list] = [[None] * s for s in sizes]
    level_nodes[-1] = [BTreePage(KIND_LEAF, 0, tuple(k for k, _ in c), values=tuple(v for _, v in c))
                       for c in leaf_chunks]
    mins = [c[0][0] for c in leaf_chunks]
    for k in range(depth - 2, -1, -1):
        child_idx = list(range(sizes[k + 1]))
        groups = _split_even(child_idx, sizes[k])
        nodes, new_mins = [], []
        for g in groups:
            if not g or len(g) > fanout:
                raise ValueError("infeasible shape")
            seps = tuple(mins[j] for j in g[1:])
            offs = tuple((first_page[k + 1] + j) * page_size for j in g)
            nodes.append(BTreePage(KIND_INTERNAL, depth - 1 - k, seps, children=offs))
            new_mins.append(mins[g[0]])
        level_nodes[k] = nodes
        mins = new_mins

    data = b"".join(p.pack(page_size) for level in level_nodes for p in level)
    return TreeImage(data, page_size, depth, fanout, n)


def lookup_user(image: TreeImage, key: int) -> tuple[int | None, int]:
    """User-space lookup: (value or None, pages read)."""
    off = image.root_offset
    pages = 0
    while True:
        page = image.page(off)
        pages += 1
        if page.is_leaf:
            for k, v in zip(page.keys, page.values):
                if k == key:
                    return v, pages
            return None, pages
        j = 0
        while j < len(page.keys) and key >= page.keys[j]:
            j += 1
        off = page.children[j]


def trace_user(image: TreeImage, key: int) -> list[int]:
    """File offsets of the pages a lookup visits, root first."""
    off, path = image.root_offset, []
    while True:
        path.append(off)
        page = image.page(off)
        if page.is_leaf:
            return path
        j = 0
        while j < len(page.keys) and key >= page.keys[j]:
            j += 1
        off = page.children[j]


def _search_tree(lo: int, hi: int, test, leaf, out: list[str], tag: str) -> None:
    """Emit a forward-only binary decision over answers ``lo..hi``.

    ``test(mid, label)`` emits code that jumps to ``label`` when the answer is
    ``<= mid``; ``leaf(j)`` emits the code for answer ``j``.
    """
    if lo == hi:
        out += leaf(lo)
        return
    mid = (lo + hi) // 2
    label = f"{tag}_{lo}_{mid}"
    out += test(mid, label)
    _search_tree(mid + 1, hi, test, leaf, out, tag)
    out.append(f"{label}:")
    _search_tree(lo, mid, test, leaf, out, tag)


def lookup_source(key: int, page_size: int = 512, fanout: int | None = None) -> str:
    """Assembly text of the lookup function for ``key``.

    Both page kinds are searched with an unrolled binary search whose probes
    past ``count`` compare as larger than any key.
    """
    kmax = max_internal_keys(page_size) if fanout is None else fanout - 1
    pmax = max_leaf_pairs(page_size) if fanout is None else fanout
    lines = [
        ".name btree-lookup",
        ".ret 8",
        f".block {page_size}",
        "LOADW r1, 0            ; magic | kind << 16 | level << 24",
        "MOV r3, r1",
        "AND r3, 0xffff",
        f"MOVI r4, {MAGIC:#x}",
        "JNE r3, r4, drop",
        "LOADW r5, 4            ; count (low 16 bits)",
        "AND r5, 0xffff",
        f"MOVI r6, {key & U64_MAX:#x}   ; search key",
        "MOV r3, r1",
        "SHR r3, 16",
        "AND r3, 0xff           ; kind",
        "MOVI r4, 1",
        "JEQ r3, r4, leaf",
        "MOVI r4, 0",
        "JNE r3, r4, drop",
        f"MOVI r4, {kmax + 1}",
        "JGE r5, r4, drop       ; too many keys for this page",
    ]
    # Internal: child index = first slot whose separator exceeds the key.
    _search_tree(
        0, kmax,
        lambda mid, label: [f"MOVI r7, {mid}", f"JGE r7, r5, {label}",
                            f"LOADQ r2, {HEADER_SIZE + 8 * mid}", f"JLT r6, r2, {label}"],
        lambda j: [f"MOVI r0, {j}", "JEQ r0, r0, child"],
        lines, "i")
    lines += [
        "child:",
        "MOV r3, r5             ; &children[r0] = 16 + 8 * (count + r0)",
        "ADD r3, r0",
        "SHL r3, 3",
        f"LOADQ r4, r3, {HEADER_SIZE}",
        "RESUBMIT r4",
        "leaf:",
        f"MOVI r4, {pmax + 1}",
        "JGE r5, r4, drop",
    ]

    # Leaf: first slot whose key is >= the search key, then an equality test.
    def leaf_hit(j):
        if j == pmax:
            return ["JEQ r0, r0, absent"]
        base = HEADER_SIZE + 16 * j
        return [f"MOVI r0, {j}", "JGE r0, r5, absent", f"LOADQ r2, {base}",
                "JNE r2, r6, absent", f"LOADQ r2, {base + 8}", "EMIT r2, 8", "RETURN"]

    _search_tree(
        0, pmax,
        lambda mid, label: [f"MOVI r7, {mid}", f"JGE r7, r5, {label}",
                            f"LOADQ r2, {HEADER_SIZE + 16 * mid}", f"JGE r2, r6, {label}"],
        leaf_hit, lines, "l")
    lines += [
        "absent:",
        "RETURN",
        "drop:",
        "DROP",
    ]
    return "\n".join(lines) + "\n"


_TEMPLATES: dict[tuple[int, int | None], tuple[Program, int]] = {}


@functools.lru_cache(maxsize=16384)
def compile_lookup(key: int, page_size: int = 512, fanout: int | None = None) -> Program:
    """Storage function that walks one level per completion toward ``key``.

    Internal page: Resubmit to the child offset. Leaf: Return the 8-byte value,
    or an empty buffer when the key is absent. Bad magic or kind: Drop.
    """
    tkey = (page_size, fanout)
    if tkey not in _TEMPLATES:
        prog = assemble(lookup_source(0, page_size, fanout))
        check(prog)
        slot = next(i for i, ins in enumerate(prog.insns) if ins.op is Op.MOVI and ins.dst == 6)
        _TEMPLATES[tkey] = (prog, slot)
    prog, slot = _TEMPLATES[tkey]
    clone = prog.with_imm(slot, key & U64_MAX)
    # Only a MOVI immediate differs from the checked template; no verifier
    # rule looks at those.
    object.__setattr__(clone, "_verified", True)
    return clone


def demo_keys(n: int) -> tuple[list[int], list[int]]:
    """Deterministic odd keys (even ones are guaranteed absent) and mixed values."""
    keys = [2 * i + 1 for i in range(n)]
    values = [(k * 0x9E3779B97F4A7C15) & U64_MAX for k in keys]
    return keys, values


def full_tree(depth: int, fanout: int = 31, page_size: int = 512) -> TreeImage:
    keys, values = demo_keys(fanout ** depth)
    return build(keys, values, depth=depth, fanout=fanout, page_size=page_size)
