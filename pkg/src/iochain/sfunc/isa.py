"""Instruction set of storage functions and its binary encoding.

Eight 64-bit registers ``r0``-``r7``. Each instruction encodes to 16 bytes::

    u8 opcode | u8 dst | u8 src (0xff = none) | u8 0 | u32 0 | i64/u64 imm

All arithmetic wraps modulo 2**64; comparisons are unsigned.
"""

from __future__ import annotations

import copy

import enum
import struct
from dataclasses import dataclass, field

NREGS = 8
NO_REG = 0xFF
MASK64 = (1 << 64) - 1
MAX_INSNS = 4096
MAX_RETURN = 4096
INSN_SIZE = 16
_INSN = struct.Struct("<BBBB4xQ")


class Op(enum.IntEnum):
    LOADB = 1
    LOADW = 2
    LOADQ = 3
    MOVI = 4
    MOV = 5
    ADD = 6
    SUB = 7
    MUL = 8
    AND = 9
    OR = 10
    SHL = 11
    SHR = 12
    JEQ = 13
    JNE = 14
    JLT = 15
    JGE = 16
    EMIT = 17
    RESUBMIT = 18
    RETURN = 19
    DROP = 20


LOADS = {Op.LOADB: 1, Op.LOADW: 4, Op.LOADQ: 8}
ALU = frozenset({Op.ADD, Op.SUB, Op.MUL, Op.AND, Op.OR, Op.SHL, Op.SHR})
JUMPS = frozenset({Op.JEQ, Op.JNE, Op.JLT, Op.JGE})
TERMINATORS = frozenset({Op.RESUBMIT, Op.RETURN, Op.DROP})
# imm is a signed quantity for these; unsigned (mod 2**64) for the rest
SIGNED_IMM = frozenset(LOADS) | JUMPS


@dataclass(frozen=True)
class Instruction:
    op: Op
    dst: int = 0
    src: int | None = None
    imm: int = 0

    def __post_init__(self):
        object.__setattr__(self, "op", Op(self.op))
        if self.op not in SIGNED_IMM:
            object.__setattr__(self, "imm", self.imm & MASK64)

    def encode(self) -> bytes:
        src = NO_REG if self.src is None else self.src
        return _INSN.pack(self.op, self.dst, src, 0, self.imm & MASK64)

    @classmethod
    def decode(cls, raw: bytes) -> "Instruction":
        op, dst, src, pad, imm = _INSN.unpack(raw)
        if pad:
            raise ValueError("nonzero padding byte")
        op = Op(op)
        if op in SIGNED_IMM and imm >= 1 << 63:
            imm -= 1 << 64
        return cls(op, dst, None if src == NO_REG else src, imm)


@dataclass(frozen=True)
class Program:
    """A storage function: instructions plus declared limits."""

    insns: tuple[Instruction, ...]
    max_return: int = MAX_RETURN
    block_size: int = 512
    name: str = ""
    version: int = 1
    _code: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "insns", tuple(self.insns))
        code = tuple((int(i.op), i.dst, NO_REG if i.src is None else i.src, i.imm)
                     for i in self.insns)
        object.__setattr__(self, "_code", code)

    def __len__(self) -> int:
        return len(self.insns)

    def with_imm(self, index: int, imm: int) -> "Program":
        """Copy with instruction ``index`` given a new immediate."""
        clone = copy.copy(self)
        old = self.insns[index]
        new = Instruction(old.op, old.dst, old.src, imm)
        insns = self.insns[:index] + (new,) + self.insns[index + 1:]
        code = self._code[:index] + ((int(new.op), new.dst, self._code[index][2], new.imm),) \
            + self._code[index + 1:]
        object.__setattr__(clone, "insns", insns)
        object.__setattr__(clone, "_code", code)
        return clone

    @property
    def code(self) -> tuple:
        return self._code

    def encode(self) -> bytes:
        return b"".join(i.encode() for i in self.insns)

    @classmethod
    def decode(cls, raw: bytes, **meta) -> "Program":
        if len(raw) % INSN_SIZE:
            raise ValueError(f"program image length {len(raw)} not a multiple of {INSN_SIZE}")
        insns = [Instruction.decode(raw[i:i + INSN_SIZE]) for i in range(0, len(raw), INSN_SIZE)]
        return cls(tuple(insns), **meta)
