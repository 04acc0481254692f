"""Single-pass interpreter for verified storage functions."""

from __future__ import annotations

from dataclasses import dataclass

from .isa import MASK64, NO_REG, NREGS, Op, Program

BLOCK_ALIGN = 512

_LOADB, _LOADW, _LOADQ = int(Op.LOADB), int(Op.LOADW), int(Op.LOADQ)
_MOVI, _MOV = int(Op.MOVI), int(Op.MOV)
_ADD, _SUB, _MUL, _AND, _OR, _SHL, _SHR = (int(Op.ADD), int(Op.SUB), int(Op.MUL), int(Op.AND),
                                           int(Op.OR), int(Op.SHL), int(Op.SHR))
_JEQ, _JNE, _JLT, _JGE = int(Op.JEQ), int(Op.JNE), int(Op.JLT), int(Op.JGE)
_EMIT, _RESUBMIT, _RETURN, _DROP = int(Op.EMIT), int(Op.RESUBMIT), int(Op.RETURN), int(Op.DROP)


class SFuncError(Exception):
    code = "EFAULT"


class SFuncFault(SFuncError):
    """Runtime bounds trap or misaligned resubmission; aborts the chain only."""

    code = "EFAULT"


class ChainBoundError(SFuncError):
    code = "EBOUND"


@dataclass(frozen=True)
class Resubmit:
    file_offset: int


@dataclass(frozen=True)
class Return:
    buffer: bytes


@dataclass(frozen=True)
class Drop:
    pass


Action = Resubmit | Return | Drop


@dataclass
class ChainBudget:
    hop_limit: int = 16
    hops_used: int = 0

    def charge(self) -> None:
        if self.hops_used >= self.hop_limit:
            raise ChainBoundError(f"resubmission {self.hops_used + 1} exceeds hop limit "
                                  f"{self.hop_limit}")
        self.hops_used += 1


def execute(program: Program, block: bytes, budget: ChainBudget | None = None,
            regs: list[int] | None = None) -> tuple[Action, int]:
    """Run one invocation over ``block``; returns the action and instructions executed.

    Assumes ``program`` passed the verifier: control only moves forward, so the
    instruction count never exceeds the program length.
    """
    # Opcode constants as locals keep the dispatch chain cheap.
    LOADB, LOADW, LOADQ, MOVI, MOV = _LOADB, _LOADW, _LOADQ, _MOVI, _MOV
    JEQ, JNE, JLT, JGE = _JEQ, _JNE, _JLT, _JGE
    code = program.code
    r = [0] * NREGS if regs is None else [v & MASK64 for v in regs]
    out = bytearray()
    blen = len(block)
    pc = 0
    count = 0
    while True:
        op, d, s, imm = code[pc]
        count += 1
        pc += 1
        if op == LOADQ or op == LOADW or op == LOADB:
            width = 8 if op == LOADQ else 4 if op == LOADW else 1
            addr = imm if s == NO_REG else r[s] + imm
            if addr < 0 or addr + width > blen:
                raise SFuncFault(f"load of {width} B at {addr} outside {blen} B block "
                                 f"(insn {pc - 1})")
            r[d] = int.from_bytes(block[addr:addr + width], "little")
        elif op == JLT:
            if r[d] < r[s]:
                pc += imm
        elif op == JGE:
            if r[d] >= r[s]:
                pc += imm
        elif op == JEQ:
            if r[d] == r[s]:
                pc += imm
        elif op == JNE:
            if r[d] != r[s]:
                pc += imm
        elif op == MOVI:
            r[d] = imm
        elif op == MOV:
            r[d] = r[s]
        elif op == _ADD:
            r[d] = (r[d] + (imm if s == NO_REG else r[s])) & MASK64
        elif op == _SUB:
            r[d] = (r[d] - (imm if s == NO_REG else r[s])) & MASK64
        elif op == _MUL:
            r[d] = (r[d] * (imm if s == NO_REG else r[s])) & MASK64
        elif op == _AND:
            r[d] &= imm if s == NO_REG else r[s]
        elif op == _OR:
            r[d] |= imm if s == NO_REG else r[s]
        elif op == _SHL:
            r[d] = (r[d] << ((imm if s == NO_REG else r[s]) & 63)) & MASK64
        elif op == _SHR:
            r[d] >>= (imm if s == NO_REG else r[s]) & 63
        elif op == _EMIT:
            out += r[d].to_bytes(8, "little")[:imm]
        elif op == _RETURN:
            return Return(bytes(out)), count
        elif op == _RESUBMIT:
            off = r[d]
            if off % BLOCK_ALIGN:
                raise SFuncFault(f"resubmit offset {off} is not 512-aligned")
            if budget is not None:
                budget.charge()
            return Resubmit(off), count
        elif op == _DROP:
            return Drop(), count
        else:
            raise SFuncFault(f"bad opcode {op} at {pc - 1}")
