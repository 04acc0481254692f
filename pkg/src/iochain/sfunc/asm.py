"""Text assembler and disassembler for storage functions.

One instruction per line, ``OPCODE dst, src, imm``; operands a form does not
use are omitted. ``;`` starts a comment. Jump offsets are relative to the next
instruction and may be given as a label name; the disassembler always prints
numeric offsets. Directives ``.name``, ``.version``, ``.ret`` and ``.block``
set program metadata.

    LOADQ r1, 16        ; r1 = u64 at block[16]
    LOADQ r1, r2, 16    ; r1 = u64 at block[r2 + 16], trapped at runtime
    ADD r1, r2 / ADD r1, 8
    JLT r1, r2, found   ; or +5
    EMIT r0, 8
"""

from __future__ import annotations

import re

from .isa import ALU, JUMPS, LOADS, Instruction, Op, Program


class AsmError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


_REG = re.compile(r"^r([0-9]+)$", re.IGNORECASE)
_LABEL = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")


def _reg(tok: str, lineno: int) -> int:
    m = _REG.match(tok)
    if not m:
        raise AsmError(lineno, f"expected register, got {tok!r}")
    n = int(m.group(1))
    if n >= 0xFF:
        raise AsmError(lineno, f"register number {n} does not encode")
    return n


def _int(tok: str, lineno: int) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise AsmError(lineno, f"expected integer, got {tok!r}") from None


def _is_reg(tok: str) -> bool:
    return bool(_REG.match(tok))


def assemble(text: str) -> Program:
    meta: dict = {}
    pending: list[tuple[int, str, list[str]]] = []
    labels: dict[str, int] = {}

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        while ":" in line:
            label, rest = line.split(":", 1)
            label = label.strip()
            if not _LABEL.match(label):
                raise AsmError(lineno, f"bad label {label!r}")
            if label in labels:
                raise AsmError(lineno, f"duplicate label {label!r}")
            labels[label] = len(pending)
            line = rest.strip()
        if not line:
            continue
        if line.startswith("."):
            parts = line.split(None, 1)
            key = parts[0][1:]
            val = parts[1].strip() if len(parts) > 1 else ""
            if key == "name":
                meta["name"] = val
            elif key in ("version", "ret", "block"):
                field = {"ret": "max_return", "block": "block_size"}.get(key, key)
                meta[field] = _int(val, lineno)
            else:
                raise AsmError(lineno, f"unknown directive .{key}")
            continue
        parts = line.split(None, 1)
        mnemonic = parts[0].upper()
        ops = [t.strip() for t in parts[1].split(",")] if len(parts) > 1 else []
        if any(not t for t in ops):
            raise AsmError(lineno, "empty operand")
        pending.append((lineno, mnemonic, ops))

    insns = []
    for pc, (lineno, mnemonic, ops) in enumerate(pending):
        try:
            op = Op[mnemonic]
        except KeyError:
            raise AsmError(lineno, f"unknown opcode {mnemonic}") from None
        insns.append(_parse_operands(op, ops, lineno, pc, labels))
    return Program(tuple(insns), **meta)


def _arity(ops, n, lineno, op):
    if len(ops) not in n:
        raise AsmError(lineno, f"{op.name} takes {' or '.join(map(str, n))} operands")


def _parse_operands(op: Op, ops: list[str], lineno: int, pc: int, labels) -> Instruction:
    if op in LOADS:
        _arity(ops, (2, 3), lineno, op)
        if len(ops) == 2:
            return Instruction(op, _reg(ops[0], lineno), None, _int(ops[1], lineno))
        return Instruction(op, _reg(ops[0], lineno), _reg(ops[1], lineno), _int(ops[2], lineno))
    if op is Op.MOVI:
        _arity(ops, (2,), lineno, op)
        return Instruction(op, _reg(ops[0], lineno), None, _int(ops[1], lineno))
    if op is Op.MOV:
        _arity(ops, (2,), lineno, op)
        return Instruction(op, _reg(ops[0], lineno), _reg(ops[1], lineno))
    if op in ALU:
        _arity(ops, (2,), lineno, op)
        if _is_reg(ops[1]):
            return Instruction(op, _reg(ops[0], lineno), _reg(ops[1], lineno))
        return Instruction(op, _reg(ops[0], lineno), None, _int(ops[1], lineno))
    if op in JUMPS:
        _arity(ops, (3,), lineno, op)
        target = ops[2]
        if _LABEL.match(target) and not _is_reg(target):
            if target not in labels:
                raise AsmError(lineno, f"undefined label {target!r}")
            off = labels[target] - (pc + 1)
        else:
            off = _int(target, lineno)
        return Instruction(op, _reg(ops[0], lineno), _reg(ops[1], lineno), off)
    if op is Op.EMIT:
        _arity(ops, (2,), lineno, op)
        return Instruction(op, _reg(ops[0], lineno), None, _int(ops[1], lineno))
    if op is Op.RESUBMIT:
        _arity(ops, (1,), lineno, op)
        return Instruction(op, _reg(ops[0], lineno))
    _arity(ops, (0,), lineno, op)
    return Instruction(op)


def format_insn(insn: Instruction) -> str:
    op = insn.op
    name = op.name
    if op in LOADS:
        if insn.src is None:
            return f"{name} r{insn.dst}, {insn.imm}"
        return f"{name} r{insn.dst}, r{insn.src}, {insn.imm}"
    if op is Op.MOVI:
        return f"{name} r{insn.dst}, {insn.imm:#x}"
    if op is Op.MOV:
        return f"{name} r{insn.dst}, r{insn.src}"
    if op in ALU:
        if insn.src is None:
            return f"{name} r{insn.dst}, {insn.imm:#x}"
        return f"{name} r{insn.dst}, r{insn.src}"
    if op in JUMPS:
        return f"{name} r{insn.dst}, r{insn.src}, {insn.imm:+d}"
    if op is Op.EMIT:
        return f"{name} r{insn.dst}, {insn.imm}"
    if op is Op.RESUBMIT:
        return f"{name} r{insn.dst}"
    return name


def disassemble(program: Program, annotate: bool = False) -> str:
    lines = []
    if program.name:
        lines.append(f".name {program.name}")
    lines.append(f".version {program.version}")
    lines.append(f".ret {program.max_return}")
    lines.append(f".block {program.block_size}")
    for pc, insn in enumerate(program.insns):
        text = format_insn(insn)
        if annotate:
            text = f"{text:<28}; {pc}"
        lines.append(text)
    return "\n".join(lines) + "\n"
