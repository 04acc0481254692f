"""Static checks that make a storage function safe to run per completion.

Termination follows from forward-only control flow: every jump target is
strictly after the jump, so no instruction executes twice. Memory safety
comes from checking constant-offset loads against the block size, bounding
the bytes any path can emit, and trapping register-indexed loads at runtime.
"""

from __future__ import annotations

from dataclasses import dataclass

from .isa import (JUMPS, LOADS, MAX_INSNS, MAX_RETURN, NREGS, TERMINATORS, Op,
                  Program)

REASONS = (
    "empty-program",
    "too-long",
    "bad-limits",
    "bad-operand",
    "backward-jump",
    "jump-out-of-range",
    "out-of-bounds",
    "fall-through",
    "return-overflow",
)


@dataclass(frozen=True)
class VerifyError:
    reason: str
    index: int
    detail: str = ""

    def __str__(self) -> str:
        s = f"insn {self.index}: {self.reason}"
        return f"{s} ({self.detail})" if self.detail else s


class VerifierRejected(Exception):
    def __init__(self, error: VerifyError):
        super().__init__(str(error))
        self.error = error


def _operand_error(insn, pc) -> VerifyError | None:
    op = insn.op
    regs = [insn.dst]
    if insn.src is not None:
        regs.append(insn.src)
    for r in regs:
        if not 0 <= r < NREGS:
            return VerifyError("bad-operand", pc, f"register r{r}")
    if op in (Op.MOV,) or op in JUMPS:
        if insn.src is None:
            return VerifyError("bad-operand", pc, "missing source register")
    if op is Op.EMIT and not 1 <= insn.imm <= 8:
        return VerifyError("bad-operand", pc, f"emit width {insn.imm}")
    if op in (Op.MOVI, Op.EMIT, Op.RESUBMIT, Op.RETURN, Op.DROP) and insn.src is not None:
        return VerifyError("bad-operand", pc, "unexpected source register")
    if op in (Op.RETURN, Op.DROP) and (insn.dst or insn.imm):
        return VerifyError("bad-operand", pc, "terminator takes no operands")
    return None


def verify_all(program: Program) -> list[VerifyError]:
    """Every violation, in instruction order."""
    n = len(program.insns)
    errors: list[VerifyError] = []
    if n == 0:
        return [VerifyError("empty-program", 0)]
    if n > MAX_INSNS:
        errors.append(VerifyError("too-long", MAX_INSNS, f"{n} > {MAX_INSNS} instructions"))
    if not 0 <= program.max_return <= MAX_RETURN or program.block_size < 1:
        errors.append(VerifyError("bad-limits", 0,
                                  f"max_return={program.max_return} block={program.block_size}"))

    for pc, insn in enumerate(program.insns):
        err = _operand_error(insn, pc)
        if err:
            errors.append(err)
            continue
        op = insn.op
        if op in JUMPS:
            if insn.imm < 0:
                errors.append(VerifyError("backward-jump", pc, f"offset {insn.imm}"))
            elif pc + 1 + insn.imm >= n:
                errors.append(VerifyError("jump-out-of-range", pc,
                                          f"target {pc + 1 + insn.imm} >= {n}"))
        elif op in LOADS and insn.src is None:
            width = LOADS[op]
            if insn.imm < 0 or insn.imm + width > program.block_size:
                errors.append(VerifyError(
                    "out-of-bounds", pc,
                    f"{width} B at offset {insn.imm} outside [0, {program.block_size})"))

    last = program.insns[-1]
    if last.op not in TERMINATORS and not any(e.index == n - 1 for e in errors):
        errors.append(VerifyError("fall-through", n - 1, "last instruction is not a terminator"))

    if not errors:
        worst = _max_emitted(program)
        if worst > program.max_return:
            errors.append(VerifyError("return-overflow", 0,
                                      f"a path emits {worst} B > declared {program.max_return}"))
    return errors


def _max_emitted(program: Program) -> int:
    # Longest-path over the forward DAG, computed back to front.
    n = len(program.insns)
    best = [0] * (n + 1)
    for pc in range(n - 1, -1, -1):
        insn = program.insns[pc]
        if insn.op in TERMINATORS:
            best[pc] = 0
        elif insn.op in JUMPS:
            best[pc] = max(best[pc + 1], best[pc + 1 + insn.imm])
        elif insn.op is Op.EMIT:
            best[pc] = insn.imm + best[pc + 1]
        else:
            best[pc] = best[pc + 1]
    return best[0]


def verify(program: Program) -> VerifyError | None:
    """None if the program is safe to install, else its first violation."""
    errors = verify_all(program)
    return errors[0] if errors else None


def check(program: Program) -> Program:
    err = verify(program)
    if err is not None:
        raise VerifierRejected(err)
    return program
