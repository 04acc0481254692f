"""Storage functions: instruction set, assembler, verifier and runtime."""

from .asm import AsmError, assemble, disassemble
from .isa import MAX_INSNS, MAX_RETURN, Instruction, Op, Program
from .runtime import (Action, ChainBoundError, ChainBudget, Drop, Resubmit, Return,
                      SFuncError, SFuncFault, execute)
from .verifier import REASONS, VerifierRejected, VerifyError, check, verify, verify_all

__all__ = [
    "Action", "AsmError", "ChainBoundError", "ChainBudget", "Drop", "Instruction",
    "MAX_INSNS", "MAX_RETURN", "Op", "Program", "REASONS", "Resubmit", "Return",
    "SFuncError", "SFuncFault", "VerifierRejected", "VerifyError", "assemble", "check",
    "disassemble", "execute", "verify", "verify_all",
]
