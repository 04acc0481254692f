"""
What the verifier refuses
=========================

Storage functions run in the completion path, so they must terminate and stay
inside the block they were handed. Loops and wild loads are rejected before
anything runs.
"""

from iochain.sfunc import assemble, execute, verify_all

programs = {
    "follow a pointer": """
        LOADQ r1, 8        ; child offset stored at byte 8
        JEQ r1, r0, done
        RESUBMIT r1
    done:
        RETURN
    """,
    "spin": "top: ADD r1, 1\nJEQ r1, r1, top\nRETURN",
    "read past the block": "LOADQ r1, 510\nRETURN",
    "fall off the end": "MOVI r1, 3",
    "return too much": ".ret 4\nEMIT r1, 8\nRETURN",
}

for name, src in programs.items():
    errors = verify_all(assemble(src))
    print(f"{name:20s}", "ok" if not errors else ", ".join(e.reason for e in errors))

block = bytearray(512)
block[8:16] = (1024).to_bytes(8, "little")
print(execute(assemble(programs["follow a pointer"]), bytes(block)))
