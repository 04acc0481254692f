import pytest
from hypothesis import settings

from iochain import iostack

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

# Suite-wide tally of the tagged-I/O audit, read by the acceptance test.
AUDIT = {"stacks": 0, "tagged": 0, "problems": []}

_live: list = []
_orig_init = iostack.Stack.__init__


def _tracking_init(self, *a, **kw):
    _orig_init(self, *a, **kw)
    _live.append(self)


iostack.Stack.__init__ = _tracking_init


def audit_live_stacks() -> list[str]:
    problems = []
    while _live:
        st = _live.pop()
        AUDIT["stacks"] += 1
        AUDIT["tagged"] += sum(1 for e in st.device.log if e.tag is not None)
        problems += st.audit_tagged()
    AUDIT["problems"] += problems
    return problems


@pytest.fixture(autouse=True)
def tagged_io_audit():
    """Every stack a test creates must pass the tagged-submission audit."""
    yield
    problems = audit_live_stacks()
    assert not problems, problems[:5]


# One line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE: dict[int, str] = {}


def pytest_collection_modifyitems(config, items):
    # The acceptance suite reads the audit tally of everything before it.
    items.sort(key=lambda it: it.fspath.basename == "test_acceptance.py")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
