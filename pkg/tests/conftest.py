import pytest

# (criterion id, description, passed, measured detail), filled by test_acceptance.py
ACCEPTANCE = []


@pytest.fixture
def criterion():
    def record(cid, text, passed, detail=""):
        ACCEPTANCE.append((cid, text, bool(passed), detail))
        print(f"[{'PASS' if passed else 'FAIL'}] {cid}: {text} ({detail})")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for cid, text, passed, detail in ACCEPTANCE:
        tr.write_line(f"{'PASS' if passed else 'FAIL'}  {cid:<4} {text}  [{detail}]")
