import pathlib

import pytest

DATA_DIR = pathlib.Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> pathlib.Path:
    return DATA_DIR


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance group, after the regular summary."""
    try:
        import test_acceptance
    except Exception:  # noqa: BLE001 - reporting must never break the run
        return
    results = sorted(getattr(test_acceptance, "RESULTS", []))
    if not results:
        return
    terminalreporter.write_sep("-", "acceptance summary")
    for index, name, status, detail in results:
        suffix = f" -- {detail}" if detail else ""
        terminalreporter.write_line(f"[{status}] {index}. {name}{suffix}")
