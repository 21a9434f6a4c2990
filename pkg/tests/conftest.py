import pytest

from madvex.dataset import synth_corpus


def wat(text):
    wasmtime = pytest.importorskip("wasmtime")
    return wasmtime.wat2wasm(text)


@pytest.fixture(scope="session")
def small_corpus():
    """A few small modules of each class; quick to generate."""
    return (synth_corpus(11, 6, (3000, 9000), "malicious")
            + synth_corpus(11, 6, (3000, 9000), "benign"))


@pytest.fixture(scope="session")
def programs():
    from programs import PROGRAMS
    return {name: wat(text) for name, text in PROGRAMS.items()}


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def record_criterion(name, ok, detail):
    line = f"criterion {name}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
