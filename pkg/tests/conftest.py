from __future__ import annotations

import functools

import pytest

from fracstefan.discretization import Mesh1D, build_space


@functools.lru_cache(maxsize=None)
def cached_space(n: int, s: float, a: float = 0.0, b: float = 1.0):
    return build_space(Mesh1D(a, b, n), s)


@pytest.fixture(scope="session")
def space_of():
    return cached_space


ACCEPTANCE_LINES: list = []


def report(criterion: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
