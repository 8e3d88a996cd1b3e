import functools

import pytest

from mhdfem.assembly import Assembler
from mhdfem.mesh import build_box_mesh
from mhdfem.space import MixedSpaces

ACCEPTANCE_LINES: list = []


@functools.lru_cache(maxsize=None)
def spaces_for(n: int) -> MixedSpaces:
    return MixedSpaces(build_box_mesh(n))


@functools.lru_cache(maxsize=None)
def assembler_for(n: int) -> Assembler:
    return Assembler(spaces_for(n))


@pytest.fixture(scope="session")
def spaces2():
    return spaces_for(2)


@pytest.fixture(scope="session")
def asm2():
    return assembler_for(2)


@pytest.fixture(scope="session")
def asm1():
    return assembler_for(1)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@functools.lru_cache(maxsize=None)
def cavity_run(n: int, variant: str):
    """Cached cavity Picard solve (Re = S = 100, Rm = 1, gamma = 1.5); returns (state, report)."""
    from mhdfem.app.problems import cavity
    from mhdfem.solver import NonlinearDivergenceError, picard_solve
    prob = cavity(n)
    try:
        return picard_solve(prob, prob.params, variant=variant, spaces=spaces_for(n), assembler=assembler_for(n))
    except NonlinearDivergenceError as exc:
        return None, exc.report
