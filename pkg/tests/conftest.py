import numpy as np
import pytest

from hmlmask.hierarchy import Hierarchy, Node, bundled, parse_hierarchy


def random_tree(rng: np.random.Generator, n: int, name: str = "R") -> Hierarchy:
    """Random tree with ``n`` nodes: node k attaches to a uniformly chosen earlier node."""
    parents = [None] + [int(rng.integers(0, k)) for k in range(1, n)]
    paths = [name]
    for k in range(1, n):
        paths.append(f"{paths[parents[k]]} > n{k}")
    return parse_hierarchy("\n".join(paths))


def chain(n: int) -> Hierarchy:
    names = ["root", "a", "b", "c", "d", "e"][:n]
    return parse_hierarchy(" > ".join(names))


@pytest.fixture
def animal() -> Hierarchy:
    return parse_hierarchy("Animal > Dog\nAnimal > Cat\n")


@pytest.fixture
def chain3() -> Hierarchy:
    return chain(3)


@pytest.fixture(scope="session")
def substrate() -> Hierarchy:
    return bundled("substrate")


@pytest.fixture(scope="session")
def relief() -> Hierarchy:
    return bundled("relief")


@pytest.fixture(scope="session")
def bedforms() -> Hierarchy:
    return bundled("bedforms")


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
