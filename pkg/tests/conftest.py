import pytest

from regft import policy, synthenv


@pytest.fixture
def small_arch():
    # full vocabulary, tiny everything else: 259 parameters
    return policy.Architecture(window=3, embed_dim=2, hidden_dim=4)


@pytest.fixture
def small_params(small_arch):
    return policy.init_params(small_arch, seed=3, scale=0.5)


@pytest.fixture
def chain_problems():
    return synthenv.generate_corpus(12, {1: 1.0, 3: 1.0, 8: 1.0}, seed=5, modulus=7)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
