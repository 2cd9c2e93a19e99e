from pathlib import Path

import numpy as np
import pytest

from scopegraph.conllu import parse_conllu

FIXTURES = Path(__file__).parent / "fixtures"
STUDENT = FIXTURES / "student.conllu"


@pytest.fixture
def student_tree():
    return parse_conllu(STUDENT.read_text())[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def ancestors_oracle(heads, j):
    """Chain of heads above token j (1-based heads list, 0 = root)."""
    out = []
    while heads[j - 1]:
        j = heads[j - 1]
        out.append(j)
    return out


def path_set_oracle(heads, t):
    """Target, its head, and every token whose head chain passes through t."""
    n = len(heads)
    members = {t} | {j for j in range(1, n + 1) if t in ancestors_oracle(heads, j)}
    if heads[t - 1]:
        members.add(heads[t - 1])
    return members


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
