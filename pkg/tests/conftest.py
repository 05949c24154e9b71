import numpy as np
import pytest

from odpr.dataset import Dataset


def chain_dataset(lengths, seed=0, state_dim=2, action_dim=1):
    """Random trajectories with consistent state chaining."""
    rng = np.random.default_rng(seed)
    states, actions, rewards, nexts, terms, bounds = [], [], [], [], [], []
    start = 0
    for length in lengths:
        s = rng.normal(size=(length + 1, state_dim))
        states.append(s[:-1])
        nexts.append(s[1:])
        actions.append(rng.normal(size=(length, action_dim)))
        rewards.append(rng.normal(size=length))
        t = np.zeros(length, dtype=bool)
        t[-1] = True
        terms.append(t)
        bounds.append((start, length))
        start += length
    return Dataset(np.concatenate(states), np.concatenate(actions), np.concatenate(rewards),
                   np.concatenate(nexts), np.concatenate(terms), np.array(bounds))


@pytest.fixture
def small_dataset():
    return chain_dataset([3, 1, 4], seed=1)


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
