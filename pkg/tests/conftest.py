import numpy as np
import pytest

from stagepoly.features import Example

ACCEPTANCE_LINES: list = []


def record_acceptance(number: int, name: str, ok: bool, detail: str = ""):
    ACCEPTANCE_LINES.append((number, name, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(ACCEPTANCE_LINES):
        tag = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{tag} criterion {number}: {name}  {detail}".rstrip())


def random_examples(n, d, density=0.5, seed=0, task="regression"):
    """Dense-value random examples over ids 0..d-1 with random supports."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        on = np.flatnonzero(rng.random(d) < density)
        if len(on) == 0:
            on = np.array([rng.integers(d)])
        vals = rng.uniform(-1, 1, size=len(on))
        label = float(rng.normal()) if task == "regression" else float(rng.random() < 0.5)
        out.append(Example(ids=on.tolist(), values=vals.tolist(), label=label))
    return out


@pytest.fixture
def small_stream():
    return random_examples(60, 5, seed=3)
