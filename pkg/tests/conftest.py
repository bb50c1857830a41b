"""Shared fixtures; collects acceptance outcomes for the terminal summary."""

import pytest

CRITERIA = {
    1: "analytic exactness",
    2: "volume-ordering verification",
    3: "conservation at full scale",
    4: "mode equivalence under slack constraints",
    5: "bias replication (desk scale)",
    6: "full-scale replication",
    7: "statistics correctness",
    8: "determinism",
}

_results: dict[int, tuple[bool, str]] = {}


class Criterion:
    def __init__(self, number: int) -> None:
        self.number = number
        self.checks: list[tuple[bool, str]] = []

    def check(self, ok: bool, detail: str) -> bool:
        self.checks.append((bool(ok), detail))
        return bool(ok)

    def finish(self) -> None:
        ok = all(c for c, _ in self.checks) and bool(self.checks)
        _results[self.number] = (ok, "; ".join(d for _, d in self.checks))
        failed = [d for c, d in self.checks if not c]
        assert ok, f"criterion {self.number} failed: " + "; ".join(failed)


@pytest.fixture
def criterion(request):
    """``criterion(n)`` returns a recorder; call ``.finish()`` to assert."""
    made = []

    def make(number: int) -> Criterion:
        c = Criterion(number)
        made.append(c)
        return c

    yield make
    for c in made:
        if c.number not in _results:  # test raised before finish()
            _results[c.number] = (False, "; ".join(d for _, d in c.checks) + " [aborted]")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        if n in _results:
            ok, detail = _results[n]
            terminalreporter.write_line(f"criterion {n} ({name}): {'PASS' if ok else 'FAIL'} -- {detail}")
        else:
            terminalreporter.write_line(f"criterion {n} ({name}): NOT RUN")
