import pytest

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    Usage: ``with acceptance(5, "smoke training") as note: ...; note("detail")``.
    """
    lines = request.config.stash[_ACCEPTANCE_KEY]

    class _Criterion:
        def __init__(self, number, title):
            self.number, self.title, self.details = number, title, []

        def __call__(self, detail):
            self.details.append(str(detail))

        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            status = "PASS" if exc_type is None else "FAIL"
            detail = "; ".join(self.details)
            if exc is not None and not detail:
                detail = f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
            line = f"criterion {self.number:>2} {status}  {self.title}" + (f"  [{detail}]" if detail else "")
            lines.append((self.number, line))
            print(line)
            return False

    return _Criterion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda item: item[0]):
            terminalreporter.write_line(line)
