import numpy as np
import pytest

from tibs.bounds import ErrorSpec

_acceptance: dict[int, tuple[str, str]] = {}


def random_valid_specs(count: int, seed: int = 12345) -> list[ErrorSpec]:
    """Specs with log-uniform alpha and beta, kept only when valid."""
    rng = np.random.default_rng(seed)
    specs = []
    while len(specs) < count:
        beta = 10 ** rng.uniform(-2, 0.7)
        alpha = 10 ** rng.uniform(-7, -0.5)
        delta = 10 ** rng.uniform(-6, -0.05)
        try:
            specs.append(ErrorSpec(float(alpha), float(beta), float(delta)))
        except ValueError:
            continue
    return specs


@pytest.fixture(scope="session")
def valid_specs():
    return random_valid_specs(1200)


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    marker = dict(report.user_properties).get("acceptance")
    if marker is None:
        return
    number, title = marker
    _acceptance[number] = (title, "PASS" if report.passed else "FAIL")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark is not None:
            doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
            item.user_properties.append(("acceptance", (mark.args[0], doc)))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, verdict = _acceptance[number]
        terminalreporter.write_line(f"[{verdict}] criterion {number}: {title}")
