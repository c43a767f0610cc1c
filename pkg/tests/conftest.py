import numpy as np
import pytest

from oatdiff.geometry import ScanConfig, build_geometry


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_geom():
    """32x32 grid, 8 detectors, paper timing constants."""
    return build_geometry(ScanConfig(n_detectors=8, image_size=32))


@pytest.fixture(scope="session")
def geom36_32():
    return build_geometry(ScanConfig(image_size=32))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion."""

    def _report(tag: str, ok: bool, detail: str):
        line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
