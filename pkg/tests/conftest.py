import pytest

from elpaf.optics import PsfModel
from elpaf.scenes import make_scene

from helpers import sweep_streams


@pytest.fixture(scope="session")
def psf():
    return PsfModel.gaussian()


@pytest.fixture(scope="session")
def small_scene():
    return make_scene("checker", 96, seed=1)


@pytest.fixture(scope="session")
def small_sweep(small_scene, psf):
    return sweep_streams(small_scene, psf, start=-24.0)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_RESULTS
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"criterion {name}: {'PASS' if ok else 'FAIL'} - {detail}")
