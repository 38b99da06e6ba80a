import numpy as np
import pytest

from splatshard.splat import Camera, SplatSet


def make_scene(n, seed=0, deg=1, extent=1.0, scale=(0.02, 0.08), opacity_shift=0.0):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    return SplatSet(
        np.arange(n, dtype=np.int64),
        rng.uniform(-extent, extent, (n, 3)),
        np.log(rng.uniform(scale[0], scale[1], (n, 3))),
        q,
        rng.normal(size=n) + opacity_shift,
        rng.normal(0, 0.5, (n, (deg + 1) ** 2, 3)),
    )


def look(eye, size=32, fx=None, target=(0, 0, 0)):
    return Camera.look_at(eye, target, [0, 1, 0], size, size, fx or 0.9 * size)


@pytest.fixture
def scene():
    return make_scene(300, seed=1)


@pytest.fixture
def camera():
    return look([0.4, 0.6, 3.2])


# --- acceptance summary ---------------------------------------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = getattr(item, "criterion_detail", "")
        _CRITERIA[num] = (title, rep.outcome, detail)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        title, outcome, detail = _CRITERIA[num]
        status = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        tr.write_line(f"[{status}] criterion {num}: {title}" + (f" ({detail})" if detail else ""))
