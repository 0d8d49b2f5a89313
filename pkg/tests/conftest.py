import numpy as np
import pytest

from madnet.tensor import Tensor

SEEDS = [0, 1, 2, 3, 4]


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def natural_images():
    """Three 256x256 grayscale-or-colour test images in [0, 1]."""
    skd = pytest.importorskip("skimage.data")
    return {
        "camera": skd.camera()[:256, :256, None] / 255.0,
        "astronaut": skd.astronaut()[:256, 128:384] / 255.0,
        "coffee": skd.coffee()[:256, 200:456] / 255.0,
    }


def naive_conv(x, w, b, stride, pad, groups):
    n, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    per = cout // groups
    for bi in range(n):
        for o in range(cout):
            g = o // per
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for c in range(cin_g):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[bi, g * cin_g + c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[bi, o, i, j] = acc + (0.0 if b is None else b[o])
    return out


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion at the end of the run
# ---------------------------------------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and not report.passed):
        # parametrised criteria pass only if every case passes
        _, seen, spent = _criteria.get(number, (title, "passed", 0.0))
        outcome = report.outcome if seen == "passed" else seen
        _criteria[number] = (title, outcome, spent + report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, outcome, duration = _criteria[number]
        verdict = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"criterion {number:>2}  {verdict}  {title}  ({duration:.1f}s)")
