import numpy as np
import pytest

from autogp import autodiff as ad


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run a test once with the jitted Gram kernels and once with the numpy fallback."""
    monkeypatch.setenv("AUTOGP_NUMBA", "1" if request.param == "numba" else "0")
    return request.param


def central_fd(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor: float = 1e-6) -> float:
    """Norm-wise relative error; ``floor`` keeps round-off on exactly-zero gradients from counting."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    den = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / den)


def check_grad(build, params, h=1e-5):
    """Max relative error between autodiff and central differences over ``params``."""
    root = build()
    grads = ad.backward(root)
    worst = 0.0
    for p in params:
        fd = central_fd(lambda: build().item(), p.data, h)
        worst = max(worst, rel_err(grads.get(p, np.zeros_like(p.data)), fd))
    return worst


_ACCEPTANCE: list[str] = []


@pytest.fixture
def report(request):
    """Print and record one PASS/FAIL line for an acceptance criterion."""
    def emit(number: int, title: str, ok: bool, detail: str = ""):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        _ACCEPTANCE.append(line)
        capman = request.config.pluginmanager.getplugin("capturemanager")
        with capman.global_and_fixture_disabled():
            print("\n" + line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
