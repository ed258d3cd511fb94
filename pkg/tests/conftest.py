import numpy as np
import pytest

from coevognn import autodiff as ad
from coevognn.synthetic import SyntheticSpec, generate_synthetic


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar f() with respect to array x (perturbed in place)."""
    out = np.zeros_like(x)
    flat, gflat = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f()
        flat[i] = keep - h
        down = f()
        flat[i] = keep
        gflat[i] = (up - down) / (2 * h)
    return out


def check_grad(build, arrays, h=1e-5, floor=1e-6):
    """Max elementwise relative error between tape and finite-difference gradients.

    ``build(*tensors)`` returns a scalar Tensor.
    """
    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    with ad.Tape() as tape:
        loss = build(*tensors)
    analytic = tape.backward(loss, tensors)
    worst = 0.0
    for t, g in zip(tensors, analytic):
        num = numeric_grad(lambda: float(build(*tensors).data), t.data, h)
        denom = np.maximum(np.maximum(np.abs(g), np.abs(num)), floor)
        worst = max(worst, float(np.max(np.abs(g - num) / denom)))
    return worst


@pytest.fixture(scope="session")
def small_seq():
    return generate_synthetic(SyntheticSpec(n=20, T=5, r=6, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance verdicts ------------------------------------------------------

VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """``verdict(n, ok, detail)`` records a PASS/FAIL line for criterion n and returns ok."""
    def emit(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config.stash[VERDICTS].append(line)
        return ok
    return emit
