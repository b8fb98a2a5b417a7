import numpy as np
import pytest

from adasr.tensor import Tensor, mul, sum_all

ACCEPTANCE_RESULTS = []


def fd_gradients(fn, arrays, proj, step=1e-5):
    """Central-difference gradient of ``sum(fn(*arrays) * proj)`` w.r.t. every array."""
    def f(arrs):
        out = fn(*[Tensor(a) for a in arrs])
        return float(np.sum(out.data * proj))

    grads = []
    for i, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = g.reshape(-1)
        for k in range(a.size):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[i].reshape(-1)[k] += step
            minus[i].reshape(-1)[k] -= step
            flat[k] = (f(plus) - f(minus)) / (2 * step)
        grads.append(g)
    return grads


def autodiff_gradients(fn, arrays, proj):
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*ts)
    sum_all(mul(out, Tensor(proj))).backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]


def rel_error(a, b):
    a = np.concatenate([np.ravel(x) for x in a])
    b = np.concatenate([np.ravel(x) for x in b])
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-30)
    return float(np.linalg.norm(a - b) / denom)


def gradient_check(fn, arrays, rng, step=1e-5):
    out_shape = fn(*[Tensor(a) for a in arrays]).shape
    proj = rng.uniform(-1, 1, size=out_shape)
    return rel_error(autodiff_gradients(fn, arrays, proj), fd_gradients(fn, arrays, proj, step))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def record_criterion(number, name, passed, detail):
    ACCEPTANCE_RESULTS.append((number, name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number}: {name} -- {detail}")
