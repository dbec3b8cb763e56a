import numpy as np
import pytest

from fedsec.nn import ParamVector


def central_difference(f, params: ParamVector, step: float = 1e-5) -> np.ndarray:
    """Numerical gradient of scalar ``f(params)``, one coordinate at a time."""
    out = np.empty_like(params.values)
    for k in range(params.values.size):
        plus = params.values.copy()
        minus = params.values.copy()
        plus[k] += step
        minus[k] -= step
        out[k] = (f(params.with_values(plus)) - f(params.with_values(minus))) / (2 * step)
    return out


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray, rel: float = 1e-4,
                      floor: float = 1e-7):
    err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    bad = (err > rel * scale) & (err > floor)
    assert not bad.any(), (
        f"{bad.sum()} components disagree; worst abs err {err.max():.3e} "
        f"at index {int(np.argmax(err))}"
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
