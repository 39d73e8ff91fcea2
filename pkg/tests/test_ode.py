import math

import numpy as np
import pytest

from gnstode import autodiff as ad
from gnstode.autodiff import NonFiniteError, Tape, Tensor
from gnstode.ode import OdeConfig, integrate

from conftest import central_difference

STEPS = [2, 4, 8, 16, 32]


def solver_errors(method):
    return [abs(float(integrate(lambda y, t: y, np.ones((1, 1)), 0.0, 1.0, OdeConfig(method, s)).data[0, 0]) - math.e)
            for s in STEPS]


def observed_orders(method):
    """log2 error ratios between successive step doublings; the last is the finest pair."""
    errs = solver_errors(method)
    return [math.log2(a / b) for a, b in zip(errs[:-1], errs[1:])]


@pytest.mark.parametrize("method,minimum", [("rk4", 3.7), ("euler", 0.9)])
def test_convergence_order(method, minimum):
    orders = observed_orders(method)
    assert orders[-1] >= minimum
    # still approaching the asymptotic order from below
    assert orders == sorted(orders)


@pytest.mark.parametrize("method", ["euler", "rk4"])
def test_zero_field_is_identity(method):
    y0 = np.random.default_rng(0).normal(size=(3, 2))
    out = integrate(lambda y, t: y * 0.0, y0, 0.0, 1.0, OdeConfig(method, 5))
    assert np.array_equal(out.data, y0)


@pytest.mark.parametrize("method", ["euler", "rk4"])
def test_constant_field_exact(method):
    c = np.array([[1.5, -2.0]])
    out = integrate(lambda y, t: Tensor(c), np.zeros((1, 2)), 0.0, 2.0, OdeConfig(method, 3))
    assert np.allclose(out.data, 2.0 * c, rtol=0, atol=1e-15)


def test_rk4_exact_for_cubic_in_time():
    # dy/dt = 3 t^2 integrates to t^3; RK4 (Simpson) is exact for it
    out = integrate(lambda y, t: Tensor(np.full((1, 1), 3 * t * t)), np.zeros((1, 1)), 0.0, 1.0, OdeConfig("rk4", 1))
    assert out.data[0, 0] == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("method", ["euler", "rk4"])
def test_linear_in_initial_condition_for_linear_field(method):
    rng = np.random.default_rng(3)
    A = rng.normal(size=(2, 2))
    f = lambda y, t: ad.matmul(y, Tensor(A))  # noqa: E731
    cfg = OdeConfig(method, 4)
    a, b = rng.normal(size=(1, 2)), rng.normal(size=(1, 2))
    lhs = integrate(f, 2.0 * a + b, 0.0, 1.0, cfg).data
    rhs = 2.0 * integrate(f, a, 0.0, 1.0, cfg).data + integrate(f, b, 0.0, 1.0, cfg).data
    assert np.allclose(lhs, rhs, rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("method", ["euler", "rk4"])
def test_gradient_through_solver_matches_finite_differences(method):
    rng = np.random.default_rng(4)
    W0 = rng.normal(scale=0.5, size=(3, 3))
    y0 = rng.normal(size=(2, 3))
    cfg = OdeConfig(method, 3)

    def solve(W, y):
        f = lambda y, t: ad.tanh(ad.matmul(y, W)) * (1.0 + t)  # noqa: E731
        return ad.sum_(integrate(f, y, 0.0, 1.0, cfg) * integrate(f, y, 0.0, 1.0, cfg))

    W, Y = Tensor(W0, requires_grad=True), Tensor(y0, requires_grad=True)
    with Tape() as tape:
        loss = solve(W, Y)
    g = ad.backward(tape, loss, [W, Y])
    fd_w = central_difference(lambda w: float(solve(Tensor(w), Tensor(y0)).data), W0)
    fd_y = central_difference(lambda y: float(solve(Tensor(W0), Tensor(y)).data), y0)
    assert np.max(np.abs(g[W].data - fd_w)) / np.max(np.abs(fd_w)) < 1e-4
    assert np.max(np.abs(g[Y].data - fd_y)) / np.max(np.abs(fd_y)) < 1e-4


def test_blow_up_reports_step():
    cfg = OdeConfig("euler", 10)
    with pytest.raises(NonFiniteError, match="step 1/10"):
        integrate(lambda y, t: Tensor(np.full((1, 1), np.inf)), np.zeros((1, 1)), 0.0, 1.0, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        OdeConfig("midpoint", 2)
    with pytest.raises(ValueError):
        OdeConfig("rk4", 0)
    with pytest.raises(ValueError):
        integrate(lambda y, t: y, np.zeros((1, 1)), 1.0, 1.0, OdeConfig())
