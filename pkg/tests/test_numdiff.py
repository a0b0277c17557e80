import numpy as np
import pytest

from irsfd.numdiff import central_diff, grad_check


def test_central_diff_quadratic():
    grad = central_diff(lambda x: float(np.sum(x ** 2)), np.array([1.0, 2.0]), 1e-6)
    assert np.allclose(grad, [2.0, 4.0], atol=1e-6)


def test_central_diff_constant():
    grad = central_diff(lambda x: 3.5, np.array([0.3, -0.2, 1.0]), 1e-5)
    assert np.all(grad == 0)


def test_central_diff_sine():
    grad = central_diff(lambda x: float(np.sin(x[0])), np.array([0.0]), 1e-4)
    assert abs(grad[0] - 1.0) < 1e-8  # error is O(h^2)


def test_central_diff_rejects_bad_step():
    with pytest.raises(ValueError):
        central_diff(lambda x: 0.0, np.zeros(2), 0.0)


def test_central_diff_rejects_nonfinite():
    with pytest.raises(ValueError):
        central_diff(lambda x: float("nan"), np.zeros(1), 1e-6)


def test_central_diff_second_order_convergence():
    # halving h divides the truncation error by ~4 on a smooth function
    f = lambda x: float(np.exp(np.sin(2 * x[0])))
    x = np.array([0.4])
    exact = 2 * np.cos(0.8) * np.exp(np.sin(0.8))
    e1 = abs(central_diff(f, x, 1e-3)[0] - exact)
    e2 = abs(central_diff(f, x, 5e-4)[0] - exact)
    assert e1 / e2 == pytest.approx(4.0, rel=0.2)


def test_grad_check_pass():
    f = lambda x: float(np.sum(x ** 2))
    rep = grad_check(lambda x: 2 * x, f, np.array([1.0, -2.0, 0.5]), 1e-6, 1e-8)
    assert rep.passed
    assert rep.max_rel_err < 1e-8


def test_grad_check_detects_wrong_scale():
    f = lambda x: float(np.sum(x ** 2))
    rep = grad_check(lambda x: 4 * x, f, np.array([1.0, -2.0]), 1e-6, 1e-8)
    assert not rep.passed
    assert rep.max_rel_err > 0.3


def test_grad_check_reports_worst_coordinate():
    f = lambda x: float(x[0] ** 2 + x[1] ** 2)
    analytic = np.array([2.0, 10.0])  # second coordinate is wrong
    rep = grad_check(analytic, f, np.array([1.0, 1.0]), 1e-6, 1e-8)
    assert rep.worst_index == 1
