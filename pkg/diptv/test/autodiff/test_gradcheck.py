import numpy as np
import pytest
from numpy.testing import assert_array_almost_equal

from diptv.autodiff import Tensor
from diptv.autodiff import functional as F
from diptv.autodiff.gradcheck import (
    _primitive_cases,
    check_gradients,
    finite_diff_grad,
    noise_floor,
    rel_error,
    run_suite,
)


def test_finite_diff_grad():
    g = finite_diff_grad(F.sq_l2, np.array([1.0, 2.0]))
    assert_array_almost_equal(g.data, [2.0, 4.0], decimal=6)
    g = finite_diff_grad(lambda x: F.sum(F.sigmoid(x)), np.zeros(1))
    assert_array_almost_equal(g.data, [0.25], decimal=8)


def test_rel_error():
    assert rel_error(np.zeros(3), np.zeros(3)) == 0.0
    assert rel_error([1.0, 0.0], [1.0, 0.0]) == 0.0
    assert rel_error([1.0, 0.0], [0.0, 1.0]) == pytest.approx(np.sqrt(2))


def test_primitives_pass():
    for name, f, inputs in _primitive_cases(np.random.default_rng(0)):
        for r in check_gradients(f, inputs, tol=1e-5):
            assert r.passed, f"{name}: {r}"


def test_detects_wrong_gradient():
    from diptv.autodiff.tensor import Function

    class WrongSquare(Function):
        @staticmethod
        def forward(ctx, x):
            ctx.save_for_backward(x)
            return np.asarray((x * x).sum())

        @staticmethod
        def backward(ctx, grad_output):
            x, = ctx.saved_tensors
            return 2.1 * x * grad_output

    r, = check_gradients(WrongSquare.apply, [np.random.default_rng(1).standard_normal(5)])
    assert not r.passed
    assert r.rel_error > 1e-2
    assert r.worst_ratio > 1


def test_kink_coordinates_excluded():
    # x[0] sits on the kink of |x|; the other coordinates are smooth
    x = np.array([0.0, 1.0, -2.0, 0.5, 3.0, -1.5] * 4)
    r, = check_gradients(lambda x: F.sum(F.charbonnier_abs(x, 0.0)), [x])
    assert r.excluded == 4
    assert r.num_coords == 24
    assert not r.passed


def test_run_suite_small():
    passed, results = run_suite(size=8, depth=1, seed=0)
    assert passed
    assert any(r.name.startswith("level0.") for r in results)


@pytest.mark.slow
def test_run_suite():
    passed, results = run_suite(size=16, depth=2, seed=0)
    assert passed, [r for r in results if not r.passed]


def test_noise_floor():
    assert noise_floor(0.0, 1e-6) == 0.0
    assert noise_floor(-27.0, 1e-6) == pytest.approx(4 * np.finfo(np.float64).eps * 27e6)
    assert noise_floor(27.0, 1e-4) < noise_floor(27.0, 1e-6)


def test_zero_gradient_below_noise_floor():
    # a per-channel shift in front of a batch norm has an exactly zero gradient
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((1, 3, 6, 6)))
    gamma, beta = rng.standard_normal(3), rng.standard_normal(3)

    def f(shift):
        return F.sq_l2(F.sigmoid(F.batch_norm(F.add(x, shift), gamma, beta))) * 40.0

    r, = check_gradients(f, [rng.standard_normal(3)])
    assert r.passed, r
    assert r.excluded == 0


def test_tiny_gradients_pass_on_absolute_floor():
    # gradient of order 1e-9 against a loss of order 30
    def f(x):
        return F.sum(x * x) * 1e-9 + 30.0

    r, = check_gradients(f, [np.full(4, 0.5)])
    assert r.passed, r
