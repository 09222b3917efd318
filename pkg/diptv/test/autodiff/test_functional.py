import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_almost_equal, assert_array_equal

from diptv.autodiff import Tape, Tensor, backward
from diptv.autodiff import functional as F

TORCH_PAD_MODES = {"zero": "constant", "reflect": "reflect", "replicate": "replicate"}


def _grads(f, *arrays):
    tracked = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = f(*tracked)
    grads = backward(tape, loss)
    return loss.item(), [grads[t].data for t in tracked]


def test_conv2d_ones():
    out = F.conv2d(Tensor(np.ones((1, 1, 4, 4))), np.ones((1, 1, 3, 3)), padding="zero")
    expected = np.array(
        [[4, 6, 6, 4], [6, 9, 9, 6], [6, 9, 9, 6], [4, 6, 6, 4]], dtype=np.float64
    )
    assert_array_equal(out.data[0, 0], expected)


def test_conv2d_identity_kernels():
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.standard_normal((1, 2, 5, 7))
        one = np.eye(2).reshape(2, 2, 1, 1)
        assert_array_equal(F.conv2d(Tensor(x), one, np.zeros(2)).data, x)
        delta = np.zeros((2, 2, 3, 3))
        delta[0, 0, 1, 1] = delta[1, 1, 1, 1] = 1.0
        assert_array_equal(F.conv2d(Tensor(x), delta, padding="zero").data, x)


def test_conv2d_stride_halves():
    out = F.conv2d(Tensor(np.ones((1, 1, 8, 6))), np.ones((3, 1, 3, 3)), stride=2)
    assert out.shape == (1, 3, 4, 3)


def test_conv2d_errors():
    x = Tensor(np.ones((1, 2, 4, 4)))
    with pytest.raises(ValueError):
        F.conv2d(x, np.ones((1, 3, 3, 3)))
    with pytest.raises(ValueError):
        F.conv2d(x, np.ones((1, 2, 2, 2)))
    with pytest.raises(ValueError):
        F.conv2d(x, np.ones((1, 2, 3, 3)), stride=3)
    with pytest.raises(ValueError):
        F.conv2d(x, np.ones((1, 2, 3, 3)), padding="circular")
    with pytest.raises(ValueError):
        F.conv2d(Tensor(np.ones((1, 1, 2, 2))), np.ones((1, 1, 3, 3)), pad_width=(0, 0))
    with pytest.raises(ValueError):
        F.conv2d(x, np.ones((1, 2, 3, 3)), np.ones(2))


def test_conv2d_against_torch():
    torch = pytest.importorskip("torch")
    tF = torch.nn.functional
    rng = np.random.default_rng(1)
    for mode in F.PAD_MODES:
        for stride in (1, 2):
            x = rng.standard_normal((1, 3, 8, 10))
            w = rng.standard_normal((4, 3, 3, 3))
            b = rng.standard_normal(4)
            r = rng.standard_normal((1, 4, 8 // stride, 10 // stride))

            loss, (gx, gw, gb) = _grads(
                lambda x, w, b: F.sum(F.conv2d(x, w, b, stride=stride, padding=mode) * Tensor(r)),
                x, w, b,
            )

            tx, tw, tb = (torch.tensor(a, requires_grad=True) for a in (x, w, b))
            padded = tF.pad(tx, (1, 1, 1, 1), mode=TORCH_PAD_MODES[mode])
            out = tF.conv2d(padded, tw, tb, stride=stride)
            assert out.shape == r.shape
            t_loss = (out * torch.tensor(r)).sum()
            t_loss.backward()

            assert_allclose(loss, t_loss.item(), rtol=1e-10)
            assert_allclose(gx, tx.grad.numpy(), rtol=1e-10, atol=1e-12)
            assert_allclose(gw, tw.grad.numpy(), rtol=1e-10, atol=1e-12)
            assert_allclose(gb, tb.grad.numpy(), rtol=1e-10, atol=1e-12)


def test_pad_matches_numpy():
    rng = np.random.default_rng(2)
    for mode, np_mode in (("reflect", "reflect"), ("replicate", "edge"), ("zero", "constant")):
        for _ in range(5):
            h, w = rng.integers(2, 7, size=2)
            ph, pw = rng.integers(0, h), rng.integers(0, w)
            x = rng.standard_normal((1, 2, h, w))
            expected = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), mode=np_mode)
            assert_array_equal(F.pad_array(x, ph, pw, mode), expected)


def test_pad_adjoint():
    rng = np.random.default_rng(3)
    for mode in F.PAD_MODES:
        for _ in range(5):
            x = rng.standard_normal((1, 2, 5, 6))
            g = rng.standard_normal((1, 2, 5 + 6, 6 + 4))
            lhs = np.vdot(F.pad_array(x, 3, 2, mode), g)
            rhs = np.vdot(x, F.pad_array_adjoint(g, x.shape, 3, 2, mode))
            assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(x) * np.linalg.norm(g)


def test_pad_indices_reflect():
    assert_array_equal(F.pad_indices(3, 2, 2, "reflect"), [2, 1, 0, 1, 2, 1, 0])
    assert_array_equal(F.pad_indices(3, 2, 2, "replicate"), [0, 0, 0, 1, 2, 2, 2])


def test_upsample_nearest():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    expected = np.array(
        [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], dtype=np.float64
    )
    assert_array_equal(F.upsample(x, 2, "nearest").data[0, 0], expected)


def test_upsample_bilinear_keeps_constants():
    x = Tensor(np.full((1, 2, 3, 5), 0.7))
    assert_allclose(F.upsample(x, 2, "bilinear").data, np.full((1, 2, 6, 10), 0.7), rtol=1e-15)


def test_upsample_against_torch():
    torch = pytest.importorskip("torch")
    x = np.random.default_rng(4).standard_normal((1, 3, 4, 5))
    for mode in F.UPSAMPLE_MODES:
        kwargs = {"align_corners": False} if mode == "bilinear" else {}
        expected = torch.nn.functional.interpolate(
            torch.tensor(x), scale_factor=2, mode=mode, **kwargs
        ).numpy()
        assert_allclose(F.upsample(Tensor(x), 2, mode).data, expected, rtol=1e-12, atol=1e-12)


def test_upsample_errors():
    with pytest.raises(ValueError):
        F.upsample(Tensor(np.ones((1, 1, 2, 2))), 1)
    with pytest.raises(ValueError):
        F.upsample(Tensor(np.ones((1, 1, 2, 2))), 2, "bicubic")


def test_batch_norm_standardized_input():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((1, 3, 8, 8))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    out = F.batch_norm(Tensor(x), np.ones(3), np.zeros(3)).data
    assert_array_almost_equal(out, x, decimal=3)


def test_batch_norm_zero_gamma_gives_beta():
    x = Tensor(np.random.default_rng(6).standard_normal((1, 2, 4, 4)))
    beta = np.array([0.5, -2.0])
    out = F.batch_norm(x, np.zeros(2), beta).data
    assert_array_equal(out, np.broadcast_to(beta.reshape(1, 2, 1, 1), (1, 2, 4, 4)))


def test_batch_norm_statistics():
    x = np.random.default_rng(7).uniform(-3, 10, (2, 4, 6, 6))
    out = F.batch_norm(Tensor(x), np.ones(4), np.zeros(4)).data
    assert_array_almost_equal(out.mean(axis=(0, 2, 3)), np.zeros(4))
    assert_array_almost_equal(out.var(axis=(0, 2, 3)), np.ones(4), decimal=4)


def test_batch_norm_against_torch():
    torch = pytest.importorskip("torch")
    rng = np.random.default_rng(8)
    x, g, b = rng.standard_normal((1, 3, 5, 5)), rng.standard_normal(3), rng.standard_normal(3)
    r = rng.standard_normal((1, 3, 5, 5))
    loss, (gx, gg, gb) = _grads(lambda x, g, b: F.sum(F.batch_norm(x, g, b) * Tensor(r)), x, g, b)

    tx, tg, tb = (torch.tensor(a, requires_grad=True) for a in (x, g, b))
    out = torch.nn.functional.batch_norm(tx, None, None, tg, tb, training=True, eps=1e-5)
    (out * torch.tensor(r)).sum().backward()
    assert_allclose(gx, tx.grad.numpy(), rtol=1e-9, atol=1e-12)
    assert_allclose(gg, tg.grad.numpy(), rtol=1e-9, atol=1e-12)
    assert_allclose(gb, tb.grad.numpy(), rtol=1e-9, atol=1e-12)


def test_batch_norm_errors():
    x = Tensor(np.ones((1, 2, 4, 4)))
    with pytest.raises(ValueError):
        F.batch_norm(x, np.ones(2), np.zeros(2), eps=0)
    with pytest.raises(ValueError):
        F.batch_norm(x, np.ones(3), np.zeros(3))


def test_charbonnier():
    assert F.charbonnier_abs(Tensor([3.0]), eps=4.0).item() == 5.0
    _, (g,) = _grads(lambda x: F.sum(F.charbonnier_abs(x, 0.0)), np.array([-1.0, 0.0, 2.0]))
    assert_array_equal(g, [-1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        F.charbonnier_abs(Tensor([1.0]), eps=-1.0)


def test_sigmoid():
    _, (g,) = _grads(lambda x: F.sum(F.sigmoid(x)), np.zeros(1))
    assert g[0] == 0.25
    out = F.sigmoid(Tensor([-1000.0, 0.0, 1000.0])).data
    assert np.isfinite(out).all()
    assert_array_equal(out, [0.0, 0.5, 1.0])


def test_leaky_relu():
    x = np.array([-2.0, -0.5, 0.5, 3.0])
    assert_array_equal(F.leaky_relu(Tensor(x), 0.1).data, [-0.2, -0.05, 0.5, 3.0])
    _, (g,) = _grads(lambda x: F.sum(F.leaky_relu(x, 0.1)), x)
    assert_array_equal(g, [0.1, 0.1, 1.0, 1.0])
    for slope in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            F.leaky_relu(Tensor(x), slope)


def test_sq_l2_of_zeros():
    assert F.sq_l2(Tensor(np.zeros((1, 1, 3, 3)))).item() == 0.0


def test_per_channel_broadcast():
    rng = np.random.default_rng(9)
    x, c = rng.standard_normal((1, 3, 2, 2)), rng.standard_normal(3)
    out = (Tensor(x) + Tensor(c)).data
    assert_array_equal(out, x + c.reshape(1, 3, 1, 1))
    _, (gx, gc) = _grads(lambda x, c: F.sum(x * c), x, c)
    assert_allclose(gc, x.sum(axis=(0, 2, 3)), rtol=1e-14)
    assert_array_equal(gx, np.broadcast_to(c.reshape(1, 3, 1, 1), x.shape))


def test_broadcast_conflict():
    with pytest.raises(ValueError):
        F.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))
    with pytest.raises(ValueError):
        F.mul(Tensor(np.ones((1, 2, 3, 3))), Tensor(np.ones(3)))


def test_concat_splits_gradient():
    rng = np.random.default_rng(10)
    a, b = rng.standard_normal((1, 2, 3, 3)), rng.standard_normal((1, 1, 3, 3))
    out = F.concat([Tensor(a), Tensor(b)])
    assert_array_equal(out.data, np.concatenate([a, b], axis=1))
    r = rng.standard_normal((1, 3, 3, 3))
    _, (ga, gb) = _grads(lambda a, b: F.sum(F.concat([a, b]) * Tensor(r)), a, b)
    assert_array_equal(ga, r[:, :2])
    assert_array_equal(gb, r[:, 2:])


def test_reshape_gradient():
    x = np.arange(12.0).reshape(1, 3, 2, 2)
    _, (g,) = _grads(lambda x: F.sq_l2(F.reshape(x, (3, 4))), x)
    assert_array_equal(g, 2 * x)
