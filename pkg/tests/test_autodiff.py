"""Tape, primitive gradients, and the differentiable 2D Fourier transform."""

import gc
import weakref

import numpy as np
import pytest

from kanop import autodiff as ad
from helpers import assert_grad_close, fd_gradient

RNG = np.random.default_rng(42)


def test_scalar_chain():
    x = ad.Tensor(np.array([2.0, -1.0]), trainable=True)
    with ad.Tape() as tape:
        y = ad.sum_all((x * x + 1.0) * 3.0)
    tape.backward(y)
    np.testing.assert_allclose(y.data, 3.0 * (4.0 + 1.0 + 1.0 + 1.0))
    np.testing.assert_allclose(x.grad, 6.0 * x.data)


def test_three_layer_composite_matches_finite_differences():
    """Random three-layer composite; tape gradient vs central differences."""
    rng = np.random.default_rng(7)
    w1 = ad.Tensor(rng.normal(size=(5, 8)) * 0.7, trainable=True)
    b1 = ad.Tensor(rng.normal(size=8) * 0.3, trainable=True)
    w2 = ad.Tensor(rng.normal(size=(8, 6)) * 0.7, trainable=True)
    b2 = ad.Tensor(rng.normal(size=6) * 0.3, trainable=True)
    w3 = ad.Tensor(rng.normal(size=(6, 1)) * 0.7, trainable=True)
    x = ad.Tensor(rng.normal(size=(4, 5)))

    def forward():
        h1 = ad.relu(ad.matmul(x, w1) + b1)
        h2 = ad.power(ad.matmul(h1, w2) + b2, 2)
        return ad.mean_all(ad.matmul(h2, w3))

    with ad.Tape() as tape:
        loss = forward()
    tape.backward(loss)

    for p in (w1, b1, w2, b2, w3):
        numeric = fd_gradient(lambda: forward().item(), p.data)
        assert_grad_close(p.grad, numeric)


@pytest.mark.parametrize(
    "op",
    [
        lambda a, b: a + b,
        lambda a, b: a - b,
        lambda a, b: a * b,
        lambda a, b: ad.concat([a, b], axis=-1),
        lambda a, b: a[..., 1:3] * b[..., :2],
    ],
)
def test_elementwise_primitives_match_finite_differences(op):
    rng = np.random.default_rng(11)
    a = ad.Tensor(rng.normal(size=(3, 4)), trainable=True)
    b = ad.Tensor(rng.normal(size=(3, 4)), trainable=True)

    def forward():
        return ad.sum_all(ad.power(op(a, b), 2))

    with ad.Tape() as tape:
        loss = forward()
    tape.backward(loss)
    for p in (a, b):
        assert_grad_close(p.grad, fd_gradient(lambda: forward().item(), p.data))


def test_broadcast_bias_gradient():
    rng = np.random.default_rng(3)
    x = ad.Tensor(rng.normal(size=(6, 4)))
    b = ad.Tensor(rng.normal(size=4), trainable=True)

    def forward():
        return ad.mean_all(ad.power(x + b, 3))

    with ad.Tape() as tape:
        loss = forward()
    tape.backward(loss)
    assert b.grad.shape == (4,)
    assert_grad_close(b.grad, fd_gradient(lambda: forward().item(), b.data))


def test_reshape_gradient():
    rng = np.random.default_rng(4)
    x = ad.Tensor(rng.normal(size=(2, 3, 4)), trainable=True)
    w = ad.Tensor(rng.normal(size=(4, 2)), trainable=True)

    def forward():
        flat = ad.reshape(x, (6, 4))
        return ad.sum_all(ad.power(ad.matmul(flat, w), 2))

    with ad.Tape() as tape:
        loss = forward()
    tape.backward(loss)
    assert x.grad.shape == (2, 3, 4)
    assert_grad_close(x.grad, fd_gradient(lambda: forward().item(), x.data))
    assert_grad_close(w.grad, fd_gradient(lambda: forward().item(), w.data))


def test_expand_leading_and_take_scatter():
    rng = np.random.default_rng(5)
    base = ad.Tensor(rng.normal(size=(4, 3)), trainable=True)
    idx = np.array([0, 2])

    def forward():
        tiled = ad.expand_leading(base, 5)
        picked = ad.take_nodes(tiled, idx)
        spread = ad.scatter_nodes(picked, idx, 4)
        return ad.sum_all(ad.power(spread, 2))

    with ad.Tape() as tape:
        loss = forward()
    tape.backward(loss)
    assert_grad_close(base.grad, fd_gradient(lambda: forward().item(), base.data))


def test_mode_matmul_matches_complex_oracle():
    rng = np.random.default_rng(9)
    k, c, o = 6, 3, 2
    xre = ad.Tensor(rng.normal(size=(4, k, c)), trainable=True)
    xim = ad.Tensor(rng.normal(size=(4, k, c)), trainable=True)
    wre = ad.Tensor(rng.normal(size=(k, c, o)), trainable=True)
    wim = ad.Tensor(rng.normal(size=(k, c, o)), trainable=True)

    yre, yim = ad.mode_matmul(xre, xim, wre, wim)
    zx = xre.data + 1j * xim.data
    zw = wre.data + 1j * wim.data
    want = np.einsum("bkc,kco->bko", zx, zw)
    np.testing.assert_allclose(yre.data, want.real, atol=1e-12)
    np.testing.assert_allclose(yim.data, want.imag, atol=1e-12)

    def forward():
        r, i = ad.mode_matmul(xre, xim, wre, wim)
        return ad.sum_all(ad.power(r, 2) + ad.power(i, 2)).item()

    with ad.Tape() as tape:
        r, i = ad.mode_matmul(xre, xim, wre, wim)
        loss = ad.sum_all(ad.power(r, 2) + ad.power(i, 2))
    tape.backward(loss)
    for p in (xre, xim, wre, wim):
        assert_grad_close(p.grad, fd_gradient(forward, p.data))


class TestFourier:
    def test_round_trip(self):
        rng = np.random.default_rng(21)
        v = ad.Tensor(rng.normal(size=(16, 16, 3)))
        back = ad.fft2_inverse(ad.fft2_forward(v))
        assert np.max(np.abs(back.data - v.data)) < 1e-10

    def test_parseval(self):
        rng = np.random.default_rng(22)
        v = rng.normal(size=(32, 32, 2))
        spec = ad.fft2_forward(ad.Tensor(v))
        lhs = np.sum(v * v)
        rhs = np.sum(spec.re.data**2 + spec.im.data**2) / (32 * 32)
        assert abs(lhs - rhs) / abs(lhs) < 1e-9

    def test_constant_field_dc_mode(self):
        v = ad.Tensor(np.ones((8, 8, 1)))
        spec = ad.fft2_forward(v)
        assert spec.re.data[0, 0, 0] == pytest.approx(64.0, abs=1e-12)
        others = spec.re.data.copy()
        others[0, 0, 0] = 0.0
        assert np.max(np.abs(others)) < 1e-10
        assert np.max(np.abs(spec.im.data)) < 1e-10

    def test_spectral_multiplier_gradient_matches_fd(self):
        """d sum(ifft2(M . fft2(v))) / dv against central differences."""
        rng = np.random.default_rng(23)
        s = 8
        v = ad.Tensor(rng.normal(size=(s, s, 2)), trainable=True)
        mre = rng.normal(size=(s, s, 2))
        mim = rng.normal(size=(s, s, 2))

        def forward():
            spec = ad.fft2_forward(v)
            out = ad.fft2_inverse(
                ad.ComplexGrid(
                    re=spec.re * mre - spec.im * mim,
                    im=spec.re * mim + spec.im * mre,
                )
            )
            return ad.sum_all(ad.power(out, 2))

        with ad.Tape() as tape:
            loss = forward()
        tape.backward(loss)
        assert_grad_close(v.grad, fd_gradient(lambda: forward().item(), v.data))


class TestTapeDiscipline:
    def test_shape_mismatch_reports_op(self):
        a = ad.Tensor(np.zeros((2, 3)))
        w = ad.Tensor(np.zeros((4, 2)))
        with pytest.raises(ad.ShapeError, match="matmul"):
            ad.matmul(a, w)

    def test_backward_on_detached_tensor_raises(self):
        x = ad.Tensor(np.array([1.0]))
        y = ad.sum_all(x * x)  # computed outside any tape
        with pytest.raises(ad.DetachedTensorError):
            ad.tape_backward(y)

    def test_tape_consumed_after_backward(self):
        x = ad.Tensor(np.array([2.0]), trainable=True)
        with ad.Tape() as tape:
            y = ad.sum_all(x * x)
        tape.backward(y)
        with pytest.raises(ad.TapeConsumedError):
            tape.backward(y)

    def test_outside_scope_is_detached_compute(self):
        x = ad.Tensor(np.array([1.0, 2.0]), trainable=True)
        y = x * x
        assert y.tape is None

    def test_buffers_released_after_consumption(self):
        """No growth across repeated forward/backward cycles."""
        x = ad.Tensor(np.ones(8), trainable=True)
        refs = []
        for _ in range(100):
            with ad.Tape() as tape:
                y = ad.sum_all(ad.power(x * 2.0, 3))
            tape.backward(y)
            refs.append(weakref.ref(y))
            x.zero_grad()
        del y, tape
        gc.collect()
        alive = sum(1 for r in refs if r() is not None)
        assert alive == 0
