"""Closed-form benchmark values, equation identities, and the Riccati solve."""

import numpy as np
import pytest

from kanop.benchmarks import (
    LqSolution,
    PeriodicSolution,
    RiccatiCurve,
    fbsde_generator,
    riccati_solve,
)


class TestPeriodicValues:
    def setup_method(self):
        self.sol = PeriodicSolution(dim=5, horizon=1.0)

    def test_value_at_terminal_origin(self):
        x = np.zeros((1, 5))
        assert self.sol.u(1.0, x)[0] == pytest.approx(1.0 / np.pi, abs=1e-15)

    def test_gradient_at_terminal_origin(self):
        x = np.zeros((1, 5))
        np.testing.assert_allclose(self.sol.grad(1.0, x), 2.0, atol=1e-12)

    def test_hessian_at_terminal_origin(self):
        x = np.zeros((1, 5))
        np.testing.assert_allclose(
            self.sol.hess(1.0, x), -4.0 * np.pi, atol=1e-12
        )

    def test_driver_frozen_value(self):
        x = np.zeros((1, 5))
        out = self.sol.driver(1.0, x, np.zeros(1), np.ones((1, 5)))
        assert out[0] == pytest.approx(2.0, abs=1e-12)

    def test_terminal_matches_value(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 1, size=(10, 5))
        np.testing.assert_allclose(
            self.sol.terminal(x), self.sol.u(1.0, x), atol=1e-15
        )

    def test_periodicity_in_each_coordinate(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(0, 1, size=(10, 5))
        shifted = x.copy()
        shifted[:, 2] += 1.0
        np.testing.assert_allclose(
            self.sol.u(0.3, x), self.sol.u(0.3, shifted), atol=1e-12
        )

    def test_gradient_and_hessian_match_differences(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(0, 1, size=(5, 5))
        h = 1e-6
        for i in range(5):
            e = np.zeros(5)
            e[i] = h
            fd = (self.sol.u(0.4, x + e) - self.sol.u(0.4, x - e)) / (2 * h)
            np.testing.assert_allclose(fd, self.sol.grad(0.4, x)[:, i], rtol=1e-7)
        e = np.zeros(5)
        e[0] = h
        fd2 = (
            self.sol.u(0.4, x + e) - 2 * self.sol.u(0.4, x) + self.sol.u(0.4, x - e)
        ) / h**2
        np.testing.assert_allclose(fd2, self.sol.hess(0.4, x)[:, 0, 0], rtol=1e-3)

    def test_solves_backward_equation(self):
        # u_t + b . grad u + (1/2) sum sigma_ii^2 u_ii + f(t,x,u,sigma grad u) = 0
        rng = np.random.default_rng(3)
        t = rng.uniform(0, 1, size=20)
        x = rng.uniform(0, 1, size=(20, 5))
        drift, diffusion = self.sol.coeffs()
        sig = diffusion(x)
        u = self.sol.u(t, x)
        grad = self.sol.grad(t, x)
        hess_ii = np.einsum("...ii->...i", self.sol.hess(t, x))
        lhs = (
            self.sol.du_dt(t, x)
            + np.sum(drift(x) * grad, axis=-1)
            + 0.5 * np.sum(sig**2 * hess_ii, axis=-1)
            + self.sol.driver(t, x, u, sig * grad)
        )
        np.testing.assert_allclose(lhs, 0.0, atol=1e-10)


class TestRiccati:
    def test_terminal_value_exact(self):
        curve = riccati_solve(5, 1.0, 200)
        assert curve.ks[-1] == 0.2
        assert curve.k(1.0) == pytest.approx(0.2, abs=1e-15)

    def test_fourth_order_richardson(self):
        k0 = [riccati_solve(5, 1.0, n).ks[0] for n in (50, 100, 200)]
        ratio = (k0[0] - k0[1]) / (k0[1] - k0[2])
        assert 14.0 <= ratio <= 18.0

    def test_curve_monotone_backward(self):
        curve = riccati_solve(5, 1.0, 500)
        assert np.all(np.diff(curve.ks) < 0)
        assert np.all(curve.ks > 0)

    def test_hermite_matches_finer_solve(self):
        coarse = riccati_solve(5, 1.0, 1_000)
        fine = riccati_solve(5, 1.0, 10_000)
        ts = np.linspace(0.0, 1.0, 77)
        np.testing.assert_allclose(coarse.k(ts), fine.k(ts), atol=1e-10)
        np.testing.assert_allclose(coarse.kdot(ts), fine.kdot(ts), atol=1e-8)

    def test_derivative_consistent_with_ode(self):
        curve = riccati_solve(5, 1.0, 1_000)
        ts = np.linspace(0.0, 1.0, 33)
        k = curve.k(ts)
        expected = -2 * k - 1 / 5 + k**2 / (5 + k)
        np.testing.assert_allclose(curve.kdot(ts), expected, atol=1e-9)

    def test_out_of_range_rejected(self):
        curve = riccati_solve(5, 1.0, 100)
        with pytest.raises(ValueError):
            curve.k(1.5)
        assert isinstance(curve, RiccatiCurve)


class TestLqSolution:
    def setup_method(self):
        self.sol = LqSolution(dim=5, horizon=1.0, n_riccati_steps=2_000)

    def test_terminal_frozen_value(self):
        x = np.ones((1, 5))
        assert self.sol.u(1.0, x)[0] == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(
            self.sol.terminal(x), self.sol.u(1.0, x), atol=1e-12
        )

    def test_gradient_and_hessian(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(0, 1, size=(7, 5))
        t = 0.37
        k = self.sol.curve.k(t)
        np.testing.assert_allclose(self.sol.grad(t, x), 2 * k * x, atol=1e-14)
        np.testing.assert_allclose(
            self.sol.hess(t, x), 2 * k * np.eye(5), atol=1e-14
        )

    def test_solves_backward_equation(self):
        rng = np.random.default_rng(5)
        t = rng.uniform(0, 1, size=15)
        x = rng.uniform(0, 1, size=(15, 5))
        drift, diffusion = self.sol.coeffs()
        sig = diffusion(x)
        u = self.sol.u(t, x)
        grad = self.sol.grad(t, x)
        hess_ii = np.einsum("...ii->...i", self.sol.hess(t, x))
        lhs = (
            self.sol.du_dt(t, x)
            + np.sum(drift(x) * grad, axis=-1)
            + 0.5 * np.sum(sig**2 * hess_ii, axis=-1)
            + self.sol.driver(t, x, u, sig * grad)
        )
        np.testing.assert_allclose(lhs, 0.0, atol=1e-9)


class TestGeneratorWrapper:
    @pytest.mark.parametrize("family", ["periodic", "lq"])
    def test_wrapper_adds_transport_and_trace(self, family):
        sol = (
            PeriodicSolution(dim=3)
            if family == "periodic"
            else LqSolution(dim=3, n_riccati_steps=500)
        )
        f_gen = fbsde_generator(sol)
        rng = np.random.default_rng(6)
        t = rng.uniform(0, 1, size=8)
        x = rng.uniform(0, 1, size=(8, 3))
        y = rng.normal(size=8)
        z = rng.normal(size=(8, 3))
        ups = rng.normal(size=(8, 3, 3))
        drift, diffusion = sol.coeffs()
        sig = diffusion(x)
        expected = (
            sol.driver(t, x, y, sig * z)
            + np.sum(drift(x) * z, axis=-1)
            + 0.5 * np.sum(sig**2 * np.einsum("bii->bi", ups), axis=-1)
        )
        np.testing.assert_allclose(f_gen(t, x, y, z, ups), expected, atol=1e-12)
