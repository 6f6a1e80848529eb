"""Green-kernel quadrature, boundary extension, and Picard iteration."""

import numpy as np
import pytest

from kanop.picard import (
    ContractionError,
    PicardState,
    SemilinearProblem,
    SolverError,
    apply_T,
    ball_kernel,
    boundary_extension,
    grid_norm,
    interval_kernel,
    measure_contraction,
    picard_solve,
)


def zero_fnl(y, u):
    return np.zeros_like(u)


def make_interval_problem(n_nodes, fnl, f0_fun, g=(0.0, 0.0), delta=0.4):
    kernel = interval_kernel(n_nodes)
    xs = kernel.nodes[:, 0]
    wg = boundary_extension(kernel, g)
    return SemilinearProblem(
        kernel=kernel, fnl=fnl, f0=f0_fun(xs), wg=wg, delta=delta
    )


class TestIntervalKernel:
    def test_closed_form_values(self):
        kernel = interval_kernel(5)
        assert kernel.evaluate(np.array(0.25), np.array(0.5)) == 0.25 * 0.5
        assert kernel.evaluate(np.array(0.5), np.array(0.25)) == 0.25 * 0.5

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(0, 1, 64)
        y = rng.uniform(0, 1, 64)
        kernel = interval_kernel(9)
        np.testing.assert_allclose(
            kernel.evaluate(x, y), kernel.evaluate(y, x), atol=1e-15
        )

    def test_t_zero_at_half_is_exactly_one_eighth(self):
        # f0 = -1, fnl = 0, g = 0: T(0)(x) = int G(x, y) dy = x(1-x)/2.
        # The integrand is piecewise linear with its kink on a node, so the
        # trapezoid quadrature reproduces it exactly.
        problem = make_interval_problem(9, zero_fnl, lambda x: -np.ones_like(x))
        out = apply_T(problem, np.zeros(9))
        i_half = 4
        assert problem.kernel.nodes[i_half, 0] == 0.5
        assert out[i_half] == pytest.approx(0.125, abs=1e-15)

    def test_linear_solution_matches_closed_form(self):
        problem = make_interval_problem(257, zero_fnl, lambda x: -np.ones_like(x))
        xs = problem.kernel.nodes[:, 0]
        out = apply_T(problem, np.zeros(257))
        np.testing.assert_allclose(out, xs * (1 - xs) / 2, atol=1e-6)

    def test_quadrature_refinement_is_second_order(self):
        # smooth forcing: u(x) = sin(pi x) / pi^2, genuinely O(h^2) error
        errs = []
        for n in (65, 129):
            problem = make_interval_problem(
                n, zero_fnl, lambda x: -np.sin(np.pi * x)
            )
            xs = problem.kernel.nodes[:, 0]
            out = apply_T(problem, np.zeros(n))
            errs.append(np.max(np.abs(out - np.sin(np.pi * xs) / np.pi**2)))
        assert errs[0] / errs[1] >= 3.5

    def test_derivative_bound(self):
        # |d/dx G(x, y)| <= C0 |x-y|^(1-d) with d = 1, C0 = 1
        kernel = interval_kernel(9)
        rng = np.random.default_rng(7)
        x = rng.uniform(0.01, 0.99, 200)
        y = rng.uniform(0.01, 0.99, 200)
        h = 1e-6
        dg = (kernel.evaluate(x + h, y) - kernel.evaluate(x - h, y)) / (2 * h)
        assert np.max(np.abs(dg)) <= kernel.bound_constant + 1e-3
        assert np.max(np.abs(kernel.evaluate(x, y))) <= kernel.bound_constant


class TestBoundaryExtension:
    def test_linear_data_gives_linear_field(self):
        kernel = interval_kernel(65)
        w = boundary_extension(kernel, (0.0, 1.0))
        np.testing.assert_allclose(w, kernel.nodes[:, 0], atol=1e-10)

    def test_constant_data_is_preserved(self):
        kernel = interval_kernel(33)
        w = boundary_extension(kernel, (0.7, 0.7))
        np.testing.assert_allclose(w, 0.7, atol=1e-10)

    def test_drift_coefficient_against_closed_form(self):
        # -w'' + k w' = 0, w(0)=0, w(1)=1  =>  w = (e^{kx} - 1)/(e^k - 1)
        k = 2.0
        kernel = interval_kernel(257)
        xs = kernel.nodes[:, 0]
        w = boundary_extension(kernel, (0.0, 1.0), gamma=1.0, mu=k)
        exact = np.expm1(k * xs) / np.expm1(k)
        np.testing.assert_allclose(w, exact, atol=1e-3)

    def test_variable_diffusion_refines(self):
        # -(gamma w')' = 0 with gamma = 1 + x: w = log(1+x)/log 2
        errs = []
        for n in (65, 257):
            kernel = interval_kernel(n)
            xs = kernel.nodes[:, 0]
            w = boundary_extension(kernel, (0.0, 1.0), gamma=lambda x: 1.0 + x)
            errs.append(np.max(np.abs(w - np.log1p(xs) / np.log(2.0))))
        assert errs[1] < errs[0]

    def test_callable_boundary_data(self):
        kernel = interval_kernel(17)
        w = boundary_extension(kernel, lambda x: 2.0 * x)
        np.testing.assert_allclose(w, 2.0 * kernel.nodes[:, 0], atol=1e-10)

    def test_ball_rejects_non_laplace_coefficients(self):
        kernel = ball_kernel(6)
        with pytest.raises(SolverError):
            boundary_extension(kernel, lambda xi: xi[:, 0], mu=1.0)


class TestContractionToy:
    # fnl(y, z) = z^2, f0 = -0.1, g = 0 on the interval
    def setup_method(self):
        self.problem = make_interval_problem(
            129, lambda y, u: u**2, lambda x: -0.1 * np.ones_like(x), delta=0.4
        )

    def test_measured_ratio_bounds_fresh_samples(self):
        rho = measure_contraction(self.problem, n_pairs=200, rng=np.random.default_rng(1))
        assert 0.0 < rho < 1.0
        kernel = self.problem.kernel
        rng = np.random.default_rng(42)
        for _ in range(100):
            u = _smooth_field(kernel, self.problem.delta, rng)
            v = _smooth_field(kernel, self.problem.delta, rng)
            du = grid_norm(kernel, u - v)
            if du < 1e-12:
                continue
            dT = grid_norm(
                kernel, apply_T(self.problem, u) - apply_T(self.problem, v)
            )
            assert dT / du <= rho + 0.05

    @pytest.mark.parametrize("eps", [1e-2, 1e-4, 1e-6])
    def test_residual_meets_target(self, eps):
        state = picard_solve(self.problem, eps, rng=np.random.default_rng(5))
        assert isinstance(state, PicardState)
        assert state.residual <= eps
        for ratio in state.ratios:
            assert ratio <= state.rho + 0.05

    def test_iteration_count_follows_log_rule(self):
        state = picard_solve(self.problem, 1e-4, rho=0.5)
        assert state.iterations == int(np.ceil(np.log(1e4) / np.log(2.0)))

    def test_divergence_raises_with_history(self):
        bad = make_interval_problem(
            65, lambda y, u: 80.0 * u**2, lambda x: -2.0 * np.ones_like(x), delta=0.4
        )
        with pytest.raises(ContractionError) as info:
            picard_solve(bad, 1e-4, rho=0.5)
        assert len(info.value.step_norms) >= 2

    def test_unmeasurable_contraction_raises(self):
        bad = make_interval_problem(
            65, lambda y, u: 80.0 * u**2, lambda x: -2.0 * np.ones_like(x), delta=0.4
        )
        with pytest.raises(ContractionError):
            picard_solve(bad, 1e-4)


def _smooth_field(kernel, delta, rng):
    t = kernel.nodes[:, 0]
    u = np.zeros_like(t)
    for k in range(1, 4):
        u += rng.normal() * np.sin(np.pi * k * t) / k**2
    norm = grid_norm(kernel, u)
    return u * (rng.uniform(0.2, 1.0) * delta / max(norm, 1e-12))


class TestBallKernel:
    def setup_method(self):
        self.kernel = ball_kernel(10)

    def test_symmetry(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(-0.55, 0.55, size=(50, 3))
        y = rng.uniform(-0.55, 0.55, size=(50, 3))
        np.testing.assert_allclose(
            self.kernel.evaluate(x, y), self.kernel.evaluate(y, x), atol=1e-10
        )

    def test_vanishes_toward_boundary(self):
        x = np.array([[0.2, 0.1, -0.1]])
        direction = np.array([0.0, 1.0, 0.0])
        vals = [
            self.kernel.evaluate(x, (r * direction)[None, :]).item()
            for r in (0.5, 0.9, 0.99)
        ]
        assert vals[0] > vals[1] > vals[2]
        assert vals[2] < 0.02

    def test_growth_bounds(self):
        rng = np.random.default_rng(13)
        x = rng.uniform(-0.5, 0.5, size=(100, 3))
        y = rng.uniform(-0.5, 0.5, size=(100, 3))
        r = np.linalg.norm(x - y, axis=1)
        keep = r > 1e-3
        x, y, r = x[keep], y[keep], r[keep]
        c0 = self.kernel.bound_constant
        assert np.all(np.abs(self.kernel.evaluate(x, y)) * r <= 2 * c0 + 1e-12)
        h = 1e-5
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = h
            dg = (self.kernel.evaluate(x + e, y) - self.kernel.evaluate(x - e, y)) / (
                2 * h
            )
            assert np.all(np.abs(dg) * r**2 <= c0 * (1 + 1e-3))

    def test_poisson_solve_matches_closed_form(self):
        # -Laplace u = 1, u = 0 on the sphere: u = (1 - |x|^2)/6
        kernel = self.kernel
        problem = SemilinearProblem(
            kernel=kernel,
            fnl=zero_fnl,
            f0=-np.ones(kernel.n_nodes),
            wg=np.zeros(kernel.n_nodes),
            delta=1.0,
        )
        out = apply_T(problem, np.zeros(kernel.n_nodes))
        r2 = np.sum(kernel.nodes**2, axis=1)
        inner = r2 <= 0.49
        err = np.max(np.abs(out[inner] - (1 - r2[inner]) / 6.0))
        assert err < 0.01

    def test_constant_boundary_extension(self):
        kernel = self.kernel
        w = boundary_extension(kernel, lambda xi: np.full(xi.shape[0], 0.3))
        inner = np.sum(kernel.nodes**2, axis=1) <= 0.64
        np.testing.assert_allclose(w[inner], 0.3, atol=1e-4)

    def test_harmonic_boundary_extension(self):
        kernel = self.kernel
        w = boundary_extension(kernel, lambda xi: xi[:, 2])
        inner = np.sum(kernel.nodes**2, axis=1) <= 0.64
        np.testing.assert_allclose(w[inner], kernel.nodes[inner, 2], atol=1e-3)
