"""Euler-Maruyama engine: exits, moments, order, and stream independence."""

import numpy as np
import pytest

from kanop.sde import PathBundle, SdeSpec, lq_coeffs, periodic_coeffs, simulate


def constant_drift(c, d):
    return lambda x: np.full_like(x, c)


class TestExitDetection:
    def test_drift_only_exit_at_step_one(self):
        # b = 1, sigma = 0, dt = 0.1, x0 = 0.95 in (-1, 1): X_1 = 1.05
        spec = SdeSpec(
            dim=1,
            drift=constant_drift(1.0, 1),
            diffusion=constant_drift(0.0, 1),
            x0=np.array([0.95]),
            horizon=1.0,
            n_steps=10,
            domain=(np.array([-1.0]), np.array([1.0])),
        )
        bundle = simulate(spec, n_paths=3, seed=0)
        np.testing.assert_array_equal(bundle.exit_index, [1, 1, 1])
        # simulation continues past the exit
        np.testing.assert_allclose(bundle.states[0, -1, 0], 0.95 + 1.0, atol=1e-12)

    def test_no_domain_means_no_exit(self):
        spec = SdeSpec(
            dim=2,
            drift=constant_drift(0.0, 2),
            diffusion=constant_drift(1.0, 2),
            x0=np.zeros(2),
            horizon=1.0,
            n_steps=8,
        )
        bundle = simulate(spec, n_paths=4, seed=1)
        np.testing.assert_array_equal(bundle.exit_index, [8, 8, 8, 8])

    def test_start_outside_is_exit_zero(self):
        spec = SdeSpec(
            dim=1,
            drift=constant_drift(0.0, 1),
            diffusion=constant_drift(0.0, 1),
            x0=np.array([2.0]),
            horizon=1.0,
            n_steps=4,
            domain=(np.array([-1.0]), np.array([1.0])),
        )
        assert simulate(spec, 1, 0).exit_index[0] == 0


class TestDistribution:
    def test_weak_mean_of_brownian_motion(self):
        m = 100_000
        spec = SdeSpec(
            dim=1,
            drift=constant_drift(0.0, 1),
            diffusion=constant_drift(1.0, 1),
            x0=np.zeros(1),
            horizon=1.0,
            n_steps=8,
        )
        bundle = simulate(spec, n_paths=m, seed=7)
        terminal = bundle.states[:, -1, 0]
        assert abs(terminal.mean()) <= 4.0 / np.sqrt(m)
        assert abs(terminal.std() - 1.0) <= 4.0 / np.sqrt(m)

    def test_deterministic_first_order_convergence(self):
        # dX = X dt from 1: X(T) = e, Euler error ~ C dt
        errs = []
        for n in (64, 128):
            spec = SdeSpec(
                dim=1,
                drift=lambda x: x,
                diffusion=constant_drift(0.0, 1),
                x0=np.ones(1),
                horizon=1.0,
                n_steps=n,
            )
            out = simulate(spec, 1, 0).states[0, -1, 0]
            errs.append(abs(out - np.e))
        assert 1.8 <= errs[0] / errs[1] <= 2.2


class TestStreams:
    def make_spec(self):
        return SdeSpec(
            dim=3,
            drift=constant_drift(0.1, 3),
            diffusion=constant_drift(0.5, 3),
            x0=np.zeros(3),
            horizon=0.5,
            n_steps=6,
        )

    def test_same_seed_reproduces(self):
        a = simulate(self.make_spec(), 5, seed=123)
        b = simulate(self.make_spec(), 5, seed=123)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.increments, b.increments)

    def test_paths_keyed_by_index_not_batch(self):
        # path p depends only on (seed, p): a smaller batch is a prefix
        big = simulate(self.make_spec(), 7, seed=9)
        small = simulate(self.make_spec(), 3, seed=9)
        np.testing.assert_array_equal(big.states[:3], small.states)

    def test_different_seeds_differ(self):
        a = simulate(self.make_spec(), 2, seed=1)
        b = simulate(self.make_spec(), 2, seed=2)
        assert not np.allclose(a.states, b.states)


class TestBenchmarkCoefficients:
    def test_periodic_values(self):
        drift, diffusion = periodic_coeffs(5)
        x = np.zeros((1, 5))
        np.testing.assert_allclose(
            diffusion(x)[0, 0], 0.35 / (np.sqrt(5.0) * np.pi), atol=1e-15
        )
        x = np.full((1, 5), 0.25)
        np.testing.assert_allclose(drift(x)[0, 0], 0.2, atol=1e-15)

    def test_lq_values(self):
        drift, diffusion = lq_coeffs(4)
        x = np.arange(4.0)[None, :]
        np.testing.assert_array_equal(drift(x), x)
        np.testing.assert_allclose(diffusion(x), 0.5, atol=1e-15)

    def test_bundle_properties(self):
        drift, diffusion = lq_coeffs(2)
        spec = SdeSpec(
            dim=2, drift=drift, diffusion=diffusion,
            x0=np.full(2, 0.5), horizon=1.0, n_steps=4,
            domain=(np.zeros(2), np.ones(2)),
        )
        bundle = simulate(spec, 2, seed=0)
        assert isinstance(bundle, PathBundle)
        assert bundle.n_paths == 2
        assert bundle.dt == pytest.approx(0.25)
        assert bundle.states.shape == (2, 5, 2)
        assert bundle.increments.shape == (2, 4, 2)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            SdeSpec(
                dim=1, drift=lambda x: x, diffusion=lambda x: x,
                x0=np.zeros(1), horizon=1.0, n_steps=0,
            )
        with pytest.raises(ValueError):
            SdeSpec(
                dim=1, drift=lambda x: x, diffusion=lambda x: x,
                x0=np.zeros(1), horizon=1.0, n_steps=4,
                domain=(np.ones(1), np.zeros(1)),
            )
