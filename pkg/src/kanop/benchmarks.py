"""Closed-form benchmark solutions for the coupled diffusion/value problems.

Two families, both with known value functions u(t, x), gradients, and
Hessians, so every learned or classical solver can be scored exactly.

Periodic family (dimension d, horizon T):
    theta(t, x) = 2 pi (sum_i x_i + (T - t))
    u(t, x) = (sin theta + cos theta) / pi
with the drift/diffusion of ``kanop.sde.periodic_coeffs`` and the driver

    f(t, x, y, z) = 2 pi^2 y sum_i sigma_ii^2
                    - sum_i (b_i / sigma_ii) z_i + 2 (cos theta - sin theta)

which makes u solve u_t + b . grad u + (1/2) sum sigma_ii^2 u_ii
+ f(t, x, u, sigma grad u) = 0.

Linear-quadratic family: dynamics dX = X dt + (1/sqrt d) dW and value
u(t, x) = k(t) |x|^2 where the scalar curve solves the backward equation

    k'(t) = -2 k - 1/d + k^2 / (d + k),   k(T) = 1/d,

integrated here with classical fourth-order Runge-Kutta and interpolated
with a cubic Hermite so k and k' are available at arbitrary times.  The
matching driver -(k'/k) y - 2 y - k turns u into the solution of the
associated backward equation along the dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sde import lq_coeffs, periodic_coeffs

__all__ = [
    "PeriodicSolution",
    "RiccatiCurve",
    "LqSolution",
    "riccati_solve",
    "fbsde_generator",
]


@dataclass(frozen=True)
class PeriodicSolution:
    """Closed-form periodic benchmark in d dimensions on [0, T]."""

    dim: int = 5
    horizon: float = 1.0

    def coeffs(self):
        return periodic_coeffs(self.dim)

    def theta(self, t, x) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        return 2.0 * np.pi * (np.sum(x, axis=-1) + (self.horizon - t))

    def u(self, t, x) -> np.ndarray:
        th = self.theta(t, x)
        return (np.sin(th) + np.cos(th)) / np.pi

    def du_dt(self, t, x) -> np.ndarray:
        th = self.theta(t, x)
        return -2.0 * (np.cos(th) - np.sin(th))

    def grad(self, t, x) -> np.ndarray:
        th = self.theta(t, x)
        g = 2.0 * (np.cos(th) - np.sin(th))
        return np.broadcast_to(g[..., None], np.shape(x)).copy()

    def hess(self, t, x) -> np.ndarray:
        # every entry of the Hessian equals -4 pi (sin theta + cos theta)
        th = self.theta(t, x)
        entry = -4.0 * np.pi * (np.sin(th) + np.cos(th))
        d = self.dim
        return entry[..., None, None] * np.ones((d, d))

    def third(self, t, x) -> np.ndarray:
        # every third partial equals -8 pi^2 (cos theta - sin theta)
        th = self.theta(t, x)
        entry = -8.0 * np.pi**2 * (np.cos(th) - np.sin(th))
        d = self.dim
        return entry[..., None, None, None] * np.ones((d, d, d))

    def terminal(self, x) -> np.ndarray:
        return self.u(self.horizon, x)

    def source(self, t, x) -> np.ndarray:
        th = self.theta(t, x)
        return 2.0 * (np.cos(th) - np.sin(th))

    def driver(self, t, x, y, z) -> np.ndarray:
        """f(t, x, y, z) with z the diffusion-scaled gradient [..., d]."""
        x = np.asarray(x, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        drift, diffusion = self.coeffs()
        sig = diffusion(x)
        reaction = 2.0 * np.pi**2 * np.asarray(y) * np.sum(sig**2, axis=-1)
        transport = np.sum(drift(x) / sig * z, axis=-1)
        return reaction - transport + self.source(t, x)


@dataclass(frozen=True)
class RiccatiCurve:
    """Scalar curve k(t) sampled on a uniform grid with its derivative.

    Evaluation between nodes uses the cubic Hermite interpolant, so the
    reported derivative is exactly the interpolant's derivative.
    """

    ts: np.ndarray
    ks: np.ndarray
    kdots: np.ndarray

    def _locate(self, t):
        t = np.asarray(t, dtype=np.float64)
        t0, t1 = self.ts[0], self.ts[-1]
        if np.any(t < t0 - 1e-9) or np.any(t > t1 + 1e-9):
            raise ValueError("time outside the solved range")
        h = self.ts[1] - self.ts[0]
        idx = np.clip(((t - t0) / h).astype(np.int64), 0, self.ts.size - 2)
        s = (t - self.ts[idx]) / h
        return idx, np.clip(s, 0.0, 1.0), h

    def k(self, t) -> np.ndarray:
        idx, s, h = self._locate(t)
        k0, k1 = self.ks[idx], self.ks[idx + 1]
        d0, d1 = self.kdots[idx], self.kdots[idx + 1]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * k0 + h10 * h * d0 + h01 * k1 + h11 * h * d1

    def kdot(self, t) -> np.ndarray:
        idx, s, h = self._locate(t)
        k0, k1 = self.ks[idx], self.ks[idx + 1]
        d0, d1 = self.kdots[idx], self.kdots[idx + 1]
        g00 = (6 * s**2 - 6 * s) / h
        g10 = 3 * s**2 - 4 * s + 1
        g01 = (-6 * s**2 + 6 * s) / h
        g11 = 3 * s**2 - 2 * s
        return g00 * k0 + g10 * d0 + g01 * k1 + g11 * d1


def riccati_solve(dim: int, horizon: float = 1.0, n_steps: int = 10_000) -> RiccatiCurve:
    """Integrate the scalar curve backward from k(T) = 1/d with RK4."""
    if n_steps < 2:
        raise ValueError("n_steps must be at least 2")

    def rhs(k: float) -> float:
        return -2.0 * k - 1.0 / dim + k**2 / (dim + k)

    h = horizon / n_steps
    ks = np.empty(n_steps + 1)
    ks[n_steps] = 1.0 / dim
    k = ks[n_steps]
    for i in range(n_steps, 0, -1):
        # RK4 step of size -h
        f1 = rhs(k)
        f2 = rhs(k - 0.5 * h * f1)
        f3 = rhs(k - 0.5 * h * f2)
        f4 = rhs(k - h * f3)
        k = k - (h / 6.0) * (f1 + 2 * f2 + 2 * f3 + f4)
        ks[i - 1] = k
    ts = np.linspace(0.0, horizon, n_steps + 1)
    kdots = np.array([rhs(v) for v in ks])
    return RiccatiCurve(ts=ts, ks=ks, kdots=kdots)


@dataclass(frozen=True)
class LqSolution:
    """Linear-quadratic benchmark: u(t, x) = k(t) |x|^2."""

    dim: int = 5
    horizon: float = 1.0
    n_riccati_steps: int = 10_000

    def __post_init__(self):
        object.__setattr__(
            self, "curve", riccati_solve(self.dim, self.horizon, self.n_riccati_steps)
        )

    def coeffs(self):
        return lq_coeffs(self.dim)

    def u(self, t, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.curve.k(t) * np.sum(x * x, axis=-1)

    def du_dt(self, t, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.curve.kdot(t) * np.sum(x * x, axis=-1)

    def grad(self, t, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        k = np.asarray(self.curve.k(t))
        return 2.0 * k[..., None] * x

    def hess(self, t, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        k = np.asarray(self.curve.k(t))
        eye = np.eye(self.dim)
        return 2.0 * k[..., None, None] * eye

    def third(self, t, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        d = self.dim
        shape = np.broadcast_shapes(np.shape(t), x.shape[:-1])
        return np.zeros(shape + (d, d, d))

    def terminal(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.sum(x * x, axis=-1) / self.dim

    def driver(self, t, x, y, z) -> np.ndarray:
        """f(t, x, y, z) = -(k'/k) y - 2 y - k; z enters only through y."""
        k = self.curve.k(t)
        kdot = self.curve.kdot(t)
        return -(kdot / k) * np.asarray(y) - 2.0 * np.asarray(y) - k


def fbsde_generator(solution):
    """Driver in the forward-backward convention used for path residuals.

    Wraps a benchmark's parabolic driver f(t, x, y, sigma grad u) as

        f_gen(t, x, y, Z, Ups) = f(t, x, y, sigma(x) * Z)
                                 + b(x) . Z + (1/2) sum_i sigma_ii^2 Ups_ii

    with Z the full gradient and Ups the Hessian, so path residuals built
    from f_gen telescope to the parabolic equation along simulated paths.
    """
    drift, diffusion = solution.coeffs()

    def f_gen(t, x, y, z_grad, ups) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        z_grad = np.asarray(z_grad, dtype=np.float64)
        ups = np.asarray(ups, dtype=np.float64)
        sig = diffusion(x)
        base = solution.driver(t, x, y, sig * z_grad)
        transport = np.sum(drift(x) * z_grad, axis=-1)
        diag = np.einsum("...ii->...i", ups)
        trace = 0.5 * np.sum(sig**2 * diag, axis=-1)
        return base + transport + trace

    return f_gen
