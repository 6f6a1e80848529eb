"""Euler-Maruyama simulation of diagonal-noise diffusions.

Paths follow

    X_{n+1} = X_n + b(X_n) dt + sigma(X_n) * sqrt(dt) * xi_n

with xi_n standard normal and sigma returning the diagonal of the diffusion
matrix.  Each path draws its noise from a counter-based Philox stream keyed
by seed XOR path index, so path p is byte-identical no matter how many
paths are simulated alongside it.

Boundary exits are recorded (first step at which the state leaves the open
box), but simulation always continues to the final step; consumers decide
what to do with post-exit states.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "SdeSpec",
    "PathBundle",
    "simulate",
    "periodic_coeffs",
    "lq_coeffs",
]


@dataclass(frozen=True)
class SdeSpec:
    """Coefficients and discretization of one simulation run."""

    dim: int
    drift: Callable[[np.ndarray], np.ndarray]  # [..., d] -> [..., d]
    diffusion: Callable[[np.ndarray], np.ndarray]  # [..., d] -> diagonal [..., d]
    x0: np.ndarray  # [d]
    horizon: float
    n_steps: int
    domain: tuple[np.ndarray, np.ndarray] | None = None  # open box (lo, hi)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "x0", np.asarray(self.x0, dtype=np.float64).reshape(self.dim)
        )
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.domain is not None:
            lo = np.asarray(self.domain[0], dtype=np.float64).reshape(self.dim)
            hi = np.asarray(self.domain[1], dtype=np.float64).reshape(self.dim)
            if np.any(lo >= hi):
                raise ValueError("domain box is empty")
            object.__setattr__(self, "domain", (lo, hi))


@dataclass
class PathBundle:
    """Simulated ensemble: times [N+1], states [M, N+1, d], Brownian
    increments [M, N, d], first-exit step per path (N when no exit)."""

    times: np.ndarray
    states: np.ndarray
    increments: np.ndarray
    exit_index: np.ndarray
    seed: int

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def _path_noise(seed: int, n_paths: int, n_steps: int, dim: int) -> np.ndarray:
    out = np.empty((n_paths, n_steps, dim))
    for p in range(n_paths):
        gen = np.random.Generator(np.random.Philox(key=np.uint64(seed) ^ np.uint64(p)))
        out[p] = gen.standard_normal((n_steps, dim))
    return out


def simulate(spec: SdeSpec, n_paths: int, seed: int) -> PathBundle:
    """Simulate ``n_paths`` Euler-Maruyama paths."""
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    n, d = spec.n_steps, spec.dim
    dt = spec.horizon / n
    sq = np.sqrt(dt)
    noise = _path_noise(seed, n_paths, n, d)
    states = np.empty((n_paths, n + 1, d))
    states[:, 0, :] = spec.x0
    x = np.broadcast_to(spec.x0, (n_paths, d)).copy()
    for step in range(n):
        x = x + spec.drift(x) * dt + spec.diffusion(x) * sq * noise[:, step, :]
        states[:, step + 1, :] = x
    times = np.linspace(0.0, spec.horizon, n + 1)

    if spec.domain is None:
        exit_index = np.full(n_paths, n, dtype=np.int64)
    else:
        lo, hi = spec.domain
        outside = np.any((states <= lo) | (states >= hi), axis=2)  # [M, N+1]
        any_exit = outside.any(axis=1)
        first = outside.argmax(axis=1)
        exit_index = np.where(any_exit, first, n).astype(np.int64)

    return PathBundle(
        times=times,
        states=states,
        increments=noise * sq,
        exit_index=exit_index,
        seed=seed,
    )


def periodic_coeffs(dim: int):
    """Coefficients of the periodic benchmark diffusion.

    drift_i(x) = 0.2 sin(2 pi x_i)
    sigma_ii(x) = (0.25 + 0.1 cos(2 pi x_i)) / (sqrt(d) pi)
    """

    def drift(x: np.ndarray) -> np.ndarray:
        return 0.2 * np.sin(2.0 * np.pi * x)

    def diffusion(x: np.ndarray) -> np.ndarray:
        return (0.25 + 0.1 * np.cos(2.0 * np.pi * x)) / (np.sqrt(dim) * np.pi)

    return drift, diffusion


def lq_coeffs(dim: int):
    """Coefficients of the linear-quadratic benchmark: drift x, constant
    isotropic diffusion with diagonal 1/sqrt(d)."""

    def drift(x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64)

    def diffusion(x: np.ndarray) -> np.ndarray:
        return np.full_like(np.asarray(x, dtype=np.float64), 1.0 / np.sqrt(dim))

    return drift, diffusion
