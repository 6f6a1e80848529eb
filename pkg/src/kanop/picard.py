"""Classical Green-kernel fixed-point solver for semilinear elliptic problems.

The integral form solved here is

    T(u)(x) = integral G(x, y) (fnl(y, u(y)) - f0(y)) dy + w_g(x)

iterated from u = 0.  On a ball of radius delta (in the grid norm) around
zero the map contracts with an empirically measured ratio rho, and

    J = ceil(log(1/eps) / log(1/rho))

iterations bring the fixed-point residual below eps.  Everything is plain
numpy on quadrature grids; this module is the independent oracle the learned
operator is compared against.

Toy domains: the unit interval with the closed-form kernel
G(x, y) = min(x, y) - x y for the second-derivative operator, and the unit
ball in three dimensions with the Newtonian image-method kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded

__all__ = [
    "PicardError",
    "SolverError",
    "ContractionError",
    "GreenKernel",
    "SemilinearProblem",
    "PicardState",
    "interval_kernel",
    "ball_kernel",
    "boundary_extension",
    "grid_norm",
    "apply_T",
    "measure_contraction",
    "picard_solve",
]


class PicardError(Exception):
    """Base class for solver errors."""


class SolverError(PicardError):
    """Linear system could not be solved (singular or unsupported)."""


class ContractionError(PicardError):
    """Fixed-point iteration failed to contract; carries diagnostics."""

    def __init__(self, message: str, step_norms: Sequence[float]):
        super().__init__(message)
        self.step_norms = list(step_norms)


@dataclass
class GreenKernel:
    """Quadrature-ready Green kernel on a toy domain.

    ``matrix[i, j]`` holds G(x_i, y_j) * w_j with the diagonal cell replaced
    by the closed-form integral of the kernel's singular factor over an
    equal-volume cell times its regular part, so a matrix-vector product is
    the quadrature of integral G(x_i, y) v(y) dy.
    """

    domain: str  # "interval" | "ball"
    nodes: np.ndarray  # [n, dim]
    weights: np.ndarray  # [n]
    matrix: np.ndarray  # [n, n], weights folded in
    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    bound_constant: float  # C0 in |G^(beta)| <= C0 |x-y|^(1-d)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]


def _interval_green(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """G(x, y) = x (1 - y) for x <= y, else y (1 - x)."""
    return np.minimum(x, y) - x * y


def interval_kernel(n_nodes: int) -> GreenKernel:
    """Uniform-grid kernel on [0, 1] with split-at-the-kink trapezoid weights.

    Because every evaluation point is a quadrature node, the composite
    trapezoid rule automatically splits the integral at the kernel's kink,
    so the quadrature converges at second order.
    """
    if n_nodes < 3:
        raise SolverError("need at least 3 interval nodes")
    xs = np.linspace(0.0, 1.0, n_nodes)
    h = xs[1] - xs[0]
    w = np.full(n_nodes, h)
    w[0] = w[-1] = h / 2.0
    mat = _interval_green(xs[:, None], xs[None, :]) * w[None, :]
    return GreenKernel(
        domain="interval",
        nodes=xs[:, None],
        weights=w,
        matrix=mat,
        evaluate=lambda x, y: _interval_green(np.asarray(x)[..., 0], np.asarray(y)[..., 0])
        if np.asarray(x).ndim > 1
        else _interval_green(np.asarray(x), np.asarray(y)),
        bound_constant=1.0,
    )


def _ball_green(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Unit-ball kernel by the image method, vectorized over rows."""
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    diff = np.linalg.norm(x - y, axis=-1)
    ry = np.linalg.norm(y, axis=-1)
    # |y| |x - y/|y|^2| is symmetric in (x, y) and never vanishes inside
    with np.errstate(divide="ignore", invalid="ignore"):
        image = np.where(
            ry > 0.0,
            np.linalg.norm(ry[..., None] ** 2 * x - y, axis=-1) / np.maximum(ry, 1e-300),
            1.0,
        )
        out = (1.0 / (4.0 * np.pi)) * (1.0 / diff - 1.0 / image)
    return out


def ball_kernel(cells_per_axis: int) -> GreenKernel:
    """Cartesian cell-center quadrature over the unit ball (3D).

    The diagonal entry integrates the Newtonian 1/(4 pi r) factor in closed
    form over the ball of the same volume as one cell (giving R_eq^2 / 2)
    and multiplies the smooth image factor by the cell volume.
    """
    if cells_per_axis < 4:
        raise SolverError("need at least 4 cells per axis")
    h = 2.0 / cells_per_axis
    centers = -1.0 + h * (np.arange(cells_per_axis) + 0.5)
    gx, gy, gz = np.meshgrid(centers, centers, centers, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    inside = np.linalg.norm(pts, axis=1) < 1.0 - 1e-12
    nodes = pts[inside]
    n = nodes.shape[0]
    w = np.full(n, h**3)
    mat = _ball_green(nodes[:, None, :], nodes[None, :, :]) * w[None, :]
    # diagonal: closed-form Newtonian part + regular image part
    r_eq = (3.0 * h**3 / (4.0 * np.pi)) ** (1.0 / 3.0)
    ry = np.linalg.norm(nodes, axis=1)
    image_diag = np.where(ry > 0.0, 1.0 / np.abs(1.0 - ry**2), 1.0)
    np.fill_diagonal(mat, r_eq**2 / 2.0 - (1.0 / (4.0 * np.pi)) * image_diag * h**3)
    return GreenKernel(
        domain="ball",
        nodes=nodes,
        weights=w,
        matrix=mat,
        evaluate=_ball_green,
        bound_constant=2.0 / (4.0 * np.pi),
    )


# ---------------------------------------------------------------------------
# boundary extension
# ---------------------------------------------------------------------------


def boundary_extension(
    kernel: GreenKernel,
    g,
    gamma: Callable | float = 1.0,
    mu: Callable | float = 0.0,
    lam: Callable | float = 0.0,
) -> np.ndarray:
    """Harmonic-type extension of boundary data onto the quadrature nodes.

    Interval: solves -(gamma w')' + mu w' + lam w = 0 with Dirichlet data
    g = (g(0), g(1)) by central finite differences (tridiagonal solve).
    Ball: evaluates the exact Poisson-kernel integral of ``g`` over the
    sphere; only the Laplace coefficients (gamma=1, mu=0, lam=0) are
    supported there, matching the image-method kernel.
    """
    if kernel.domain == "interval":
        return _interval_extension(kernel, g, gamma, mu, lam)
    if kernel.domain == "ball":
        if callable(gamma) or callable(mu) or callable(lam) or (
            (gamma, mu, lam) != (1.0, 0.0, 0.0)
        ):
            raise SolverError("ball extension supports the Laplace coefficients only")
        return _ball_extension(kernel, g)
    raise SolverError(f"unknown domain {kernel.domain!r}")


def _as_fun(c) -> Callable[[np.ndarray], np.ndarray]:
    if callable(c):
        return c
    return lambda x: np.full_like(np.asarray(x, dtype=np.float64), float(c))


def _interval_extension(kernel, g, gamma, mu, lam) -> np.ndarray:
    xs = kernel.nodes[:, 0]
    n = xs.size
    h = xs[1] - xs[0]
    if callable(g):
        g0, g1 = float(g(0.0)), float(g(1.0))
    else:
        g0, g1 = (float(g[0]), float(g[1]))
    gam = _as_fun(gamma)
    muf = _as_fun(mu)
    laf = _as_fun(lam)
    gam_half_up = gam(xs[1:-1] + h / 2.0)
    gam_half_dn = gam(xs[1:-1] - h / 2.0)
    mu_mid = muf(xs[1:-1])
    lam_mid = laf(xs[1:-1])

    lower = -gam_half_dn / h**2 - mu_mid / (2.0 * h)
    diag = (gam_half_up + gam_half_dn) / h**2 + lam_mid
    upper = -gam_half_up / h**2 + mu_mid / (2.0 * h)

    rhs = np.zeros(n - 2)
    rhs[0] -= lower[0] * g0
    rhs[-1] -= upper[-1] * g1

    banded = np.zeros((3, n - 2))
    banded[0, 1:] = upper[:-1]
    banded[1, :] = diag
    banded[2, :-1] = lower[1:]
    if np.any(np.abs(diag) < 1e-300):
        raise SolverError("boundary extension system is singular")
    try:
        interior = solve_banded((1, 1), banded, rhs)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy raises rarely
        raise SolverError("boundary extension system is singular") from exc
    if not np.all(np.isfinite(interior)):
        raise SolverError("boundary extension system is singular")
    out = np.empty(n)
    out[0], out[-1] = g0, g1
    out[1:-1] = interior
    return out


def _ball_extension(kernel, g, n_theta: int = 128, n_phi: int = 256) -> np.ndarray:
    """Poisson integral w(x) = int P(x, xi) g(xi) dS over the unit sphere."""
    theta = (np.arange(n_theta) + 0.5) * np.pi / n_theta
    phi = (np.arange(n_phi) + 0.5) * 2.0 * np.pi / n_phi
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    xi = np.stack(
        [np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1
    ).reshape(-1, 3)
    ds = (np.sin(th) * (np.pi / n_theta) * (2.0 * np.pi / n_phi)).ravel()
    weighted = np.asarray(g(xi), dtype=np.float64) * ds
    x = kernel.nodes
    r2 = np.sum(x * x, axis=1)
    out = np.empty(x.shape[0])
    for start in range(0, x.shape[0], 128):
        chunk = slice(start, start + 128)
        diff = np.linalg.norm(x[chunk, None, :] - xi[None, :, :], axis=-1)
        poisson = (1.0 - r2[chunk, None]) / (4.0 * np.pi * diff**3)
        out[chunk] = poisson @ weighted
    return out


# ---------------------------------------------------------------------------
# fixed-point machinery
# ---------------------------------------------------------------------------


@dataclass
class SemilinearProblem:
    """Data of the integral fixed point: kernel, nonlinearity, forcing,
    boundary field, and the admissible-ball radius delta."""

    kernel: GreenKernel
    fnl: Callable[[np.ndarray, np.ndarray], np.ndarray]  # fnl(y, u(y))
    f0: np.ndarray  # forcing sampled on the nodes
    wg: np.ndarray  # boundary extension sampled on the nodes
    delta: float

    def __post_init__(self) -> None:
        n = self.kernel.n_nodes
        self.f0 = np.broadcast_to(np.asarray(self.f0, dtype=np.float64), (n,)).copy()
        self.wg = np.broadcast_to(np.asarray(self.wg, dtype=np.float64), (n,)).copy()
        if self.delta <= 0.0:
            raise PicardError("delta must be positive")


@dataclass
class PicardState:
    """Convergence log of one Picard run."""

    u: np.ndarray
    iterations: int
    rho: float
    eps: float
    step_norms: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    residual: float = np.nan


def grid_norm(kernel: GreenKernel, u: np.ndarray) -> float:
    """Sup norm plus the largest finite-difference gradient magnitude.

    Stands in for the W^{1,inf} norm on the quadrature grid.  On the ball
    the scattered grid has no natural difference stencil, so the value part
    alone is used there.
    """
    u = np.asarray(u, dtype=np.float64)
    peak = float(np.max(np.abs(u)))
    if kernel.domain != "interval":
        return peak
    xs = kernel.nodes[:, 0]
    grad = np.gradient(u, xs)
    return peak + float(np.max(np.abs(grad)))


def apply_T(problem: SemilinearProblem, u: np.ndarray) -> np.ndarray:
    """One application of the integral map T."""
    u = np.asarray(u, dtype=np.float64)
    ys = problem.kernel.nodes
    density = problem.fnl(ys, u) - problem.f0
    return problem.kernel.matrix @ density + problem.wg


def measure_contraction(
    problem: SemilinearProblem,
    n_pairs: int = 100,
    rng: np.random.Generator | None = None,
) -> float:
    """Empirical Lipschitz ratio of T over random admissible pairs.

    Pairs are smooth random fields inside the ball of radius delta; the
    returned value is the largest observed ratio
    ||T(u) - T(v)|| / ||u - v|| in the grid norm.
    """
    rng = rng or np.random.default_rng(0)
    kernel = problem.kernel
    xs = kernel.nodes
    worst = 0.0
    for _ in range(n_pairs):
        u = _random_admissible(kernel, problem.delta, rng)
        v = _random_admissible(kernel, problem.delta, rng)
        du = grid_norm(kernel, u - v)
        if du < 1e-12:
            continue
        dT = grid_norm(kernel, apply_T(problem, u) - apply_T(problem, v))
        worst = max(worst, dT / du)
    return worst


def _random_admissible(kernel: GreenKernel, delta: float, rng) -> np.ndarray:
    """Random smooth field with grid norm at most delta."""
    xs = kernel.nodes
    if kernel.domain == "interval":
        t = xs[:, 0]
        u = np.zeros_like(t)
        for k in range(1, 4):
            u += rng.normal() * np.sin(np.pi * k * t) / k**2
    else:
        coef = rng.normal(size=3)
        u = np.cos(xs @ coef)
    norm = grid_norm(kernel, u)
    if norm < 1e-12:
        return np.zeros_like(u)
    return u * (rng.uniform(0.2, 1.0) * delta / norm)


def picard_solve(
    problem: SemilinearProblem,
    eps: float,
    rho: float | None = None,
    rng: np.random.Generator | None = None,
) -> PicardState:
    """Iterate T from zero for J = ceil(log(1/eps) / log(1/rho)) steps.

    ``rho`` defaults to the empirically measured contraction ratio.  Raises
    ``ContractionError`` with the step-norm history if the iteration stops
    contracting (sustained ratio >= 1) or leaves the admissible ball by a
    wide margin.
    """
    if not (0.0 < eps < 1.0):
        raise PicardError("eps must lie in (0, 1)")
    if rho is None:
        rho = measure_contraction(problem, rng=rng)
    if not (0.0 < rho < 1.0):
        raise ContractionError(
            f"measured contraction ratio {rho:.3f} is not below one", []
        )
    J = int(np.ceil(np.log(1.0 / eps) / np.log(1.0 / rho)))
    J = max(J, 1)
    kernel = problem.kernel
    u = np.zeros(kernel.n_nodes)
    state = PicardState(u=u, iterations=J, rho=rho, eps=eps)
    grow_streak = 0
    for _ in range(J):
        nxt = apply_T(problem, u)
        step = grid_norm(kernel, nxt - u)
        if state.step_norms:
            ratio = step / max(state.step_norms[-1], 1e-300)
            state.ratios.append(ratio)
            grow_streak = grow_streak + 1 if ratio >= 1.0 else 0
        state.step_norms.append(step)
        u = nxt
        if grow_streak >= 3 or not np.isfinite(step) or (
            grid_norm(kernel, u) > 20.0 * problem.delta
        ):
            raise ContractionError(
                "Picard iteration is diverging", state.step_norms
            )
    state.u = u
    state.residual = grid_norm(kernel, apply_T(problem, u) - u)
    return state
