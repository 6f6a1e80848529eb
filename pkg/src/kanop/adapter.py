"""Turn a value function into backward-equation data along simulated paths.

Given u(t, x) and an ensemble of forward paths, the adapter produces the
tuple

    Y_n = u(t_n, X_n)
    Z_n = grad u(t_n, X_n)
    Ups_n = Hessian u(t_n, X_n)
    A_n,i = (1/2) sum_jk (sigma sigma^T)_jk  d_j d_k d_i u(t_n, X_n)

with spatial derivatives taken either from closed-form methods on the value
object ("analytic") or from finite differences of u alone ("forward",
"central").  ``bsde_residual`` then scores the tuple against a driver in
the forward-backward convention:

    r_n = Y_{n+1} - Y_n
          + (f(t_n, X_n, Y_n, Z_n, Ups_n) + f0(X_n)
             - (1/2) Tr[sigma sigma^T Ups_n]) dt
          - Z_n . dX_n

Per-step residuals scale like dt (their sum along a path does not), so the
step-halving diagnostics below use the mean absolute residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sde import PathBundle

__all__ = [
    "DerivativeScheme",
    "BsdeTuple",
    "ResidualReport",
    "adapt",
    "bsde_residual",
]


@dataclass(frozen=True)
class DerivativeScheme:
    """How spatial derivatives of the value function are obtained.

    kind: "analytic" uses grad/hess/third methods of the value object;
    "central" and "forward" difference u itself with the given step.
    """

    kind: str = "analytic"
    step: float = 1e-4

    def __post_init__(self):
        if self.kind not in ("analytic", "central", "forward"):
            raise ValueError(f"unknown derivative scheme {self.kind!r}")
        if self.kind != "analytic" and not (0.0 < self.step < 0.5):
            raise ValueError("finite-difference step must lie in (0, 0.5)")


@dataclass
class BsdeTuple:
    """Adapter output along an ensemble: y [M, N+1], z [M, N+1, d],
    ups [M, N+1, d, d], and optionally a [M, N+1, d]."""

    y: np.ndarray
    z: np.ndarray
    ups: np.ndarray
    a: np.ndarray | None = None


def adapt(
    value,
    bundle: PathBundle,
    scheme: DerivativeScheme = DerivativeScheme(),
    diffusion=None,
    want_third: bool = False,
) -> BsdeTuple:
    """Evaluate the value function and its derivatives along all paths.

    ``diffusion`` (diagonal, as in ``SdeSpec``) is only needed when
    ``want_third`` is set, to contract the third derivatives into A.
    """
    states = bundle.states
    m, np1, d = states.shape
    t = np.broadcast_to(bundle.times, (m, np1))
    if want_third and diffusion is None:
        raise ValueError("want_third requires the diffusion coefficients")

    if scheme.kind == "analytic":
        y = np.asarray(value.u(t, states), dtype=np.float64)
        z = np.asarray(value.grad(t, states), dtype=np.float64)
        ups = np.asarray(value.hess(t, states), dtype=np.float64)
        a = None
        if want_third:
            third = np.asarray(value.third(t, states), dtype=np.float64)
            sig2 = np.asarray(diffusion(states), dtype=np.float64) ** 2
            a = 0.5 * np.einsum("...jji,...j->...i", third, sig2)
        return BsdeTuple(y=y, z=z, ups=ups, a=a)

    if scheme.kind == "forward" and want_third:
        raise ValueError("third derivatives need the analytic or central scheme")
    return _adapt_fd(value, t, states, scheme, diffusion, want_third)


def _adapt_fd(value, t, states, scheme, diffusion, want_third) -> BsdeTuple:
    m, np1, d = states.shape
    h = scheme.step
    flat_x = states.reshape(-1, d)
    flat_t = t.reshape(-1)
    q = flat_x.shape[0]

    # enumerate stencil offsets once; evaluate u in a single batched call
    offsets = [np.zeros(d)]
    index = {(): 0}

    def add(vec, key):
        if key not in index:
            index[key] = len(offsets)
            offsets.append(vec)
        return index[key]

    for i in range(d):
        e = np.eye(d)[i]
        add(e, (("+", i),))
        if scheme.kind == "central":
            add(-e, (("-", i),))
            if want_third:
                add(2 * e, (("2+", i),))
                add(-2 * e, (("2-", i),))
        else:
            add(2 * e, (("2+", i),))
    for i in range(d):
        for j in range(i + 1, d):
            ei, ej = np.eye(d)[i], np.eye(d)[j]
            add(ei + ej, (("+", i), ("+", j)))
            if scheme.kind == "central":
                add(ei - ej, (("+", i), ("-", j)))
                add(-ei + ej, (("-", i), ("+", j)))
                add(-ei - ej, (("-", i), ("-", j)))

    k = len(offsets)
    pts = flat_x[None, :, :] + h * np.stack(offsets)[:, None, :]
    ts = np.broadcast_to(flat_t, (k, q))
    vals = np.asarray(value.u(ts.reshape(-1), pts.reshape(-1, d)), dtype=np.float64)
    vals = vals.reshape(k, q)

    def at(key):
        return vals[index[key]]

    u0 = vals[0]
    z = np.empty((q, d))
    ups = np.empty((q, d, d))
    if scheme.kind == "central":
        for i in range(d):
            up, um = at((("+", i),)), at((("-", i),))
            z[:, i] = (up - um) / (2 * h)
            ups[:, i, i] = (up - 2 * u0 + um) / h**2
        for i in range(d):
            for j in range(i + 1, d):
                cross = (
                    at((("+", i), ("+", j)))
                    - at((("+", i), ("-", j)))
                    - at((("-", i), ("+", j)))
                    + at((("-", i), ("-", j)))
                ) / (4 * h**2)
                ups[:, i, j] = cross
                ups[:, j, i] = cross
    else:
        for i in range(d):
            up, u2p = at((("+", i),)), at((("2+", i),))
            z[:, i] = (up - u0) / h
            ups[:, i, i] = (u2p - 2 * up + u0) / h**2
        for i in range(d):
            for j in range(i + 1, d):
                cross = (
                    at((("+", i), ("+", j))) - at((("+", i),)) - at((("+", j),)) + u0
                ) / h**2
                ups[:, i, j] = cross
                ups[:, j, i] = cross

    a = None
    if want_third:
        # A_i = (1/2) sum_j sigma_jj^2 d_i d_jj u, by differencing the
        # second-difference stencil in the i-th direction

        def key2(si, i, sj, j):
            return ((si, i), (sj, j)) if i < j else ((sj, j), (si, i))

        sig2 = np.asarray(diffusion(flat_x), dtype=np.float64) ** 2
        a = np.zeros((q, d))
        for i in range(d):
            acc = np.zeros(q)
            for j in range(d):
                if j == i:
                    s_plus = (at((("2+", i),)) - 2 * at((("+", i),)) + u0) / h**2
                    s_minus = (at((("2-", i),)) - 2 * at((("-", i),)) + u0) / h**2
                else:
                    s_plus = (
                        at(key2("+", i, "+", j))
                        - 2 * at((("+", i),))
                        + at(key2("+", i, "-", j))
                    ) / h**2
                    s_minus = (
                        at(key2("-", i, "+", j))
                        - 2 * at((("-", i),))
                        + at(key2("-", i, "-", j))
                    ) / h**2
                acc += sig2[:, j] * (s_plus - s_minus) / (2 * h)
            a[:, i] = 0.5 * acc
        a = a.reshape(m, np1, d)

    return BsdeTuple(
        y=u0.reshape(m, np1),
        z=z.reshape(m, np1, d),
        ups=ups.reshape(m, np1, d, d),
        a=a,
    )


@dataclass
class ResidualReport:
    """Path-residual summary.  ``residuals`` is [M, N] with invalid steps
    masked to zero; scalar statistics aggregate over valid steps only."""

    residuals: np.ndarray
    valid: np.ndarray
    mean_abs: float
    rms: float
    total_abs: float
    terminal_gaps: np.ndarray | None = None

    @property
    def terminal_gap(self) -> float:
        if self.terminal_gaps is None:
            return np.nan
        return float(np.mean(self.terminal_gaps))


def bsde_residual(
    tup: BsdeTuple,
    bundle: PathBundle,
    f_gen,
    diffusion,
    f0=None,
    terminal=None,
    valid_steps: np.ndarray | None = None,
) -> ResidualReport:
    """Score a tuple against a driver along the simulated ensemble.

    ``valid_steps`` limits each path to its first so-many steps (e.g. the
    bundle's exit indices); statistics then ignore masked entries.
    ``total_abs`` is the per-path sum of |r_n| averaged over paths; it stays
    O(1) under step halving while ``mean_abs`` scales like dt.
    """
    states = bundle.states
    m, np1, d = states.shape
    n = np1 - 1
    dt = bundle.dt
    tn = bundle.times[:-1]
    xn = states[:, :-1, :]
    dx = np.diff(states, axis=1)
    yn, yn1 = tup.y[:, :-1], tup.y[:, 1:]
    zn = tup.z[:, :-1, :]
    un = tup.ups[:, :-1, :, :]

    f_vals = np.asarray(f_gen(tn, xn, yn, zn, un), dtype=np.float64)
    sig = np.asarray(diffusion(xn), dtype=np.float64)
    trace = 0.5 * np.sum(sig**2 * np.einsum("...ii->...i", un), axis=-1)
    f0_vals = 0.0 if f0 is None else np.asarray(f0(xn), dtype=np.float64)
    r = yn1 - yn + (f_vals + f0_vals - trace) * dt - np.sum(zn * dx, axis=-1)

    if valid_steps is None:
        valid = np.ones((m, n), dtype=bool)
        last = np.full(m, n, dtype=np.int64)
    else:
        last = np.asarray(valid_steps, dtype=np.int64)
        valid = np.arange(n)[None, :] < last[:, None]
    r = np.where(valid, r, 0.0)
    count = max(int(valid.sum()), 1)
    mean_abs = float(np.abs(r).sum() / count)
    rms = float(np.sqrt((r**2).sum() / count))
    total_abs = float(np.abs(r).sum(axis=1).mean())

    gaps = None
    if terminal is not None:
        x_last = states[np.arange(m), last, :]
        y_last = tup.y[np.arange(m), last]
        gaps = np.abs(y_last - np.asarray(terminal(x_last), dtype=np.float64))

    return ResidualReport(
        residuals=r,
        valid=valid,
        mean_abs=mean_abs,
        rms=rms,
        total_abs=total_abs,
        terminal_gaps=gaps,
    )
