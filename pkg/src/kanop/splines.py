"""Cardinal B-splines, compactly supported wavelet pairs, and the trainable
spline-plus-wavelet activation built from them.

The activation applied inside every network layer is

    sigma(x) = beta[-1] * father(x) + beta[0] * mother(x)
               + sum_{i=1..I} beta[i] * N_i(x)

where N_i is the cardinal B-spline of order i supported on [0, i+1] and
(father, mother) is an orthogonal refinable pair (Haar in closed form, or a
Daubechies pair tabulated by the refinement cascade).  A sparsity floor
forces beta[i] = 0 for 1 <= i < ceil(alpha), which keeps every active
B-spline term at least C^{alpha-1}.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, factorial
from typing import Callable

import numpy as np

from .autodiff import Tensor, as_tensor, custom_op

__all__ = [
    "SplineError",
    "bspline_eval",
    "bspline_deriv",
    "bspline_basis",
    "WaveletPair",
    "haar_pair",
    "daubechies_filter",
    "daubechies_pair",
    "SplineActivation",
    "activation_eval",
]


class SplineError(Exception):
    """Raised for invalid orders, filters, or sparsity violations."""


# ---------------------------------------------------------------------------
# cardinal B-splines (Michelli's truncated-power form)
# ---------------------------------------------------------------------------


def bspline_eval(order: int, x) -> np.ndarray:
    """Cardinal B-spline N_order at ``x`` (vectorized, support [0, order+1]).

    Order 0 is the unit indicator of [0, 1); order I >= 1 uses

        N_I(x) = sum_{j=0}^{I+1} (-1)^j C(I+1, j) / I! * relu(x - j)^I
    """
    order = int(order)
    x = np.asarray(x, dtype=np.float64)
    if order < 0:
        raise SplineError(f"B-spline order must be >= 0, got {order}")
    if order == 0:
        return ((x >= 0.0) & (x < 1.0)).astype(np.float64)
    out = np.zeros_like(x)
    inv_fact = 1.0 / factorial(order)
    for j in range(order + 2):
        r = np.maximum(x - j, 0.0)
        out += ((-1.0) ** j) * comb(order + 1, j) * inv_fact * r**order
    # clip roundoff outside the support
    out[(x <= 0.0) | (x >= order + 1)] = 0.0
    return out


def bspline_deriv(order: int, x) -> np.ndarray:
    """d/dx N_order, equal to N_{order-1}(x) - N_{order-1}(x - 1) for order >= 1."""
    order = int(order)
    if order < 1:
        raise SplineError("derivative defined for order >= 1")
    x = np.asarray(x, dtype=np.float64)
    return bspline_eval(order - 1, x) - bspline_eval(order - 1, x - 1.0)


def bspline_basis(max_order: int, x) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of N_1..N_max_order stacked on a new last axis.

    Computed with the order-raising recurrence

        N_i(x) = (x N_{i-1}(x) + (i+1-x) N_{i-1}(x-1)) / i

    over a pyramid of shifted copies, so one call produces every order (and,
    since dN_i = N_{i-1}(x) - N_{i-1}(x-1), every derivative) without the
    per-order power sums of ``bspline_eval``.
    """
    if max_order < 1:
        raise SplineError("basis needs max_order >= 1")
    x = np.asarray(x, dtype=np.float64)
    vals = np.empty(x.shape + (max_order,), dtype=np.float64)
    ders = np.empty_like(vals)
    level = [
        ((x >= j) & (x < j + 1.0)).astype(np.float64) for j in range(max_order + 1)
    ]
    for i in range(1, max_order + 1):
        ders[..., i - 1] = level[0] - level[1]
        nxt = []
        for j in range(max_order + 1 - i):
            xj = x - j
            nxt.append((xj * level[j] + (i + 1.0 - xj) * level[j + 1]) / i)
        vals[..., i - 1] = nxt[0]
        level = nxt
    return vals, ders


# ---------------------------------------------------------------------------
# wavelet pairs
# ---------------------------------------------------------------------------


@dataclass
class WaveletPair:
    """Orthogonal refinable pair: father (scaling) and mother wavelet.

    ``filters`` holds the low-pass taps h_0..h_{n-1} with sum sqrt(2) and
    shift-orthonormal rows; the father satisfies the refinement identity
    father(x) = sqrt(2) * sum_k h_k father(2x - k) and the mother is
    mother(x) = sqrt(2) * sum_k (-1)^k h_{1-k} father(2x - k).
    """

    kind: str
    filters: np.ndarray
    father: Callable[[np.ndarray], np.ndarray]
    mother: Callable[[np.ndarray], np.ndarray]
    father_deriv: Callable[[np.ndarray], np.ndarray]
    mother_deriv: Callable[[np.ndarray], np.ndarray]
    father_support: tuple[float, float]
    mother_support: tuple[float, float]
    table_depth: int | None = None

    def __post_init__(self) -> None:
        h = np.asarray(self.filters, dtype=np.float64)
        if h.ndim != 1 or h.size < 2 or h.size % 2 != 0:
            raise SplineError(f"filter length must be even and >= 2, got {h.shape}")
        if abs(h.sum() - np.sqrt(2.0)) > 1e-8:
            raise SplineError("filter taps must sum to sqrt(2)")
        for shift in range(2, h.size, 2):
            if abs(np.dot(h[shift:], h[:-shift])) > 1e-8:
                raise SplineError(f"filter fails shift-{shift} orthogonality")
        if abs(np.dot(h, h) - 1.0) > 1e-8:
            raise SplineError("filter taps must have unit energy")
        self.filters = h


def haar_pair() -> WaveletPair:
    """Closed-form Haar pair: indicator father, square-wave mother."""
    inv = 1.0 / np.sqrt(2.0)

    def father(x):
        x = np.asarray(x, dtype=np.float64)
        return ((x >= 0.0) & (x < 1.0)).astype(np.float64)

    def mother(x):
        x = np.asarray(x, dtype=np.float64)
        up = (x >= 0.0) & (x < 0.5)
        down = (x >= 0.5) & (x < 1.0)
        return up.astype(np.float64) - down.astype(np.float64)

    def zero(x):
        return np.zeros_like(np.asarray(x, dtype=np.float64))

    return WaveletPair(
        kind="haar",
        filters=np.array([inv, inv]),
        father=father,
        mother=mother,
        father_deriv=zero,
        mother_deriv=zero,
        father_support=(0.0, 1.0),
        mother_support=(0.0, 1.0),
    )


def daubechies_filter(n_moments: int) -> np.ndarray:
    """Minimal-phase Daubechies low-pass taps with ``n_moments`` vanishing
    moments (2*n_moments taps), by spectral factorization of the binomial
    half-band polynomial.  Normalized so the taps sum to sqrt(2).
    """
    n = int(n_moments)
    if n < 1:
        raise SplineError("need at least one vanishing moment")
    if n == 1:
        return haar_pair().filters
    if n > 14:
        raise SplineError("spectral factorization is unreliable beyond 14 moments")
    # P(y) = sum_k C(n-1+k, k) y^k, then q(z) = z^{n-1} P(y(z)) with
    # y(z) z = (-z^2 + 2z - 1)/4; roots of q pair up as (r, 1/r).
    y_poly = np.array([-0.25, 0.5, -0.25])
    q = np.zeros(2 * n - 1)
    for k in range(n):
        c_k = comb(n - 1 + k, k)
        term = np.array([1.0])
        for _ in range(k):
            term = np.convolve(term, y_poly)
        padded = np.zeros(2 * n - 1)
        lo = (n - 1) - k
        padded[lo : lo + term.size] = term
        q += c_k * padded
    roots = np.roots(q)
    inside = roots[np.abs(roots) < 1.0]
    if inside.size != n - 1:
        raise SplineError("root selection failed; unexpected factorization")
    factor = np.array([1.0 + 0.0j])
    for r in inside:
        factor = np.convolve(factor, np.array([1.0, -r]))
    half = np.array([0.5, 0.5])
    h = np.array([1.0])
    for _ in range(n):
        h = np.convolve(h, half)
    h = np.convolve(h, factor.real)
    h = h * (np.sqrt(2.0) / h.sum())
    return h


def _cascade_table(h: np.ndarray, depth: int) -> np.ndarray:
    """Father values on the dyadic grid i / 2**depth over [0, n-1].

    Starts from the exact integer values (eigenvector of the two-scale
    transition matrix at eigenvalue 1) and applies the refinement identity
    once per level, so every tabulated value is exact up to roundoff.
    """
    n = h.size
    root2 = np.sqrt(2.0)
    # integer values: phi(m) = sqrt(2) sum_l h_{2m-l} phi(l), phi(0)=phi(n-1)=0
    interior = np.arange(1, n - 1)
    trans = np.zeros((n - 2, n - 2))
    for a, m in enumerate(interior):
        for b, l in enumerate(interior):
            k = 2 * m - l
            if 0 <= k < n:
                trans[a, b] = root2 * h[k]
    w, v = np.linalg.eig(trans)
    idx = int(np.argmin(np.abs(w - 1.0)))
    phi_int = np.zeros(n)
    phi_int[1 : n - 1] = v[:, idx].real
    phi_int /= phi_int.sum()

    table = phi_int
    for level in range(depth):
        step = 2**level
        fine = np.zeros((n - 1) * 2 * step + 1)
        idx_fine = np.arange(fine.size)
        for k in range(n):
            # 2 * (i / 2^{level+1}) - k sits on the coarse grid at i - k*step
            src = idx_fine - k * step
            ok = (src >= 0) & (src <= (n - 1) * step)
            fine[ok] += root2 * h[k] * table[src[ok]]
        table = fine
    return table


class _TableFun:
    """C^1 evaluation of a dyadic table by Catmull-Rom interpolation.

    Values outside the support are zero; the reported derivative is the
    interpolant's own, so tape gradients match finite differences of the
    evaluated function.
    """

    def __init__(self, table: np.ndarray, lo: float, step: float):
        self.table = np.concatenate([[0.0, 0.0], table, [0.0, 0.0]])
        self.lo = lo
        self.step = step
        self.n = table.size

    def _eval(self, x, want_deriv: bool):
        x = np.asarray(x, dtype=np.float64)
        u = (x - self.lo) / self.step
        i = np.floor(u).astype(np.int64)
        t = u - i
        inside = (i >= -1) & (i <= self.n - 1)
        i_c = np.clip(i, -1, self.n - 1)
        base = i_c + 2  # account for the zero padding
        p0 = self.table[base - 1]
        p1 = self.table[base]
        p2 = self.table[base + 1]
        p3 = self.table[base + 2]
        a = -p0 + 3.0 * p1 - 3.0 * p2 + p3
        b = 2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3
        c = -p0 + p2
        if want_deriv:
            out = 0.5 * (c + t * (2.0 * b + 3.0 * t * a)) / self.step
        else:
            out = 0.5 * (2.0 * p1 + t * (c + t * (b + t * a)))
        return np.where(inside, out, 0.0)

    def value(self, x):
        return self._eval(x, want_deriv=False)

    def deriv(self, x):
        return self._eval(x, want_deriv=True)


def daubechies_pair(n_moments: int, depth: int = 12) -> WaveletPair:
    """Daubechies pair tabulated by the refinement cascade at dyadic ``depth``."""
    if n_moments == 1:
        return haar_pair()
    h = daubechies_filter(n_moments)
    n = h.size
    father_tab = _cascade_table(h, depth)
    step = 0.5**depth

    # mother(x) = sqrt(2) sum_k (-1)^k h_{1-k} father(2x - k), k = 2-n .. 1
    mother_lo = 1.0 - n / 2.0
    m_pts = (n - 1) * 2**depth + 1
    xs = mother_lo + step * np.arange(m_pts)
    mother_tab = np.zeros(m_pts)
    root2 = np.sqrt(2.0)
    for k in range(2 - n, 2):
        g = ((-1.0) ** k) * h[1 - k]
        arg = 2.0 * xs - k
        idx = np.rint(arg / step).astype(np.int64)
        ok = (idx >= 0) & (idx < father_tab.size)
        contrib = np.zeros(m_pts)
        contrib[ok] = father_tab[idx[ok]]
        mother_tab += root2 * g * contrib

    fat = _TableFun(father_tab, 0.0, step)
    mot = _TableFun(mother_tab, mother_lo, step)
    return WaveletPair(
        kind=f"daubechies-{n_moments}",
        filters=h,
        father=fat.value,
        mother=mot.value,
        father_deriv=fat.deriv,
        mother_deriv=mot.deriv,
        father_support=(0.0, float(n - 1)),
        mother_support=(mother_lo, n / 2.0),
        table_depth=depth,
    )


def pair_from_name(name: str) -> WaveletPair:
    """Look up a pair by config name: 'haar' or 'daubechies-N'."""
    name = name.strip().lower()
    if name == "haar":
        return haar_pair()
    if name.startswith("daubechies-"):
        return daubechies_pair(int(name.split("-", 1)[1]))
    raise SplineError(f"unknown wavelet pair {name!r}")


# ---------------------------------------------------------------------------
# trainable activation
# ---------------------------------------------------------------------------


def sparsity_mask(order: int, alpha: float) -> np.ndarray:
    """Coefficient mask: slots are (father, mother, N_1, ..., N_order);
    B-spline slots with index below ceil(alpha) are forced to zero."""
    floor = int(np.ceil(alpha))
    mask = np.ones(order + 2)
    for i in range(1, min(floor, order + 1)):
        mask[1 + i] = 0.0
    return mask


@dataclass
class SplineActivation:
    """Spline-plus-wavelet activation with trainable coefficients.

    ``beta`` has shape (order+2,) for a shared activation or
    (order+2, width) for per-neuron coefficients; slot 0 scales the father
    wavelet, slot 1 the mother, slot 2+i the B-spline N_{i+1}.
    """

    order: int
    alpha: float
    pair: WaveletPair
    beta: Tensor

    mask: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if self.order < 1:
            raise SplineError("activation order must be >= 1")
        if not (1.0 <= self.alpha <= self.order):
            raise SplineError(
                f"sparsity exponent must satisfy 1 <= alpha <= order, got {self.alpha}"
            )
        self.beta = as_tensor(self.beta)
        if self.beta.shape[0] != self.order + 2:
            raise SplineError(
                f"beta must have {self.order + 2} coefficient rows, got {self.beta.shape}"
            )
        self.mask = sparsity_mask(self.order, self.alpha)
        zeroed = self.beta.data[self.mask == 0.0]
        if zeroed.size and np.any(zeroed != 0.0):
            raise SplineError("sparsity floor violated: low-order B-spline slots nonzero")


def activation_basis(
    act: SplineActivation, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Basis values and derivatives at ``x``, stacked on a new last axis."""
    x = np.asarray(x, dtype=np.float64)
    vals = np.empty(x.shape + (act.order + 2,), dtype=np.float64)
    ders = np.empty_like(vals)
    vals[..., 0] = act.pair.father(x)
    ders[..., 0] = act.pair.father_deriv(x)
    vals[..., 1] = act.pair.mother(x)
    ders[..., 1] = act.pair.mother_deriv(x)
    bs, dbs = bspline_basis(act.order, x)
    vals[..., 2:] = bs
    ders[..., 2:] = dbs
    return vals, ders


def activation_eval(act: SplineActivation, x: Tensor) -> Tensor:
    """Evaluate the activation as a single tape node.

    With per-neuron coefficients (beta shape (order+2, W)) the last axis of
    ``x`` must have length W; a coefficient vector applies elementwise.
    """
    x = as_tensor(x)
    beta = act.beta
    basis, dbasis = activation_basis(act, x.data)
    per_neuron = beta.ndim == 2
    if per_neuron and x.data.shape[-1] != beta.shape[1]:
        raise SplineError(
            f"per-neuron beta expects last axis {beta.shape[1]}, got {x.data.shape}"
        )
    masked = beta.data * (act.mask[:, None] if per_neuron else act.mask)
    if per_neuron:
        out = np.einsum("...wk,kw->...w", basis, masked)
    else:
        out = basis @ masked

    def backward(g):
        if per_neuron:
            gx = g * np.einsum("...wk,kw->...w", dbasis, masked)
            w, k = beta.shape[1], beta.shape[0]
            flat_b = basis.reshape(-1, w, k)
            flat_g = g.reshape(-1, w)
            gb = np.einsum("nwk,nw->kw", flat_b, flat_g) * act.mask[:, None]
        else:
            gx = g * (dbasis @ masked)
            lead = basis.reshape(-1, basis.shape[-1])
            gb = lead.T @ g.reshape(-1) * act.mask
        return gx, gb

    return custom_op("spline_activation", (x, beta), out, backward)
