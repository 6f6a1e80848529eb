"""Residual Kolmogorov-Arnold layers and exact product gadgets.

A layer computes ``sigma(x @ W + b) + gate * x`` where ``sigma`` is the
spline-plus-wavelet activation applied per output neuron and ``gate`` is the
diagonal of a rectangular residual matrix (off-diagonal entries are zero by
construction).  A network stacks layers and finishes with a plain affine
readout.

The module also carries the squared-ReLU machinery used by the unrolled
fixed-point operator: exact elementwise powers and exact d-ary products via
the polarization identity x*y = ((x+y)^2 - x^2 - y^2) / 2, with running
magnitude checks that mirror the gadget's bounded exactness region.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .splines import SplineActivation, WaveletPair, haar_pair, sparsity_mask

__all__ = [
    "GadgetDomainError",
    "ResKanLayer",
    "ResKanNet",
    "reskan_init",
    "reskan_forward",
    "requ_square",
    "exact_multiply",
    "requ_powers",
]


class GadgetDomainError(Exception):
    """Input or running product left the gadget's exactness cube."""


@dataclass
class ResKanLayer:
    """One residual spline layer; ``gate`` holds the diagonal residual."""

    weight: Tensor  # [d_in, d_out]
    bias: Tensor  # [d_out]
    activation: SplineActivation  # per-neuron beta [order+2, d_out]
    gate: Tensor  # [min(d_in, d_out)]

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def __post_init__(self) -> None:
        m = min(self.d_in, self.d_out)
        if self.gate.shape != (m,):
            raise ValueError(
                f"gate must hold the {m} diagonal entries, got shape {self.gate.shape}"
            )
        if self.bias.shape != (self.d_out,):
            raise ValueError(f"bias shape {self.bias.shape} != ({self.d_out},)")
        beta = self.activation.beta
        if beta.ndim != 2 or beta.shape[1] != self.d_out:
            raise ValueError("activation beta must be per-neuron with width d_out")

    def forward(self, x: Tensor) -> Tensor:
        from .splines import activation_eval

        z = ad.matmul(x, self.weight) + self.bias
        act = activation_eval(self.activation, z)
        m = min(self.d_in, self.d_out)
        res = x[..., :m] * self.gate
        if self.d_out > m:
            pad = Tensor(np.zeros(x.data.shape[:-1] + (self.d_out - m,)))
            res = ad.concat([res, pad], axis=-1)
        return act + res


@dataclass
class ResKanNet:
    """Stack of residual spline layers with an affine readout."""

    layers: list[ResKanLayer]
    out_weight: Tensor  # [d_last, d_out]
    out_bias: Tensor  # [d_out]

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in if self.layers else self.out_weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.out_weight.shape[1]

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x)
        return ad.matmul(x, self.out_weight) + self.out_bias

    def parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for i, layer in enumerate(self.layers):
            named.append((f"layer{i}.weight", layer.weight))
            named.append((f"layer{i}.bias", layer.bias))
            named.append((f"layer{i}.beta", layer.activation.beta))
            named.append((f"layer{i}.gate", layer.gate))
        named.append(("out.weight", self.out_weight))
        named.append(("out.bias", self.out_bias))
        return named


def reskan_init(
    rng: np.random.Generator,
    dims: Sequence[int],
    order: int = 4,
    alpha: float = 3.0,
    pair: WaveletPair | None = None,
    wavelet_scale: float = 0.1,
    spline_scale: float = 0.0,
) -> ResKanNet:
    """Build a network with dims = (d_in, hidden..., d_out).

    Wavelet coefficients start at N(0, wavelet_scale^2); B-spline slots start
    at ``spline_scale`` times a standard normal (zero by default), always
    respecting the sparsity floor.  The architecture requires alpha >= 3.
    """
    if len(dims) < 2:
        raise ValueError("dims needs at least input and output sizes")
    if alpha < 3.0:
        raise ValueError("network activations require alpha >= 3")
    pair = pair or haar_pair()
    mask = sparsity_mask(order, alpha)
    layers = []
    for d_in, d_out in zip(dims[:-2], dims[1:-1]):
        weight = Tensor(rng.normal(size=(d_in, d_out)) / np.sqrt(d_in), trainable=True)
        bias = Tensor(np.zeros(d_out), trainable=True)
        beta = np.zeros((order + 2, d_out))
        beta[0] = rng.normal(size=d_out) * wavelet_scale
        beta[1] = rng.normal(size=d_out) * wavelet_scale
        if spline_scale:
            beta[2:] = rng.normal(size=(order, d_out)) * spline_scale
        beta *= mask[:, None]
        act = SplineActivation(
            order=order, alpha=alpha, pair=pair, beta=Tensor(beta, trainable=True)
        )
        gate = Tensor(np.ones(min(d_in, d_out)), trainable=True)
        layers.append(ResKanLayer(weight=weight, bias=bias, activation=act, gate=gate))
    d_last, d_out = dims[-2], dims[-1]
    out_weight = Tensor(rng.normal(size=(d_last, d_out)) / np.sqrt(d_last), trainable=True)
    out_bias = Tensor(np.zeros(d_out), trainable=True)
    return ResKanNet(layers=layers, out_weight=out_weight, out_bias=out_bias)


def reskan_forward(net: ResKanNet, x: Tensor) -> Tensor:
    """Apply the network along the last axis of ``x``."""
    return net.forward(ad.as_tensor(x))


# ---------------------------------------------------------------------------
# squared-ReLU product gadgets
# ---------------------------------------------------------------------------


def requ_square(u):
    """u^2 as relu(u)^2 + relu(-u)^2, the gadget's only nonlinearity."""
    u = np.asarray(u, dtype=np.float64)
    return np.maximum(u, 0.0) ** 2 + np.maximum(-u, 0.0) ** 2


def _pair_product(a, b):
    return 0.5 * (requ_square(a + b) - requ_square(a) - requ_square(b))


def exact_multiply(values: Sequence, bound: float) -> np.ndarray:
    """d-ary product by cascaded polarization, exact on the cube [-bound, bound]^d.

    Every input must lie inside the cube and the running product at stage k
    must stay within bound**k; violations raise ``GadgetDomainError`` because
    the gadget's exactness region is a cube.
    """
    if len(values) == 0:
        raise GadgetDomainError("empty product")
    if bound <= 0.0:
        raise GadgetDomainError("bound must be positive")
    arrays = [np.asarray(v, dtype=np.float64) for v in values]
    for i, a in enumerate(arrays):
        if np.any(np.abs(a) > bound):
            raise GadgetDomainError(
                f"factor {i} leaves the cube [-{bound}, {bound}]"
            )
    running = arrays[0]
    for stage, a in enumerate(arrays[1:], start=2):
        running = _pair_product(running, a)
        if np.any(np.abs(running) > bound**stage * (1.0 + 1e-12)):
            raise GadgetDomainError(f"running product exceeds bound at stage {stage}")
    return running


def requ_powers(u, highest: int, bound: float | None = None) -> np.ndarray:
    """Stack (u, u^2, ..., u^highest) on a new last axis via pair products.

    With ``bound`` set, |u| is checked against the gadget cube first.
    """
    if highest < 1:
        raise GadgetDomainError("highest power must be >= 1")
    u = np.asarray(u, dtype=np.float64)
    if bound is not None and np.any(np.abs(u) > bound):
        raise GadgetDomainError(f"input leaves the cube [-{bound}, {bound}]")
    powers = [u]
    for _ in range(highest - 1):
        powers.append(_pair_product(powers[-1], u))
    return np.stack(powers, axis=-1)
