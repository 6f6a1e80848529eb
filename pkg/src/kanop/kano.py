"""Spectral Kolmogorov-Arnold operator on square grids.

A model maps an input field phi [B, s, s, d+1] (channels: time, the two
grid coordinates, and the remaining fixed coordinates of the query slice)
to a value field [B, s, s, 1].  Architecture:

    lift (pointwise Res-KAN, d+1 -> W)
    repeat L times:
        v_pos = positional encoder (Res-KAN on the grid coordinates)
        v_kf  = FFT -> retained corner modes -> per-mode complex channel
                mixing -> inverse FFT (real part)
        v     = mixer (pointwise Res-KAN on concat(v_pos, v_kf, v))
    projection (pointwise Res-KAN, W -> 1)

The grid is x_p = p/(s-1), p = 0..s-1, along both axes, so the field spans
the closed unit square and bilinear queries cover all of [0, 1]^2.  s must
be a power of two.

``picard_unrolled_operator`` is the classical counterpart expressed in the
same vocabulary: a fixed number of kernel-integral layers with exact
squared-ReLU power gadgets in place of the nonlinearity.  It gives an
independent numerical route to the same fixed point as the Picard solver.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ComplexGrid, Tensor
from .reskan import ResKanNet, requ_powers, reskan_init
from .splines import pair_from_name

__all__ = [
    "KanoError",
    "CheckpointError",
    "KanoBlock",
    "KanoModel",
    "kano_init",
    "kano_forward",
    "spectral_apply",
    "operator_input",
    "bilinear_field",
    "kano_query",
    "save_checkpoint",
    "load_checkpoint",
    "picard_unrolled_operator",
]


class KanoError(Exception):
    """Model construction or evaluation error."""


class CheckpointError(KanoError):
    """Checkpoint file does not match the expected layout."""


def _require_power_of_two(size: int) -> None:
    if size < 4 or (size & (size - 1)) != 0:
        raise KanoError(f"grid size must be a power of two >= 4, got {size}")


def corner_modes(size: int, modes: int) -> np.ndarray:
    """Flat indices (row-major over the two spatial axes) of the retained
    frequency pairs: both axis frequencies k satisfy min(k, s-k) < modes."""
    keep = [k for k in range(size) if min(k, size - k) < modes]
    return np.asarray([k1 * size + k2 for k1 in keep for k2 in keep], dtype=np.int64)


@dataclass
class KanoBlock:
    pos_net: ResKanNet
    wre: Tensor  # [K, W, W]
    wim: Tensor  # [K, W, W]
    mixer: ResKanNet


@dataclass
class KanoModel:
    dim: int
    size: int
    width: int
    modes: int
    pos_width: int
    order: int
    alpha: float
    pair_name: str
    lift: ResKanNet
    blocks: list[KanoBlock]
    proj: ResKanNet
    mode_index: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.mode_index is None:
            self.mode_index = corner_modes(self.size, self.modes)

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def coords(self) -> np.ndarray:
        xs = np.linspace(0.0, 1.0, self.size)
        out = np.empty((self.size, self.size, 2))
        out[..., 0] = xs[:, None]
        out[..., 1] = xs[None, :]
        return out

    def parameters(self) -> list[tuple[str, Tensor]]:
        named = [(f"lift.{n}", p) for n, p in self.lift.parameters()]
        for i, block in enumerate(self.blocks):
            named += [(f"block{i}.pos.{n}", p) for n, p in block.pos_net.parameters()]
            named.append((f"block{i}.wre", block.wre))
            named.append((f"block{i}.wim", block.wim))
            named += [(f"block{i}.mixer.{n}", p) for n, p in block.mixer.parameters()]
        named += [(f"proj.{n}", p) for n, p in self.proj.parameters()]
        return named

    def config(self) -> dict:
        return {
            "dim": self.dim,
            "size": self.size,
            "width": self.width,
            "depth": self.depth,
            "modes": self.modes,
            "pos_width": self.pos_width,
            "order": self.order,
            "alpha": self.alpha,
            "pair": self.pair_name,
        }


def kano_init(
    rng: np.random.Generator,
    dim: int,
    size: int,
    width: int = 32,
    depth: int = 4,
    modes: int = 12,
    pos_width: int = 8,
    order: int = 4,
    alpha: float = 3.0,
    pair: str = "haar",
    wavelet_scale: float = 0.1,
    spline_scale: float = 0.0,
) -> KanoModel:
    """Build a randomly initialized model."""
    _require_power_of_two(size)
    if dim < 2:
        raise KanoError("need at least the two grid dimensions")
    if not (1 <= modes <= size // 2):
        raise KanoError(f"modes must lie in [1, {size // 2}] for size {size}")
    wp = pair_from_name(pair)
    kan = dict(
        order=order, alpha=alpha, pair=wp,
        wavelet_scale=wavelet_scale, spline_scale=spline_scale,
    )
    lift = reskan_init(rng, (dim + 1, width, width), **kan)
    k = corner_modes(size, modes).size
    blocks = []
    for _ in range(depth):
        pos_net = reskan_init(rng, (2, pos_width, pos_width), **kan)
        wre = Tensor(rng.normal(size=(k, width, width)) / width, trainable=True)
        wim = Tensor(rng.normal(size=(k, width, width)) / width, trainable=True)
        mixer = reskan_init(rng, (pos_width + 2 * width, width, width), **kan)
        blocks.append(KanoBlock(pos_net=pos_net, wre=wre, wim=wim, mixer=mixer))
    proj = reskan_init(rng, (width, width, 1), **kan)
    return KanoModel(
        dim=dim, size=size, width=width, modes=modes, pos_width=pos_width,
        order=order, alpha=alpha, pair_name=pair,
        lift=lift, blocks=blocks, proj=proj,
    )


def spectral_apply(
    wre: Tensor, wim: Tensor, v: Tensor, size: int, mode_index: np.ndarray
) -> Tensor:
    """FFT -> retained modes -> complex channel mixing -> inverse FFT."""
    grid = ad.fft2_forward(v)
    lead = v.shape[:-3]
    flat = lead + (size * size, v.shape[-1])
    re = ad.reshape(grid.re, flat)
    im = ad.reshape(grid.im, flat)
    re_k = ad.take_nodes(re, mode_index)
    im_k = ad.take_nodes(im, mode_index)
    ore, oim = ad.mode_matmul(re_k, im_k, wre, wim)
    out_c = wre.shape[-1]
    sre = ad.scatter_nodes(ore, mode_index, size * size)
    sim = ad.scatter_nodes(oim, mode_index, size * size)
    back = lead + (size, size, out_c)
    return ad.fft2_inverse(ComplexGrid(re=ad.reshape(sre, back), im=ad.reshape(sim, back)))


def kano_forward(model: KanoModel, phi: np.ndarray) -> Tensor:
    """Apply the model to input fields [B, s, s, d+1] (or one unbatched)."""
    arr = np.asarray(phi, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise KanoError(f"expected [B, s, s, c] input, got shape {arr.shape}")
    b, s1, s2, c = arr.shape
    if (s1, s2) != (model.size, model.size):
        raise KanoError(
            f"field resolution {s1}x{s2} does not match model size {model.size}"
        )
    if c != model.dim + 1:
        raise KanoError(f"expected {model.dim + 1} channels, got {c}")

    v = model.lift.forward(ad.as_tensor(arr))
    for block in model.blocks:
        pos = block.pos_net.forward(ad.as_tensor(model.coords()))
        pos_b = ad.expand_leading(pos, b)
        spec = spectral_apply(block.wre, block.wim, v, model.size, model.mode_index)
        v = block.mixer.forward(ad.concat([pos_b, spec, v], axis=-1))
    return model.proj.forward(v)


def operator_input(t: float, tail, size: int, dim: int) -> np.ndarray:
    """Input field for the query slice at time ``t`` with the coordinates
    beyond the first two held at ``tail`` (length dim-2)."""
    tail = np.asarray(tail, dtype=np.float64).reshape(dim - 2)
    xs = np.linspace(0.0, 1.0, size)
    out = np.empty((size, size, dim + 1))
    out[..., 0] = t
    out[..., 1] = xs[:, None]
    out[..., 2] = xs[None, :]
    out[..., 3:] = tail
    return out


def bilinear_field(grid: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of [s, s] values at points [Q, 2] in [0,1]^2.

    The grid coordinate is p/(s-1); querying outside the closed unit square
    raises, because the field carries no information there.
    """
    grid = np.asarray(grid, dtype=np.float64)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if np.any(pts < -1e-12) or np.any(pts > 1.0 + 1e-12):
        raise KanoError("query point outside the unit square")
    s = grid.shape[0]
    f = np.clip(pts, 0.0, 1.0) * (s - 1)
    i0 = np.minimum(f.astype(np.int64), s - 2)
    frac = f - i0
    a, b = i0[:, 0], i0[:, 1]
    fa, fb = frac[:, 0], frac[:, 1]
    return (
        grid[a, b] * (1 - fa) * (1 - fb)
        + grid[a + 1, b] * fa * (1 - fb)
        + grid[a, b + 1] * (1 - fa) * fb
        + grid[a + 1, b + 1] * fa * fb
    )


def kano_query(model: KanoModel, phi: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate one input field and interpolate the output at grid points."""
    out = kano_forward(model, phi).data
    if out.shape[0] != 1:
        raise KanoError("kano_query expects a single field")
    return bilinear_field(out[0, ..., 0], points)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = "kanop checkpoint v1"


def save_checkpoint(path: str, model: KanoModel) -> None:
    """Text manifest (config + parameter names and shapes) followed by one
    flat little-endian float64 payload."""
    header = io.StringIO()
    header.write(_MAGIC + "\n")
    cfg = model.config()
    header.write("config " + " ".join(f"{k}={v}" for k, v in cfg.items()) + "\n")
    chunks = []
    for name, p in model.parameters():
        shape = " ".join(str(n) for n in p.data.shape)
        header.write(f"param {name} {shape}\n")
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    header.write("payload\n")
    with open(path, "wb") as fh:
        fh.write(header.getvalue().encode("ascii"))
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path: str) -> KanoModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    marker = b"\npayload\n"
    cut = blob.find(marker)
    if not blob.startswith(_MAGIC.encode("ascii")) or cut < 0:
        raise CheckpointError("not a checkpoint file")
    lines = blob[:cut].decode("ascii").splitlines()
    payload = blob[cut + len(marker):]

    cfg_line = lines[1] if len(lines) > 1 else ""
    if not cfg_line.startswith("config "):
        raise CheckpointError("missing config line")
    cfg = {}
    for item in cfg_line[len("config "):].split():
        key, val = item.split("=", 1)
        cfg[key] = val
    try:
        model = kano_init(
            np.random.default_rng(0),
            dim=int(cfg["dim"]), size=int(cfg["size"]), width=int(cfg["width"]),
            depth=int(cfg["depth"]), modes=int(cfg["modes"]),
            pos_width=int(cfg["pos_width"]), order=int(cfg["order"]),
            alpha=float(cfg["alpha"]), pair=cfg["pair"],
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"bad config line: {exc}") from exc

    manifest = []
    for line in lines[2:]:
        parts = line.split()
        if parts[0] != "param":
            raise CheckpointError(f"unexpected manifest line: {line!r}")
        manifest.append((parts[1], tuple(int(v) for v in parts[2:])))

    params = model.parameters()
    if [n for n, _ in params] != [n for n, _ in manifest]:
        raise CheckpointError("parameter names do not match this configuration")
    sizes = [int(np.prod(shape)) if shape else 1 for _, shape in manifest]
    expected = 8 * sum(sizes)
    if len(payload) != expected:
        raise CheckpointError(
            f"payload holds {len(payload)} bytes, manifest needs {expected}"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    pos = 0
    for (name, p), (mname, shape), size in zip(params, manifest, sizes):
        if p.data.shape != shape:
            raise CheckpointError(
                f"shape mismatch for {name}: file {shape}, model {p.data.shape}"
            )
        p.data = flat[pos:pos + size].reshape(shape).astype(np.float64)
        pos += size
    return model


# ---------------------------------------------------------------------------
# unrolled classical operator
# ---------------------------------------------------------------------------


def picard_unrolled_operator(
    kernels,
    weights,
    v_const: np.ndarray,
    depth: int,
    bound: float = 10.0,
) -> np.ndarray:
    """Fixed-depth unrolling of the classical iteration

        v_{j+1} = sum_h K_h (w_h * v_j^h) + v_const,   v_0 = 0,

    for a polynomial nonlinearity sum_h w_h(y) u^h.  ``kernels`` is one
    quadrature-weighted matrix [n, n] shared across powers, or a sequence
    with one matrix per power; ``weights`` is a sequence of coefficient
    fields [n] for powers h = 1..H.  Powers are formed with the exact
    squared-ReLU product gadget, which raises if an iterate leaves the
    cube of the given bound.
    """
    weights = [np.asarray(w, dtype=np.float64) for w in weights]
    v_const = np.asarray(v_const, dtype=np.float64)
    highest = len(weights)
    if highest == 0:
        raise KanoError("need at least the linear coefficient field")
    shared = isinstance(kernels, np.ndarray) and kernels.ndim == 2
    mats = None if shared else [np.asarray(k, dtype=np.float64) for k in kernels]
    if not shared and len(mats) != highest:
        raise KanoError("need one kernel per power")
    v = np.zeros_like(v_const)
    for _ in range(depth):
        powers = requ_powers(v, highest, bound=bound)
        if shared:
            density = sum(weights[h] * powers[..., h] for h in range(highest))
            v = kernels @ density + v_const
        else:
            acc = v_const.copy()
            for h in range(highest):
                acc = acc + mats[h] @ (weights[h] * powers[..., h])
            v = acc
    return v
