"""Supervised operator training and path-wise evaluation.

A model is trained to map the query slice (time plus frozen trailing
coordinates, laid out on the two-dimensional grid) to the solution values
on that grid.  Targets come from the closed-form benchmark families, so
training is plain mean-squared regression; the interesting part is reading
the trained operator back as a value function along simulated paths.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .adapter import DerivativeScheme, adapt, bsde_residual
from .autodiff import Tape, Tensor
from .benchmarks import LqSolution, PeriodicSolution, fbsde_generator
from .config import ExperimentConfig
from .kano import KanoModel, kano_forward, kano_init
from .sde import PathBundle, lq_coeffs, periodic_coeffs

__all__ = [
    "TrainingAbort",
    "Dataset",
    "TrainResult",
    "PathError",
    "RmsProp",
    "KanoValue",
    "solution_for",
    "coeffs_for",
    "model_from_config",
    "batch_inputs",
    "generate_dataset",
    "train",
    "path_u_error",
    "path_records",
]


class TrainingAbort(Exception):
    """Raised when the loss stops being finite.  Carries the offending step
    and the sampled query parameters for post-mortem inspection."""

    def __init__(self, step: int, params: np.ndarray, loss: float):
        self.step = step
        self.params = np.asarray(params)
        self.loss = loss
        rows = "; ".join(
            "(" + ", ".join(f"{v:.6g}" for v in row) + ")" for row in self.params
        )
        super().__init__(
            f"non-finite loss {loss!r} at step {step}; batch parameters: {rows}"
        )


@dataclass(frozen=True)
class Dataset:
    """Sampled query slices: ``params`` rows are (t, x_3, ..., x_d) and
    ``targets`` holds the closed-form solution on the matching grid."""

    params: np.ndarray  # [n, d-1]
    targets: np.ndarray  # [n, s, s]


@dataclass
class TrainResult:
    """Fitted model (parameters restored to the best recorded step) plus the
    per-step loss and learning-rate curves."""

    model: KanoModel
    losses: np.ndarray
    lrs: np.ndarray
    best_step: int
    best_loss: float

    @property
    def initial_loss(self) -> float:
        return float(self.losses[0])

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])


def solution_for(config: ExperimentConfig):
    if config.benchmark == "periodic":
        return PeriodicSolution(dim=config.dim, horizon=config.horizon)
    return LqSolution(
        dim=config.dim, horizon=config.horizon, n_riccati_steps=config.n_riccati
    )


def coeffs_for(config: ExperimentConfig):
    if config.benchmark == "periodic":
        return periodic_coeffs(config.dim)
    return lq_coeffs(config.dim)


def model_from_config(
    config: ExperimentConfig, rng: np.random.Generator | None = None
) -> KanoModel:
    if rng is None:
        rng = np.random.default_rng(config.seed)
    return kano_init(
        rng,
        dim=config.dim,
        size=config.size,
        width=config.width,
        depth=config.depth,
        modes=config.modes,
        pos_width=config.pos_width,
        order=config.order,
        alpha=config.alpha,
        pair=config.pair,
        wavelet_scale=config.wavelet_scale,
        spline_scale=config.spline_scale,
    )


def batch_inputs(params: np.ndarray, size: int, dim: int) -> np.ndarray:
    """Stack operator input fields for parameter rows [B, d-1]."""
    params = np.asarray(params, dtype=np.float64)
    b = params.shape[0]
    xs = np.linspace(0.0, 1.0, size)
    out = np.empty((b, size, size, dim + 1))
    out[..., 0] = params[:, 0, None, None]
    out[..., 1] = xs[None, :, None]
    out[..., 2] = xs[None, None, :]
    out[..., 3:] = params[:, None, None, 1:]
    return out


def _grid_points(params: np.ndarray, size: int, dim: int) -> np.ndarray:
    """Full d-dimensional grid coordinates [B, s, s, d] for parameter rows."""
    b = params.shape[0]
    xs = np.linspace(0.0, 1.0, size)
    pts = np.empty((b, size, size, dim))
    pts[..., 0] = xs[None, :, None]
    pts[..., 1] = xs[None, None, :]
    pts[..., 2:] = params[:, None, None, 1:]
    return pts


def generate_dataset(
    config: ExperimentConfig, solution=None, rng: np.random.Generator | None = None
) -> Dataset:
    """Uniform times and trailing coordinates with grid targets."""
    if solution is None:
        solution = solution_for(config)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n, d, s = config.n_samples, config.dim, config.size
    ts = rng.uniform(0.0, config.horizon, size=n)
    tail = rng.uniform(0.0, 1.0, size=(n, d - 2))
    params = np.column_stack([ts, tail])

    targets = np.empty((n, s, s))
    chunk = 256  # keeps the [chunk, s, s, d] coordinate block small
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        pts = _grid_points(params[lo:hi], s, d)
        targets[lo:hi] = solution.u(params[lo:hi, 0, None, None], pts)
    return Dataset(params=params, targets=targets)


class RmsProp:
    """Momentum-free adaptive steps from a running squared-gradient mean."""

    def __init__(self, params, lr: float = 1e-3, decay: float = 0.9,
                 eps: float = 1e-8):
        self.params: list[tuple[str, Tensor]] = list(params)
        self.lr = float(lr)
        self.decay = float(decay)
        self.eps = float(eps)
        self.cache = [np.zeros_like(p.data) for _, p in self.params]

    def zero(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for (_, p), ms in zip(self.params, self.cache):
            if p.grad is None:
                continue
            ms *= self.decay
            ms += (1.0 - self.decay) * p.grad**2
            p.data -= self.lr * p.grad / (np.sqrt(ms) + self.eps)


def train(
    config: ExperimentConfig,
    model: KanoModel | None = None,
    dataset: Dataset | None = None,
    log=None,
) -> TrainResult:
    """Mean-squared regression of grid fields with stepwise lr halving.

    The learning rate drops by half at one third and at two thirds of the
    step budget.  A non-finite loss aborts immediately with the batch that
    produced it.
    """
    solution = solution_for(config)
    if dataset is None:
        dataset = generate_dataset(config, solution)
    if model is None:
        model = model_from_config(config)
    opt = RmsProp(model.parameters(), lr=config.lr, decay=config.rms_decay)
    batch_rng = np.random.default_rng(config.seed + 1_000_003)
    drops = {config.steps // 3, (2 * config.steps) // 3}
    n = dataset.params.shape[0]

    losses = np.empty(config.steps)
    lrs = np.empty(config.steps)
    best_loss = np.inf
    best_step = -1
    best_state = None
    for step in range(config.steps):
        if step in drops and step > 0:
            opt.lr *= 0.5
        lrs[step] = opt.lr
        idx = batch_rng.integers(0, n, size=config.batch)
        phi = batch_inputs(dataset.params[idx], config.size, config.dim)
        target = dataset.targets[idx]
        with Tape() as tape:
            out = kano_forward(model, phi)
            diff = out - target[..., None]
            loss = ad.mean_all(diff * diff)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingAbort(step=step, params=dataset.params[idx], loss=value)
        if value < best_loss:
            # the batch loss was computed before this step's update, so the
            # snapshot pairs with the parameters that produced it
            best_loss = value
            best_step = step
            best_state = [p.data.copy() for _, p in opt.params]
        opt.zero()
        tape.backward(loss)
        opt.step()
        losses[step] = value
        if log is not None:
            log(step, value)
    for (_, p), data in zip(opt.params, best_state):
        p.data = data
    return TrainResult(
        model=model, losses=losses, lrs=lrs, best_step=best_step,
        best_loss=best_loss,
    )


def _bilinear_rows(fields: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Bilinear read of one point per field: fields [C, s, s], points [C, 2]."""
    s = fields.shape[-1]
    g = np.asarray(points, dtype=np.float64) * (s - 1)
    idx = np.clip(np.floor(g).astype(np.int64), 0, s - 2)
    frac = g - idx
    rows = np.arange(fields.shape[0])
    i0, j0 = idx[:, 0], idx[:, 1]
    fu, fv = frac[:, 0], frac[:, 1]
    f00 = fields[rows, i0, j0]
    f10 = fields[rows, i0 + 1, j0]
    f01 = fields[rows, i0, j0 + 1]
    f11 = fields[rows, i0 + 1, j0 + 1]
    return (
        (1 - fu) * (1 - fv) * f00
        + fu * (1 - fv) * f10
        + (1 - fu) * fv * f01
        + fu * fv * f11
    )


class KanoValue:
    """Value-function view of a trained model: batched ``u(t, x)``.

    Each query builds the input slice for its own (t, x_3..x_d), runs the
    model, and reads the output grid bilinearly at (x_1, x_2).  Queries are
    processed in chunks so arbitrarily large batches stay bounded in memory.

    ``wrap=True`` folds every coordinate into [0, 1) (for targets periodic
    on the unit cell); otherwise coordinates are clamped to the closed cube,
    which keeps finite-difference probes near the boundary in domain.
    """

    def __init__(self, model: KanoModel, wrap: bool = False, chunk: int = 64):
        self.model = model
        self.wrap = bool(wrap)
        self.chunk = int(chunk)

    def u(self, t, x) -> np.ndarray:
        x_arr = np.asarray(x, dtype=np.float64)
        d = self.model.dim
        if x_arr.shape[-1] != d:
            raise ValueError(f"expected points with {d} coordinates")
        lead = x_arr.shape[:-1]
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), lead)
        flat_x = x_arr.reshape(-1, d)
        flat_t = t_arr.reshape(-1)
        if self.wrap:
            flat_x = np.mod(flat_x, 1.0)
        else:
            flat_x = np.clip(flat_x, 0.0, 1.0)

        out = np.empty(flat_x.shape[0])
        s = self.model.size
        for lo in range(0, flat_x.shape[0], self.chunk):
            hi = min(lo + self.chunk, flat_x.shape[0])
            params = np.column_stack([flat_t[lo:hi], flat_x[lo:hi, 2:]])
            phi = batch_inputs(params, s, d)
            fields = kano_forward(self.model, phi).data[..., 0]
            out[lo:hi] = _bilinear_rows(fields, flat_x[lo:hi, :2])
        return out.reshape(lead)


@dataclass
class PathError:
    """Absolute value error along an ensemble, with a per-row validity mask
    (rows at or after a box exit are excluded)."""

    times: np.ndarray
    abs_err: np.ndarray  # [M, N+1]
    valid: np.ndarray  # [M, N+1] bool

    @property
    def mean_abs(self) -> float:
        count = max(int(self.valid.sum()), 1)
        return float(np.where(self.valid, self.abs_err, 0.0).sum() / count)

    def mean_abs_until(self, t_cut: float) -> float:
        keep = self.valid & (self.times[None, :] <= t_cut)
        count = max(int(keep.sum()), 1)
        return float(np.where(keep, self.abs_err, 0.0).sum() / count)


def path_u_error(
    value, solution, bundle: PathBundle, periodic: bool, domain=None
) -> PathError:
    """Compare a value function against the closed form along paths.

    Only ``u`` is queried, so this stays cheap for model-backed values.
    For non-periodic runs ``domain`` (lo, hi) marks rows outside the open
    box invalid from the first exit onward.
    """
    states = bundle.states
    m, np1, _ = states.shape
    t = np.broadcast_to(bundle.times, (m, np1))
    query = np.mod(states, 1.0) if periodic else states
    y_pred = np.asarray(value.u(t, query), dtype=np.float64)
    y_true = np.asarray(solution.u(t, states), dtype=np.float64)

    valid = np.ones((m, np1), dtype=bool)
    if not periodic and domain is not None:
        lo, hi = domain
        outside = np.any((states <= lo) | (states >= hi), axis=2)
        has_exit = outside.any(axis=1)
        first = np.where(has_exit, np.argmax(outside, axis=1), np1)
        valid = np.arange(np1)[None, :] < first[:, None]
    return PathError(times=bundle.times, abs_err=np.abs(y_pred - y_true), valid=valid)


def path_records(
    value,
    solution,
    coeffs,
    bundle: PathBundle,
    periodic: bool,
    scheme: DerivativeScheme,
) -> dict:
    """Full diagnostic tuple along an ensemble, one record per (path, step).

    The value function supplies Y by direct evaluation and Z / Upsilon per
    ``scheme`` (central differences for interpolated models, analytic when
    the value object carries closed-form derivatives); the benchmark
    solution supplies the reference tuple including the A contraction of
    third derivatives.  The per-step backward residual of the prediction is
    attached with NaN at the final row of each path, where it is undefined.
    """
    drift, diffusion = coeffs
    states = bundle.states
    m, np1, d = states.shape
    t = np.broadcast_to(bundle.times, (m, np1))

    query = np.mod(states, 1.0) if periodic else states
    qb = dataclasses.replace(bundle, states=query)
    tup_pred = adapt(value, qb, scheme)
    tup_true = adapt(
        solution, bundle, DerivativeScheme("analytic"), diffusion=diffusion,
        want_third=True,
    )
    valid_steps = None if periodic else bundle.exit_index
    report = bsde_residual(
        tup_pred,
        bundle,
        fbsde_generator(solution),
        diffusion,
        terminal=solution.terminal,
        valid_steps=valid_steps,
    )
    res = np.where(report.valid, report.residuals, np.nan)
    res = np.concatenate([res, np.full((m, 1), np.nan)], axis=1)

    diag_pred = np.einsum("...ii->...i", tup_pred.ups)
    diag_true = np.einsum("...ii->...i", tup_true.ups)
    path_col = np.repeat(np.arange(m), np1)
    step_col = np.tile(np.arange(np1), m)
    columns: list[tuple[str, np.ndarray]] = [
        ("path", path_col),
        ("n", step_col),
        ("t", t.reshape(-1)),
    ]
    for i in range(d):
        columns.append((f"X{i + 1}", states[..., i].reshape(-1)))
    columns.append(("Y_pred", tup_pred.y.reshape(-1)))
    columns.append(("Y_true", tup_true.y.reshape(-1)))
    for i in range(d):
        columns.append((f"Z_pred{i + 1}", tup_pred.z[..., i].reshape(-1)))
    for i in range(d):
        columns.append((f"Z_true{i + 1}", tup_true.z[..., i].reshape(-1)))
    for i in range(d):
        columns.append((f"Ups_pred{i + 1}", diag_pred[..., i].reshape(-1)))
    for i in range(d):
        columns.append((f"Ups_true{i + 1}", diag_true[..., i].reshape(-1)))
    for i in range(d):
        columns.append((f"A_true{i + 1}", tup_true.a[..., i].reshape(-1)))
    columns.append(("residual", res.reshape(-1)))

    err_rows = np.abs(tup_pred.y - tup_true.y)
    if periodic:
        row_valid = np.ones((m, np1), dtype=bool)
    else:
        row_valid = np.arange(np1)[None, :] < bundle.exit_index[:, None]
    count = max(int(row_valid.sum()), 1)

    def rel_l2(pred, true):
        keep = row_valid.reshape(row_valid.shape + (1,) * (pred.ndim - 2))
        diff = np.where(keep, pred - true, 0.0)
        ref = np.where(keep, true, 0.0)
        denom = np.sqrt(np.sum(ref**2))
        return float(np.sqrt(np.sum(diff**2)) / max(denom, 1e-300))

    summary = {
        "u_mean_abs_error": float(np.mean(err_rows)),
        "u_mean_abs_error_valid": float(np.where(row_valid, err_rows, 0.0).sum() / count),
        "rel_l2_u": rel_l2(tup_pred.y, tup_true.y),
        "rel_l2_z": rel_l2(tup_pred.z, tup_true.z),
        "rel_l2_ups": rel_l2(tup_pred.ups, tup_true.ups),
        "residual_mean_abs": report.mean_abs,
        "terminal_gap": report.terminal_gap,
    }
    return {"columns": columns, "summary": summary}
