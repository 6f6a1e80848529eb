"""Command line front end.

Subcommands:
  train     fit an operator model to a benchmark family and checkpoint it
  evaluate  read a model (or the closed form) back along simulated paths
  simulate  write an Euler-Maruyama ensemble as CSV
  picard    run the classical fixed-point solver on the toy 1D instance
  riccati   tabulate the backward Riccati curve of the quadratic benchmark

Every CSV starts with ``# config <hash>`` and ``# seed <n>`` comment lines
followed by a header row; floats are printed with %.17g so identical runs
produce byte-identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import platform
import sys

import numpy as np

from . import __version__
from .adapter import DerivativeScheme
from .benchmarks import riccati_solve
from .config import ConfigError, parse_config, read_config_file
from .kano import CheckpointError, KanoError, load_checkpoint, save_checkpoint
from .picard import (
    ContractionError,
    PicardError,
    SemilinearProblem,
    apply_T,
    grid_norm,
    interval_kernel,
    picard_solve,
)
from .sde import SdeSpec, simulate
from .training import (
    KanoValue,
    TrainingAbort,
    coeffs_for,
    model_from_config,
    path_records,
    solution_for,
    train,
)

__all__ = ["main"]


def _fmt(value, integer: bool) -> str:
    if integer:
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(path: str, meta, columns) -> None:
    """Comment metadata, one header row, then %.17g data rows."""
    arrays = [np.asarray(data) for _, data in columns]
    ints = [np.issubdtype(a.dtype, np.integer) for a in arrays]
    with open(path, "w", newline="\n") as fh:
        for key, value in meta:
            fh.write(f"# {key} {value}\n")
        fh.write(",".join(name for name, _ in columns) + "\n")
        for i in range(len(arrays[0])):
            fh.write(",".join(_fmt(a[i], k) for a, k in zip(arrays, ints)) + "\n")


def options_digest(options: dict) -> str:
    lines = []
    for key in sorted(options):
        value = options[key]
        if isinstance(value, float):
            lines.append(f"{key}={value!r}")
        else:
            lines.append(f"{key}={value}")
    return hashlib.sha256("\n".join(lines).encode("ascii")).hexdigest()[:16]


def _add_config_option(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config-file",
        default=None,
        help="key=value text file with experiment settings",
    )
    parser.add_argument(
        "--config",
        metavar="KEY=VALUE",
        nargs="*",
        default=[],
        help="experiment settings; they override the file "
        "(see the configuration schema in the README)",
    )


def _run_config(args):
    pairs = []
    if args.config_file:
        pairs.extend(read_config_file(args.config_file))
    pairs.extend(args.config)
    return parse_config(pairs)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out_dir = args.out or cfg.out_dir or f"run-{cfg.digest()}"
    os.makedirs(out_dir, exist_ok=True)

    def log(step, value):
        if args.verbose and step % 50 == 0:
            print(f"step {step}: loss {value:.6f}", flush=True)

    try:
        result = train(cfg, log=log)
    except TrainingAbort as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1

    ckpt = os.path.join(out_dir, "model.ckpt")
    save_checkpoint(ckpt, result.model)
    meta = [("config", cfg.digest()), ("seed", cfg.seed)]
    write_csv(
        os.path.join(out_dir, "losses.csv"),
        meta,
        [
            ("step", np.arange(cfg.steps)),
            ("loss", result.losses),
            ("lr", result.lrs),
        ],
    )
    with open(os.path.join(out_dir, "manifest.txt"), "w", newline="\n") as fh:
        fh.write(cfg.canonical() + "\n")
        fh.write(f"digest={cfg.digest()}\n")
        fh.write(f"best_step={result.best_step}\n")
        fh.write(f"kanop_version={__version__}\n")
        fh.write(f"numpy_version={np.__version__}\n")
        fh.write(f"python_version={platform.python_version()}\n")
    print(
        f"trained {cfg.steps} steps: loss {result.initial_loss:.6f} -> "
        f"{result.final_loss:.6f} (best {result.best_loss:.6f} at step "
        f"{result.best_step}); checkpoint {ckpt}"
    )
    return 0


# ---------------------------------------------------------------------------
# evaluate / simulate
# ---------------------------------------------------------------------------


def _path_spec(cfg, n_steps: int) -> SdeSpec:
    drift, diffusion = coeffs_for(cfg)
    domain = None
    if cfg.benchmark == "lq":
        domain = (np.zeros(cfg.dim), np.ones(cfg.dim))
    return SdeSpec(
        dim=cfg.dim,
        drift=drift,
        diffusion=diffusion,
        x0=np.full(cfg.dim, 0.5),
        horizon=cfg.horizon,
        n_steps=n_steps,
        domain=domain,
    )


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    solution = solution_for(cfg)
    periodic = cfg.benchmark == "periodic"
    if args.oracle:
        # inject the closed form as the model, with analytic derivatives
        value = solution
        scheme = DerivativeScheme("analytic")
        fd_step = 0.0
        source = "oracle"
    else:
        if args.checkpoint:
            try:
                model = load_checkpoint(args.checkpoint)
            except OSError as exc:
                print(f"cannot read checkpoint: {exc}", file=sys.stderr)
                return 1
            source = "checkpoint"
        else:
            model = model_from_config(cfg)
            source = "untrained"
        if model.dim != cfg.dim:
            print(
                f"model dimension {model.dim} does not match configured "
                f"dim {cfg.dim}",
                file=sys.stderr,
            )
            return 1
        value = KanoValue(model, wrap=periodic)
        fd_step = (
            args.fd_step if args.fd_step is not None else 2.0 / (model.size - 1)
        )
        scheme = DerivativeScheme("central", fd_step)

    spec = _path_spec(cfg, args.path_steps)
    bundle = simulate(spec, args.paths, seed=cfg.seed)
    records = path_records(
        value, solution, coeffs_for(cfg), bundle, periodic, scheme
    )
    digest = options_digest(
        {
            "experiment": cfg.digest(),
            "paths": args.paths,
            "path_steps": args.path_steps,
            "fd_step": fd_step,
            "source": source,
        }
    )
    s = records["summary"]
    meta = [("config", digest), ("seed", cfg.seed)]
    for key in ("rel_l2_u", "rel_l2_z", "rel_l2_ups"):
        meta.append((key, format(s[key], ".17g")))
    write_csv(args.out, meta, records["columns"])
    print(
        f"{args.paths} paths x {args.path_steps} steps ({source}): "
        f"rel L2 u {s['rel_l2_u']:.3e}, Z {s['rel_l2_z']:.3e}, "
        f"Ups {s['rel_l2_ups']:.3e}, residual {s['residual_mean_abs']:.6f}, "
        f"terminal gap {s['terminal_gap']:.6f} -> {args.out}"
    )
    return 0


def cmd_simulate(args) -> int:
    cfg = _run_config(args)
    spec = _path_spec(cfg, args.path_steps)
    bundle = simulate(spec, args.paths, seed=cfg.seed)
    m, np1, d = bundle.states.shape

    if spec.domain is None:
        flag = np.zeros((m, np1), dtype=np.int64)
    else:
        lo, hi = spec.domain
        outside = np.any(
            (bundle.states <= lo) | (bundle.states >= hi), axis=2
        )
        flag = np.maximum.accumulate(outside.astype(np.int64), axis=1)

    columns = [
        ("path", np.repeat(np.arange(m), np1)),
        ("n", np.tile(np.arange(np1), m)),
        ("t", np.broadcast_to(bundle.times, (m, np1)).reshape(-1)),
    ]
    for i in range(d):
        columns.append((f"X{i + 1}", bundle.states[..., i].reshape(-1)))
    columns.append(("exit_flag", flag.reshape(-1)))

    digest = options_digest(
        {
            "experiment": cfg.digest(),
            "paths": args.paths,
            "path_steps": args.path_steps,
        }
    )
    write_csv(args.out, [("config", digest), ("seed", cfg.seed)], columns)
    exited = int(flag[:, -1].sum())
    print(f"{m} paths x {args.path_steps} steps -> {args.out} ({exited} exited)")
    return 0


# ---------------------------------------------------------------------------
# picard / riccati
# ---------------------------------------------------------------------------


def cmd_picard(args) -> int:
    kernel = interval_kernel(args.nodes)
    f0 = np.full(kernel.n_nodes, args.forcing)
    problem = SemilinearProblem(
        kernel,
        fnl=lambda y, u: args.scale * u * u,
        f0=f0,
        wg=np.zeros(kernel.n_nodes),
        delta=args.delta,
    )
    rng = np.random.default_rng(args.seed)
    try:
        state = picard_solve(problem, eps=args.eps, rng=rng)
    except (ContractionError, PicardError) as exc:
        print(f"picard failed: {exc}", file=sys.stderr)
        return 1

    # rebuild the iterate table to attach a residual to every step
    residuals = []
    u = np.zeros(kernel.n_nodes)
    for _ in state.step_norms:
        u = apply_T(problem, u)
        residuals.append(grid_norm(kernel, apply_T(problem, u) - u))
    ratios = [np.nan] + state.ratios

    digest = options_digest(
        {
            "nodes": args.nodes,
            "eps": args.eps,
            "delta": args.delta,
            "scale": args.scale,
            "forcing": args.forcing,
        }
    )
    write_csv(
        args.out,
        [("config", digest), ("seed", args.seed)],
        [
            ("j", np.arange(1, state.iterations + 1)),
            ("step_norm", np.asarray(state.step_norms)),
            ("ratio", np.asarray(ratios)),
            ("residual", np.asarray(residuals)),
        ],
    )
    print(
        f"rho {state.rho:.4f}, {state.iterations} iterations, "
        f"residual {state.residual:.3e} -> {args.out}"
    )
    return 0


def cmd_riccati(args) -> int:
    curve = riccati_solve(args.dim, horizon=args.horizon, n_steps=args.steps)
    keep = slice(None, None, args.every)
    digest = options_digest(
        {
            "dim": args.dim,
            "horizon": args.horizon,
            "steps": args.steps,
            "every": args.every,
        }
    )
    write_csv(
        args.out,
        [("config", digest), ("seed", 0)],
        [("t", curve.ts[keep]), ("k", curve.ks[keep]), ("kdot", curve.kdots[keep])],
    )
    print(
        f"k({args.horizon}) = {curve.ks[-1]:.6f}, k(0) = {curve.ks[0]:.6f} "
        f"-> {args.out}"
    )
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kanop", description="operator-learning experiment runner"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write a checkpoint")
    _add_config_option(p)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--verbose", action="store_true", help="print progress")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="score a model along simulated paths")
    _add_config_option(p)
    p.add_argument("--checkpoint", default=None, help="trained model file")
    p.add_argument(
        "--oracle",
        action="store_true",
        help="score the closed form itself (analytic derivatives)",
    )
    p.add_argument("--paths", type=int, default=8)
    p.add_argument("--path-steps", type=int, default=16)
    p.add_argument(
        "--fd-step",
        type=float,
        default=None,
        help="central-difference step (default: two grid cells)",
    )
    p.add_argument("--out", default="evaluate.csv")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("simulate", help="write an ensemble of forward paths")
    _add_config_option(p)
    p.add_argument("--paths", type=int, default=64)
    p.add_argument("--path-steps", type=int, default=32)
    p.add_argument("--out", default="paths.csv")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("picard", help="run the 1D fixed-point oracle")
    p.add_argument("--nodes", type=int, default=129)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--delta", type=float, default=0.4)
    p.add_argument("--scale", type=float, default=1.0, help="u^2 coefficient")
    p.add_argument("--forcing", type=float, default=-0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="picard.csv")
    p.set_defaults(handler=cmd_picard)

    p = sub.add_parser("riccati", help="tabulate the backward Riccati curve")
    p.add_argument("--dim", type=int, default=5)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--every", type=int, default=1, help="write every n-th row")
    p.add_argument("--out", default="riccati.csv")
    p.set_defaults(handler=cmd_riccati)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigError, KanoError, CheckpointError, PicardError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
